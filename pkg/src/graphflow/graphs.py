"""Immutable CSR graphs plus label/feature homophily metrics.

Graphs are undirected, unweighted, and self-loop free.  Every graph keeps a
canonical edge list (u < v, lexicographically sorted) next to symmetric CSR
arrays with ascending neighbor lists, so traversals and reductions are
deterministic by construction.  Editing is mutation-by-rebuild: operations
return new graphs and never touch their inputs.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Graph",
    "SelfLoopError",
    "EmptyGraphError",
    "ZeroNormFeatureError",
    "build_graph",
    "remove_edges",
    "connected_components",
    "node_homophily",
    "graph_homophily",
    "edge_homophily_rate",
    "mean_edge_homophily",
]


class SelfLoopError(ValueError):
    """An input edge connects a node to itself."""


class EmptyGraphError(ValueError):
    """The operation needs at least one edge / non-isolated node."""


class ZeroNormFeatureError(ValueError):
    """Cosine similarity is undefined for an all-zero feature row."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph: symmetric CSR arrays plus a canonical edge list.

    ``csr_offsets`` has length ``num_nodes + 1``; ``csr_targets`` holds each
    undirected edge twice, with every neighbor list sorted ascending.
    ``edge_list`` is an ``(m, 2)`` int array with ``u < v`` per row, sorted
    lexicographically.
    """

    num_nodes: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    edge_list: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.edge_list)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def degree(self, u: int) -> int:
        return int(self.csr_offsets[u + 1] - self.csr_offsets[u])

    def neighbors(self, u: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[u]:self.csr_offsets[u + 1]]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency as a scipy CSR matrix."""
        data = np.ones(len(self.csr_targets), dtype=np.float64)
        return sp.csr_matrix(
            (data, self.csr_targets, self.csr_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    @cached_property
    def _edge_keys(self) -> np.ndarray:
        # flat keys u * n + v of the canonical edge list, ascending
        return self.edge_list[:, 0] * self.num_nodes + self.edge_list[:, 1]

    def has_edge(self, u: int, v: int) -> bool:
        if u == v:
            return False
        lo, hi = (u, v) if u < v else (v, u)
        key = lo * self.num_nodes + hi
        i = np.searchsorted(self._edge_keys, key)
        return i < len(self._edge_keys) and self._edge_keys[i] == key


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_graph(num_nodes: int, edges) -> Graph:
    """Build a canonical graph from any iterable of (u, v) pairs.

    Duplicate and reversed pairs are collapsed; self-loops raise
    ``SelfLoopError`` and out-of-range endpoints raise ``IndexError``.
    """
    if num_nodes < 0:
        raise ValueError("num_nodes must be non-negative")
    edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                       dtype=np.int64).reshape(-1, 2)
    if len(edges):
        if edges.min() < 0 or edges.max() >= num_nodes:
            raise IndexError(f"edge endpoint out of range for {num_nodes} nodes")
        if (edges[:, 0] == edges[:, 1]).any():
            raise SelfLoopError("self-loops are not allowed")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        canonical = np.unique(np.stack([lo, hi], axis=1), axis=0)
    else:
        canonical = np.empty((0, 2), dtype=np.int64)

    if len(canonical):
        both = np.concatenate([canonical, canonical[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        counts = np.bincount(both[:, 0], minlength=num_nodes)
        targets = both[:, 1].copy()
    else:
        counts = np.zeros(num_nodes, dtype=np.int64)
        targets = np.empty(0, dtype=np.int64)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Graph(num_nodes, _freeze(offsets), _freeze(targets), _freeze(canonical))


def remove_edges(g: Graph, doomed) -> Graph:
    """Return a new graph without the given edges; unknown pairs are ignored."""
    doomed = np.asarray(list(doomed) if not isinstance(doomed, np.ndarray) else doomed,
                        dtype=np.int64).reshape(-1, 2)
    if len(doomed) == 0:
        return g
    lo = np.minimum(doomed[:, 0], doomed[:, 1])
    hi = np.maximum(doomed[:, 0], doomed[:, 1])
    keys = lo * g.num_nodes + hi
    keep = ~np.isin(g._edge_keys, keys)
    return build_graph(g.num_nodes, g.edge_list[keep])


def connected_components(g: Graph) -> np.ndarray:
    """Component id per node, dense in [0, k).

    Ids are assigned in order of each component's smallest node id, so the
    labeling is independent of traversal details.
    """
    comp = np.full(g.num_nodes, -1, dtype=np.int64)
    next_id = 0
    for start in range(g.num_nodes):
        if comp[start] >= 0:
            continue
        comp[start] = next_id
        stack = [start]
        while stack:
            u = stack.pop()
            for v in g.neighbors(u):
                if comp[v] < 0:
                    comp[v] = next_id
                    stack.append(v)
        next_id += 1
    return comp


def node_homophily(g: Graph, labels: np.ndarray, u: int):
    """Fraction of u's neighbors sharing u's label; None when u is isolated."""
    nbr = g.neighbors(u)
    if len(nbr) == 0:
        return None
    labels = np.asarray(labels)
    return float(np.mean(labels[nbr] == labels[u]))


def graph_homophily(g: Graph, labels: np.ndarray) -> float:
    """Mean node homophily over non-isolated nodes."""
    active = np.nonzero(g.degrees > 0)[0]
    if len(active) == 0:
        raise EmptyGraphError("graph homophily needs at least one edge")
    labels = np.asarray(labels)
    return float(np.mean([node_homophily(g, labels, int(u)) for u in active]))


def _assert_edge(g: Graph, u: int, v: int) -> tuple[int, int]:
    lo, hi = (u, v) if u < v else (v, u)
    if not g.has_edge(lo, hi):
        raise ValueError(f"edge ({u}, {v}) not in graph")
    return lo, hi


def edge_homophily_rate(g: Graph, x: np.ndarray, labels: np.ndarray, edge) -> float:
    """0.5 * cosine(x_u, x_v) + 0.5 * [y_u == y_v], in [-0.5, 1]."""
    u, v = _assert_edge(g, int(edge[0]), int(edge[1]))
    xu, xv = x[u], x[v]
    nu, nv = np.linalg.norm(xu), np.linalg.norm(xv)
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormFeatureError(f"zero-norm feature row on edge ({u}, {v})")
    cos = float(np.dot(xu, xv) / (nu * nv))
    return 0.5 * cos + 0.5 * float(labels[u] == labels[v])


def mean_edge_homophily(g: Graph, x: np.ndarray, labels: np.ndarray):
    """Arithmetic mean of edge_homophily_rate over all edges; None if edgeless."""
    if g.num_edges == 0:
        return None
    e = g.edge_list
    x = np.asarray(x, dtype=np.float64)
    xu, xv = x[e[:, 0]], x[e[:, 1]]
    nu = np.linalg.norm(xu, axis=1)
    nv = np.linalg.norm(xv, axis=1)
    if (nu == 0.0).any() or (nv == 0.0).any():
        raise ZeroNormFeatureError("zero-norm feature row incident to an edge")
    cos = np.einsum("ij,ij->i", xu, xv) / (nu * nv)
    labels = np.asarray(labels)
    same = labels[e[:, 0]] == labels[e[:, 1]]
    return float(np.mean(0.5 * cos + 0.5 * same))
