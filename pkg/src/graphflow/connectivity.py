"""Classical node/edge connectivity measures.

Degree, eigenvector, betweenness, and closeness centrality score nodes;
the two discrete curvatures score edges and can be folded down to nodes
with :func:`edge_scores_to_node`.  Everything is exact (no sampling), so
the expensive measures accept a cooperative deadline used by the CLI to
report out-of-time rows instead of hanging.
"""

import time
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .graphs import EmptyGraphError, Graph

__all__ = [
    "NodeScores",
    "EdgeScores",
    "NoConvergence",
    "MeasureTimeout",
    "degree_centrality",
    "eigenvector_centrality",
    "betweenness_centrality",
    "closeness_centrality",
    "forman_ricci",
    "ollivier_ricci",
    "edge_scores_to_node",
]


class NoConvergence(UserWarning):
    """Power iteration hit max_iter before meeting the tolerance."""


class MeasureTimeout(RuntimeError):
    """A cooperative deadline expired while computing a measure."""


@dataclass
class NodeScores:
    values: np.ndarray
    measure_tag: str
    warning: str | None = None


@dataclass
class EdgeScores:
    """Scores aligned with the canonical edge list of the scored graph."""

    values: np.ndarray
    measure_tag: str


def _check_deadline(deadline):
    if deadline is not None and time.monotonic() > deadline:
        raise MeasureTimeout("measure computation exceeded its time budget")


def degree_centrality(g: Graph) -> NodeScores:
    return NodeScores(g.degrees.astype(np.float64), "dc")


def eigenvector_centrality(g: Graph, tol: float = 1e-12, max_iter: int = 1000,
                           deadline=None) -> NodeScores:
    """Dominant eigenvector of the adjacency matrix by power iteration.

    Iterates on A + I (same eigenvectors; the shift keeps bipartite graphs
    from oscillating) with L2 normalization, stopping once the successive
    iterates differ by less than ``tol`` in the max norm.  Isolated nodes
    score exactly 0.
    """
    if g.num_edges == 0:
        raise EmptyGraphError("eigenvector centrality needs at least one edge")
    a = g.adjacency
    x = (g.degrees > 0).astype(np.float64)
    x /= np.linalg.norm(x)
    warning = None
    for _ in range(max_iter):
        _check_deadline(deadline)
        x_new = x + a @ x
        x_new /= np.linalg.norm(x_new)
        gap = np.abs(x_new - x).max()
        x = x_new
        if gap < tol:
            break
    else:
        warnings.warn("power iteration did not converge", NoConvergence)
        warning = "no_convergence"
    return NodeScores(x, "ec", warning=warning)


def betweenness_centrality(g: Graph, deadline=None) -> NodeScores:
    """Exact Brandes betweenness; each unordered pair counted once."""
    n = g.num_nodes
    offsets, targets = g.csr_offsets, g.csr_targets
    bc = np.zeros(n, dtype=np.float64)
    for s in range(n):
        _check_deadline(deadline)
        dist = np.full(n, -1, dtype=np.int64)
        sigma = np.zeros(n, dtype=np.float64)
        dist[s] = 0
        sigma[s] = 1.0
        order = []
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            dv = dist[v]
            for w in targets[offsets[v]:offsets[v + 1]]:
                if dist[w] < 0:
                    dist[w] = dv + 1
                    queue.append(w)
                if dist[w] == dv + 1:
                    sigma[w] += sigma[v]
        delta = np.zeros(n, dtype=np.float64)
        for w in reversed(order):
            coeff = (1.0 + delta[w]) / sigma[w]
            dw = dist[w]
            for v in targets[offsets[w]:offsets[w + 1]]:
                if dist[v] == dw - 1:
                    delta[v] += sigma[v] * coeff
            if w != s:
                bc[w] += delta[w]
    return NodeScores(bc / 2.0, "bc")


def _bfs_hops(g: Graph, src: int) -> np.ndarray:
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[src] = 0
    queue = deque([src])
    offsets, targets = g.csr_offsets, g.csr_targets
    while queue:
        v = queue.popleft()
        for w in targets[offsets[v]:offsets[v + 1]]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def closeness_centrality(g: Graph, deadline=None) -> NodeScores:
    """(reachable - 1) / sum of BFS distances within the node's component."""
    n = g.num_nodes
    cc = np.zeros(n, dtype=np.float64)
    for s in range(n):
        _check_deadline(deadline)
        dist = _bfs_hops(g, s)
        reached = dist >= 0
        total = int(dist[reached].sum())
        n_reach = int(reached.sum())
        if n_reach > 1:
            cc[s] = (n_reach - 1) / total
    return NodeScores(cc, "cc")


def forman_ricci(g: Graph) -> EdgeScores:
    """Augmented Forman curvature 4 - deg(u) - deg(v) + 3 * triangles(u, v)."""
    e = g.edge_list
    deg = g.degrees
    if len(e) == 0:
        return EdgeScores(np.empty(0, dtype=np.float64), "fc")
    tri = np.fromiter(
        (len(np.intersect1d(g.neighbors(u), g.neighbors(v), assume_unique=True))
         for u, v in e),
        count=len(e), dtype=np.int64)
    vals = 4.0 - deg[e[:, 0]] - deg[e[:, 1]] + 3.0 * tri
    return EdgeScores(vals.astype(np.float64), "fc")


def _lazy_walk(g: Graph, u: int, alpha: float):
    """Support atoms and masses of alpha * delta_u + (1 - alpha) * uniform(N(u))."""
    nbr = g.neighbors(u)
    atoms = np.concatenate([[u], nbr]).astype(np.int64)
    mass = np.concatenate([[alpha], np.full(len(nbr), (1.0 - alpha) / len(nbr))])
    keep = mass > 0.0
    return atoms[keep], mass[keep]


def _exact_w1(mu: np.ndarray, nu: np.ndarray, cost: np.ndarray) -> float:
    """Exact W1 between two finite measures via the transport LP."""
    m, n = cost.shape
    rows, cols, data = [], [], []
    for i in range(m):
        rows.extend([i] * n)
        cols.extend(range(i * n, (i + 1) * n))
        data.extend([1.0] * n)
    for j in range(n):
        rows.extend([m + j] * m)
        cols.extend(range(j, m * n, n))
        data.extend([1.0] * m)
    a_eq = sp.csr_matrix((data, (rows, cols)), shape=(m + n, m * n))
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=np.concatenate([mu, nu]),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def ollivier_ricci(g: Graph, alpha: float = 0.0, deadline=None) -> EdgeScores:
    """Ollivier curvature 1 - W1(m_u, m_v) per edge, hop-distance ground metric.

    ``m_u`` is the lazy walk alpha * delta_u + (1 - alpha) * uniform(N(u));
    W1 is solved exactly on the support pair.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    hops: dict[int, np.ndarray] = {}

    def hops_from(src: int) -> np.ndarray:
        if src not in hops:
            hops[src] = _bfs_hops(g, src)
        return hops[src]

    vals = np.empty(g.num_edges, dtype=np.float64)
    for idx, (u, v) in enumerate(g.edge_list):
        _check_deadline(deadline)
        atoms_u, mass_u = _lazy_walk(g, int(u), alpha)
        atoms_v, mass_v = _lazy_walk(g, int(v), alpha)
        cost = np.empty((len(atoms_u), len(atoms_v)), dtype=np.float64)
        for i, a in enumerate(atoms_u):
            cost[i] = hops_from(int(a))[atoms_v]
        vals[idx] = 1.0 - _exact_w1(mass_u, mass_v, cost)
    return EdgeScores(vals, "rc")


def edge_scores_to_node(g: Graph, scores: EdgeScores, mode: str = "min") -> NodeScores:
    """Fold per-edge scores onto nodes by min or mean over incident edges.

    Isolated nodes get the maximum finite node value so they are never the
    ones selected for removal.
    """
    if mode not in ("min", "mean"):
        raise ValueError(f"unknown mode {mode!r}")
    e = g.edge_list
    n = g.num_nodes
    if mode == "min":
        out = np.full(n, np.inf)
        np.minimum.at(out, e[:, 0], scores.values)
        np.minimum.at(out, e[:, 1], scores.values)
    else:
        out = np.zeros(n, dtype=np.float64)
        np.add.at(out, e[:, 0], scores.values)
        np.add.at(out, e[:, 1], scores.values)
        deg = g.degrees
        out[deg > 0] /= deg[deg > 0]
        out[deg == 0] = np.inf
    isolated = g.degrees == 0
    finite = out[~isolated]
    out[isolated] = finite.max() if len(finite) else 0.0
    return NodeScores(out, scores.measure_tag)
