"""Score-guided edge filtering, graph condensation, and homophily reports.

Edges are keyed by the minimum of their endpoint scores: an edge touching
any low-scored node is suspect.  Filtering removes the k lowest-keyed
edges; condensation builds a complete graph over the q highest-scored
nodes to reintroduce long-range interactions.  All tie-breaking is
lexicographic so runs are bit-reproducible.
"""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import connectivity as conn
from . import flow
from .connectivity import NodeScores
from .graphs import (Graph, build_graph, connected_components,
                     mean_edge_homophily, remove_edges)

__all__ = [
    "BudgetExceedsEdges",
    "FilterReport",
    "edge_filter",
    "edge_filter_by_edge_scores",
    "filter_for_measure",
    "heterophilic_condensation",
    "measure_node_scores",
    "baseline_rewire",
    "homophily_shift_report",
    "MEASURES",
]

MEASURES = ("dc", "ec", "bc", "cc", "fc", "rc", "ifs")


class BudgetExceedsEdges(ValueError):
    """Asked to remove more edges than the graph has."""


@dataclass
class FilterReport:
    measure_tag: str
    stage: str                                # filter | condense
    removed_edges: list
    homophily_before: float | None
    homophily_after: float | None
    delta_pct: float | None
    components_before: int
    components_after: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _filter_by_keys(g: Graph, key: np.ndarray, k: int):
    if k > g.num_edges:
        raise BudgetExceedsEdges(f"k={k} exceeds {g.num_edges} edges")
    if k == 0:
        return g, []
    e = g.edge_list
    order = np.lexsort((e[:, 1], e[:, 0], key))
    doomed = e[order[:k]]
    return remove_edges(g, doomed), [(int(u), int(v)) for u, v in doomed]


def edge_filter(g: Graph, node_scores: NodeScores, k: int):
    """Remove the k edges with the lowest min-endpoint score.

    Ties are broken by (key, u, v) ascending.  Returns the filtered graph
    and the removed edges in removal order.
    """
    e = g.edge_list
    vals = node_scores.values
    key = np.minimum(vals[e[:, 0]], vals[e[:, 1]]) if len(e) else np.empty(0)
    return _filter_by_keys(g, key, k)


def edge_filter_by_edge_scores(g: Graph, edge_scores, k: int):
    """Remove the k lowest-scored edges of an edge-native measure.

    Folding curvatures onto nodes first and taking min-endpoint keys makes
    every edge of a curvature minimizer tie with the minimizer itself, so
    lexicographic tie-breaking would remove an arbitrary incident edge
    instead of the flagged one; keying by the native edge score keeps the
    removal aligned with the measure.
    """
    return _filter_by_keys(g, np.asarray(edge_scores.values, dtype=np.float64), k)


def heterophilic_condensation(g: Graph, node_scores: NodeScores, q: int):
    """Complete graph over the q highest-scored nodes (ties: lowest id first).

    Returns the condensed graph (local ids 0..q-1) and the node map from
    local id to original id.
    """
    if not 1 <= q <= g.num_nodes:
        raise ValueError(f"q={q} outside [1, {g.num_nodes}]")
    order = np.lexsort((np.arange(g.num_nodes), -node_scores.values))
    selected = order[:q]
    pairs = [(i, j) for i in range(q) for j in range(i + 1, q)]
    return build_graph(q, pairs), [int(u) for u in selected]


def measure_node_scores(g: Graph, x: np.ndarray | None, measure: str, *,
                        alpha: float = 0.0, layers: int = 3,
                        spec: flow.AggregationSpec | None = None,
                        params: flow.ScoreParams | None = None,
                        deadline=None) -> NodeScores:
    """Node scores for any supported measure tag.

    Edge-native curvatures are folded to nodes with min aggregation; the
    flow score runs a plain (no-removal) scoring pass over ``layers``
    layers and needs features ``x``.
    """
    if measure == "dc":
        return conn.degree_centrality(g)
    if measure == "ec":
        return conn.eigenvector_centrality(g, deadline=deadline)
    if measure == "bc":
        return conn.betweenness_centrality(g, deadline=deadline)
    if measure == "cc":
        return conn.closeness_centrality(g, deadline=deadline)
    if measure == "fc":
        return conn.edge_scores_to_node(g, conn.forman_ricci(g), "min")
    if measure == "rc":
        return conn.edge_scores_to_node(
            g, conn.ollivier_ricci(g, alpha, deadline=deadline), "min")
    if measure == "ifs":
        if x is None:
            raise ValueError("the flow score needs node features")
        spec = spec or flow.AggregationSpec()
        params = params or flow.ScoreParams()
        _, _, scores, _ = flow.ifc_forward(
            g, x, spec, params, flow.ScheduleK("constant", 0.0, layers))
        return scores
    raise ValueError(f"unknown measure {measure!r}")


def _report(measure: str, stage: str, removed, before, after, comp_before,
            comp_after) -> FilterReport:
    delta = None
    if before is not None and after is not None and before != 0:
        delta = 100.0 * (after - before) / before
    return FilterReport(measure, stage, removed, before, after, delta,
                        comp_before, comp_after)


def filter_for_measure(g: Graph, x, measure: str, k: int, *, alpha, layers,
                       deadline, params=None):
    """Filter by native edge scores for curvatures, min-endpoint otherwise."""
    if measure == "fc":
        return edge_filter_by_edge_scores(g, conn.forman_ricci(g), k)
    if measure == "rc":
        return edge_filter_by_edge_scores(
            g, conn.ollivier_ricci(g, alpha, deadline=deadline), k)
    scores = measure_node_scores(g, x, measure, alpha=alpha, layers=layers,
                                 params=params, deadline=deadline)
    return edge_filter(g, scores, k)


def baseline_rewire(g: Graph, x: np.ndarray | None, measure: str, k: int,
                    labels: np.ndarray | None = None, *,
                    alpha: float = 0.0, layers: int = 3,
                    params: flow.ScoreParams | None = None,
                    deadline=None):
    """One-shot rewiring: compute a measure once, filter once, report.

    Homophily figures are filled in only when labels are given.
    """
    filtered, removed = filter_for_measure(g, x, measure, k, alpha=alpha,
                                           layers=layers, params=params,
                                           deadline=deadline)
    before = after = None
    if labels is not None and x is not None:
        before = mean_edge_homophily(g, x, labels)
        after = mean_edge_homophily(filtered, x, labels)
    report = _report(measure, "filter", removed, before, after,
                     int(connected_components(g).max()) + 1 if g.num_nodes else 0,
                     int(connected_components(filtered).max()) + 1 if g.num_nodes else 0)
    return filtered, report


def homophily_shift_report(g: Graph, x: np.ndarray, labels: np.ndarray,
                           measure: str, k_filter: int, q_condense: int, *,
                           alpha: float = 0.0, layers: int = 3,
                           params: flow.ScoreParams | None = None,
                           deadline=None):
    """Homophily before/after filtering and after condensation.

    Returns a (filter, condense) pair of reports; both compare against the
    original graph's mean edge homophily.
    """
    scores = measure_node_scores(g, x, measure, alpha=alpha, layers=layers,
                                 params=params, deadline=deadline)
    before = mean_edge_homophily(g, x, labels)
    comp_before = int(connected_components(g).max()) + 1

    filtered, removed = filter_for_measure(g, x, measure, k_filter, alpha=alpha,
                                           layers=layers, params=params,
                                           deadline=deadline)
    after_filter = mean_edge_homophily(filtered, x, labels)
    filter_report = _report(measure, "filter", removed, before, after_filter,
                            comp_before,
                            int(connected_components(filtered).max()) + 1)

    condensed, node_map = heterophilic_condensation(g, scores, q_condense)
    if condensed.num_edges:
        sel = np.asarray(node_map)
        after_cond = mean_edge_homophily(condensed, x[sel], labels[sel])
    else:
        after_cond = None
    condense_report = _report(measure, "condense", [], before, after_cond,
                              comp_before,
                              int(connected_components(condensed).max()) + 1)
    return filter_report, condense_report
