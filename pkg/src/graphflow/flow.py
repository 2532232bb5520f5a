"""Message passing, per-node flow statistics, and score-guided filtering.

A layer transforms features, aggregates them over neighborhoods, and tracks
two streaming statistics per node: the running mean of the first delta
(distance between a node's pure-neighbor aggregate and its own transformed
vector, the "velocity" of aggregation) and the running variance of the
second delta (layer-to-layer change of the first delta, the
"acceleration").  The flow score

    S_u = (m * Var[second delta] + 1) / (l * mean[first delta] + 1)

is small exactly for nodes that sit next to bottlenecks (low variance) and
heterophilic neighborhoods (high mean).  :func:`ifc_forward` interleaves
message passing with removal of the lowest-scored edges on a per-layer
budget, and :func:`hill_ascent_theta` tunes the budget by greedy ascent on
the mean final score.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .connectivity import NodeScores
from .graphs import Graph

__all__ = [
    "AggregationSpec",
    "DeltaState",
    "ScoreParams",
    "ScheduleK",
    "LayerTrace",
    "ScheduleExceedsEdges",
    "welford_mean_update",
    "welford_var_update",
    "ema_update",
    "first_delta",
    "first_deltas",
    "second_delta",
    "ifs_score",
    "message_pass",
    "k_schedule",
    "budget_from_fraction",
    "ifc_forward",
    "hill_ascent_theta",
    "random_linear_weight",
    "gcn_adjacency",
    "dump_scores_csv",
]


class ScheduleExceedsEdges(UserWarning):
    """The cumulative removal schedule exceeds the available edges."""


@dataclass(frozen=True)
class AggregationSpec:
    """How one layer transforms and aggregates features.

    ``transform`` is the per-node map applied before aggregation: identity,
    ``linear`` (* ``weight``), or ``gcn_normalized`` which additionally
    switches the aggregation to the symmetric normalized adjacency with
    self-connections.  ``combine`` (sum/mean) and ``include_self`` govern
    the plain aggregation modes; ``activation`` is applied elementwise to
    the aggregate.
    """

    combine: str = "mean"          # sum | mean
    transform: str = "identity"    # identity | linear | gcn_normalized
    weight: np.ndarray | None = None
    include_self: bool = True
    activation: str = "identity"   # identity | relu

    def __post_init__(self):
        if self.combine not in ("sum", "mean"):
            raise ValueError(f"unknown combine {self.combine!r}")
        if self.transform not in ("identity", "linear", "gcn_normalized"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.activation not in ("identity", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.transform == "linear" and self.weight is None:
            raise ValueError("linear transform requires a weight matrix")


@dataclass(frozen=True)
class ScoreParams:
    """Score multipliers and the streaming-estimator choice."""

    l: float = 1.0
    m: float = 1.0
    estimator: str = "welford"     # welford | ema
    ema_decay: float = 0.3
    distance: str = "euclidean"

    def __post_init__(self):
        if self.l < 0 or self.m < 0:
            raise ValueError("multipliers must be non-negative")
        if self.estimator not in ("welford", "ema"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not 0.0 < self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in (0, 1]")
        if self.distance != "euclidean":
            raise ValueError("only euclidean distance is supported")


@dataclass(frozen=True)
class ScheduleK:
    """Per-layer edge-removal budget K(t, theta), in absolute edge counts."""

    shape: str = "constant"        # constant | linear
    theta: float = 0.0
    num_layers: int = 1

    def __post_init__(self):
        if self.shape not in ("constant", "linear"):
            raise ValueError(f"unknown schedule shape {self.shape!r}")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if self.num_layers < 1:
            raise ValueError("num_layers must be at least 1")


def welford_mean_update(mu_prev, x, n):
    """Streaming mean after the n-th observation x."""
    return mu_prev + (x - mu_prev) / n


def welford_var_update(var_prev, mu_prev, mu_new, x, n):
    """Streaming population variance after the n-th observation x."""
    return var_prev + ((x - mu_prev) * (x - mu_new) - var_prev) / n


def ema_update(stat_prev, x, decay):
    """Exponential moving average with weight ``decay`` on the new point."""
    return (1.0 - decay) * stat_prev + decay * x


@dataclass
class DeltaState:
    """Per-node streaming statistics over the delta sequences.

    ``mean_delta`` tracks the first-delta stream and ``var_delta2`` the
    variance of the second-delta stream; the running mean of the
    second-delta stream is kept internally because the variance recursion
    needs it.  Both tracks support Welford and EMA estimators.
    """

    count: int
    mean_delta: np.ndarray
    mean_delta2: np.ndarray
    var_delta2: np.ndarray
    prev_delta: np.ndarray
    estimator: str = "welford"
    ema_decay: float = 0.3

    @classmethod
    def zeros(cls, num_nodes: int, estimator: str = "welford",
              ema_decay: float = 0.3) -> "DeltaState":
        z = lambda: np.zeros(num_nodes, dtype=np.float64)
        return cls(0, z(), z(), z(), z(), estimator, ema_decay)

    def observe(self, deltas: np.ndarray) -> None:
        """Fold in one layer's first deltas."""
        deltas = np.asarray(deltas, dtype=np.float64)
        self.count += 1
        n = self.count
        d2 = second_delta(deltas, self.prev_delta, n)
        if self.estimator == "welford":
            mu2_prev = self.mean_delta2
            mu2_new = welford_mean_update(mu2_prev, d2, n)
            self.var_delta2 = welford_var_update(
                self.var_delta2, mu2_prev, mu2_new, d2, n)
            self.mean_delta2 = mu2_new
            self.mean_delta = welford_mean_update(self.mean_delta, deltas, n)
        else:
            lam = self.ema_decay
            self.mean_delta = ema_update(self.mean_delta, deltas, lam)
            self.mean_delta2 = ema_update(self.mean_delta2, d2, lam)
            self.var_delta2 = ema_update(
                self.var_delta2, (d2 - self.mean_delta2) ** 2, lam)
        self.prev_delta = deltas


def gcn_adjacency(g: Graph) -> sp.csr_matrix:
    """Symmetric normalized adjacency with self-connections."""
    n = g.num_nodes
    dinv = 1.0 / np.sqrt(g.degrees + 1.0)
    a = g.adjacency + sp.eye(n, format="csr")
    return sp.diags(dinv) @ a @ sp.diags(dinv)


def transform_features(x: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    if spec.transform == "linear" or (spec.transform == "gcn_normalized"
                                      and spec.weight is not None):
        if x.shape[1] != spec.weight.shape[0]:
            raise ValueError(
                f"weight shape {spec.weight.shape} incompatible with "
                f"{x.shape[1]} feature columns")
        return x @ spec.weight
    return x


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(x, 0.0) if activation == "relu" else x


def _extended_aggregate(g: Graph, m: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    """Aggregate over the (possibly self-extended) neighborhood."""
    if spec.transform == "gcn_normalized":
        return gcn_adjacency(g) @ m
    out = g.adjacency @ m
    if spec.include_self:
        out = out + m
        if spec.combine == "mean":
            out = out / (g.degrees + 1.0)[:, None]
    elif spec.combine == "mean":
        deg = np.maximum(g.degrees, 1).astype(np.float64)
        out = out / deg[:, None]
    return out


def _neighbor_aggregate(g: Graph, m: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    """Aggregate over the pure neighborhood N(u), never including u itself."""
    if spec.transform == "gcn_normalized":
        full = gcn_adjacency(g) @ m
        return full - m / (g.degrees + 1.0)[:, None]
    out = g.adjacency @ m
    if spec.combine == "mean":
        deg = np.maximum(g.degrees, 1).astype(np.float64)
        out = out / deg[:, None]
    return out


def message_pass(g: Graph, x: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    """One layer: transform, aggregate over the extended neighborhood, activate."""
    x = np.asarray(x, dtype=np.float64)
    m = transform_features(x, spec)
    return _activate(_extended_aggregate(g, m, spec), spec.activation)


def first_deltas(g: Graph, m: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    """Euclidean distance between each node's pure-neighbor aggregate and
    its own transformed vector; exactly 0 for isolated nodes."""
    nb = _neighbor_aggregate(g, m, spec)
    d = np.linalg.norm(nb - m, axis=1)
    d[g.degrees == 0] = 0.0
    return d


def first_delta(g: Graph, m: np.ndarray, u: int, spec: AggregationSpec,
                dist: str = "euclidean") -> float:
    if dist != "euclidean":
        raise ValueError("only euclidean distance is supported")
    return float(first_deltas(g, np.asarray(m, dtype=np.float64), spec)[u])


def second_delta(delta_t, delta_prev, t: int):
    """|delta_t - delta_prev| for t >= 2; exactly 0 at t = 1."""
    if t <= 1:
        return np.zeros_like(np.asarray(delta_t, dtype=np.float64))
    return np.abs(np.asarray(delta_t, dtype=np.float64) - delta_prev)


def ifs_score(state: DeltaState, p: ScoreParams) -> np.ndarray:
    """(m * Var[second delta] + 1) / (l * mean[first delta] + 1), per node."""
    return (p.m * state.var_delta2 + 1.0) / (p.l * state.mean_delta + 1.0)


def k_schedule(t: int, s: ScheduleK) -> int:
    """Edges to remove at layer t (1-based)."""
    if not 1 <= t <= s.num_layers:
        raise ValueError(f"layer {t} outside [1, {s.num_layers}]")
    if s.shape == "constant":
        return int(round(s.theta))
    if s.num_layers == 1:
        return 0
    return int(round(s.theta / (s.num_layers - 1) * (t - 1)))


def budget_from_fraction(g: Graph, fraction: float) -> int:
    """Convenience wrapper: absolute edge budget from a fraction of |E|."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    return int(round(fraction * g.num_edges))


@dataclass
class LayerTrace:
    """One layer of an ifc_forward run, as seen by that layer."""

    graph: Graph                # graph used for this layer's aggregation
    x_in: np.ndarray
    x_out: np.ndarray
    deltas: np.ndarray
    scores: np.ndarray
    removed: list = field(default_factory=list)


def ifc_forward(g: Graph, x: np.ndarray, spec, params: ScoreParams,
                schedule: ScheduleK, T: int | None = None,
                return_trace: bool = False):
    """Run T layers of message passing with interleaved edge filtering.

    ``spec`` is a single :class:`AggregationSpec` or one per layer.  Each
    layer transforms, aggregates, folds the deltas into the streaming
    state, scores every node, and removes the K(t, theta) lowest-scored
    edges before the next layer.  Returns (features, filtered graph, final
    scores, utility); utility is the mean final score.  A schedule whose
    cumulative budget exceeds the edge count is clamped with a
    :class:`ScheduleExceedsEdges` warning.
    """
    from .rewiring import edge_filter  # runtime import: rewiring imports flow

    if T is None:
        T = schedule.num_layers
    elif T != schedule.num_layers:
        raise ValueError("T disagrees with schedule.num_layers")
    if T < 1:
        raise ValueError("need at least one layer")
    specs = list(spec) if isinstance(spec, (list, tuple)) else [spec] * T
    if len(specs) != T:
        raise ValueError(f"expected {T} specs, got {len(specs)}")

    total_budget = sum(k_schedule(t, schedule) for t in range(1, T + 1))
    if total_budget > g.num_edges:
        warnings.warn(
            f"schedule asks for {total_budget} removals but only "
            f"{g.num_edges} edges exist; clamping", ScheduleExceedsEdges)

    x = np.asarray(x, dtype=np.float64)
    state = DeltaState.zeros(g.num_nodes, params.estimator, params.ema_decay)
    cur_g, cur_x = g, x
    trace: list[LayerTrace] = []
    scores = np.ones(g.num_nodes, dtype=np.float64)
    for t in range(1, T + 1):
        sp_t = specs[t - 1]
        m = transform_features(cur_x, sp_t)
        new_x = _activate(_extended_aggregate(cur_g, m, sp_t), sp_t.activation)
        state.observe(first_deltas(cur_g, m, sp_t))
        scores = ifs_score(state, params)
        k = min(k_schedule(t, schedule), cur_g.num_edges)
        if k > 0:
            next_g, removed = edge_filter(cur_g, NodeScores(scores, "ifs"), k)
        else:
            next_g, removed = cur_g, []
        if return_trace:
            trace.append(LayerTrace(cur_g, cur_x, new_x, state.prev_delta,
                                    scores, removed))
        cur_g, cur_x = next_g, new_x

    result = (cur_x, cur_g, NodeScores(scores, "ifs"), float(scores.mean()))
    return (*result, trace) if return_trace else result


def hill_ascent_theta(run, theta0: float = 0.0, step: float = 1.0,
                      max_steps: int = 32) -> float:
    """Greedy ascent on the utility of ``run(theta)``.

    Starting from ``theta0``, keeps accepting ``theta + step`` while the
    utility strictly improves; returns the last accepted theta.  A flat
    utility therefore returns ``theta0`` and preserves sparsity.
    """
    theta = theta0
    best = run(theta)
    for _ in range(max_steps):
        cand = theta + step
        util = run(cand)
        if util > best:
            theta, best = cand, util
        else:
            break
    return theta


def random_linear_weight(d_in: int, d_out: int, seed: int = 0) -> np.ndarray:
    """Fixed-seed random linear transform for untrained scoring runs."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_in)
    return rng.uniform(-scale, scale, size=(d_in, d_out))


def dump_scores_csv(path, state: DeltaState, scores: np.ndarray) -> None:
    """Write per-node statistics as node_id, mean_delta, var_delta2, ifs_score."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "mean_delta", "var_delta2", "ifs_score"])
        for i in range(len(scores)):
            writer.writerow([i, repr(float(state.mean_delta[i])),
                             repr(float(state.var_delta2[i])),
                             repr(float(scores[i]))])
