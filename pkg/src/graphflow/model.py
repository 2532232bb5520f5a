"""Minimal dense GNN trainer: normalized-adjacency layers, a self-first
heterophilic stack, a two-branch pipeline with interleaved edge filtering,
and hand-rolled reverse-mode gradients.

All math is float64 numpy.  Edge removals and node selection inside the
filtering pipeline are structural decisions and are excluded from
differentiation; gradients flow through the dense ops only.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import flow, rewiring
from .flow import AggregationSpec, ScheduleK, ScoreParams, gcn_adjacency
from .graphs import Graph

__all__ = [
    "ModelParams",
    "TrainConfig",
    "FlowConfig",
    "DivergedLoss",
    "init_params",
    "gcn_forward",
    "hetero_forward",
    "jk_readout",
    "dual_forward",
    "forward",
    "softmax_cross_entropy",
    "loss_and_grads",
    "train",
    "accuracy",
    "specificity",
    "save_checkpoint",
    "load_checkpoint",
]


class DivergedLoss(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class ModelParams:
    kind: str                      # gcn | hetero | dual
    weights: dict[str, np.ndarray]
    layers: int
    hidden: int
    num_classes: int
    branch_dim: int = 0


@dataclass(frozen=True)
class FlowConfig:
    """Scoring and removal-schedule settings for the filtering pipeline."""

    score: ScoreParams = ScoreParams()
    schedule: ScheduleK = ScheduleK("constant", 0.0, 1)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    hidden: int = 32
    layers: int = 2
    model: str = "gcn"
    optimizer: str = "momentum"    # momentum | adaptive
    momentum: float = 0.9
    branch_dim: int = 32
    theta: float = 0.0
    schedule_shape: str = "constant"
    q: int | None = None
    estimator: str = "welford"
    ema_decay: float = 0.3

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


def _init_weight(rng, d_in: int, d_out: int) -> np.ndarray:
    scale = 1.0 / np.sqrt(d_in)
    return rng.uniform(-scale, scale, size=(d_in, d_out))


def init_params(kind: str, num_features: int, hidden: int, num_classes: int,
                layers: int, seed: int, branch_dim: int = 0) -> ModelParams:
    """Fan-in scaled symmetric-uniform init, deterministic per seed."""
    if layers < 1:
        raise ValueError("need at least one layer")
    rng = np.random.default_rng(seed)
    w: dict[str, np.ndarray] = {}
    if kind == "gcn":
        dims = [num_features] + [hidden] * (layers - 1) + [num_classes]
        for t in range(layers):
            w[f"gcn{t}"] = _init_weight(rng, dims[t], dims[t + 1])
    elif kind == "hetero":
        w["self0"] = _init_weight(rng, num_features, hidden)
        for t in range(1, layers):
            w[f"nbr{t}"] = _init_weight(rng, hidden, hidden)
            w[f"self{t}"] = _init_weight(rng, hidden, hidden)
        w["jk"] = _init_weight(rng, layers * hidden, num_classes)
    elif kind == "dual":
        branch_dim = branch_dim or hidden
        dims = [num_features] + [hidden] * layers
        for t in range(layers):
            w[f"gcn{t}"] = _init_weight(rng, dims[t], dims[t + 1])
        w["ho_out"] = _init_weight(rng, hidden, branch_dim)
        w["self0"] = _init_weight(rng, num_features, hidden)
        for t in range(1, layers):
            w[f"nbr{t}"] = _init_weight(rng, hidden, hidden)
            w[f"self{t}"] = _init_weight(rng, hidden, hidden)
        w["jk"] = _init_weight(rng, layers * hidden, branch_dim)
        w["out"] = _init_weight(rng, 2 * branch_dim, num_classes)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return ModelParams(kind, w, layers, hidden, num_classes, branch_dim)


def _relu(x):
    return np.maximum(x, 0.0)


def _mean_adjacency(g: Graph) -> sp.csr_matrix:
    deg = np.maximum(g.degrees, 1).astype(np.float64)
    return sp.diags(1.0 / deg) @ g.adjacency


# ---------------------------------------------------------------- layer ops

def gcn_forward(g: Graph, x: np.ndarray, params: ModelParams, layer: int) -> np.ndarray:
    """One normalized-adjacency layer; relu except on the logits layer of a
    plain classifier stack."""
    w = params.weights[f"gcn{layer}"]
    pre = gcn_adjacency(g) @ (np.asarray(x, dtype=np.float64) @ w)
    last = params.kind == "gcn" and layer == params.layers - 1
    return pre if last else _relu(pre)


def hetero_forward(g_he: Graph, x: np.ndarray, params: ModelParams,
                   layer: int) -> np.ndarray:
    """Self-first heterophilic layer.

    Layer 0 transforms self features only (independent of the edge set);
    later layers add a mean neighbor aggregate to the self transform.
    """
    x = np.asarray(x, dtype=np.float64)
    if layer == 0:
        return _relu(x @ params.weights["self0"])
    z = _mean_adjacency(g_he) @ x
    return _relu(z @ params.weights[f"nbr{layer}"]
                 + x @ params.weights[f"self{layer}"])


def jk_readout(layer_outputs, params: ModelParams) -> np.ndarray:
    """Concatenate all layer outputs along features and apply the linear map."""
    concat = np.concatenate(list(layer_outputs), axis=1)
    return concat @ params.weights["jk"]


# ------------------------------------------------------------- full models

def _gcn_stack_forward(g: Graph, x: np.ndarray, params: ModelParams):
    h = x
    recs = []
    for t in range(params.layers):
        out = gcn_forward(g, h, params, t)
        act = not (params.kind == "gcn" and t == params.layers - 1)
        recs.append({"graph": g, "h_in": h, "out": out, "act": act})
        h = out
    return h, recs


def _gcn_stack_backward(recs, d, params: ModelParams, grads):
    for t in reversed(range(len(recs))):
        rec = recs[t]
        if rec["act"]:
            d = d * (rec["out"] > 0)
        dm = gcn_adjacency(rec["graph"]) @ d
        grads[f"gcn{t}"] += rec["h_in"].T @ dm
        if t > 0:
            d = dm @ params.weights[f"gcn{t}"].T
    return d


def _hetero_stack_forward(g_he: Graph, x: np.ndarray, params: ModelParams):
    p_mat = _mean_adjacency(g_he)
    h = x
    outs, recs = [], []
    for t in range(params.layers):
        if t == 0:
            z = None
            pre = h @ params.weights["self0"]
        else:
            z = p_mat @ h
            pre = z @ params.weights[f"nbr{t}"] + h @ params.weights[f"self{t}"]
        out = _relu(pre)
        recs.append({"h_in": h, "z": z, "out": out})
        outs.append(out)
        h = out
    concat = np.concatenate(outs, axis=1)
    branch = concat @ params.weights["jk"]
    return branch, {"recs": recs, "concat": concat, "p_mat": p_mat,
                    "hidden": params.hidden}


def _hetero_stack_backward(tape, d_branch, params: ModelParams, grads):
    recs, concat, p_mat = tape["recs"], tape["concat"], tape["p_mat"]
    h = tape["hidden"]
    grads["jk"] += concat.T @ d_branch
    dconcat = d_branch @ params.weights["jk"].T
    carry = np.zeros_like(recs[-1]["out"])
    for t in reversed(range(len(recs))):
        rec = recs[t]
        d_total = dconcat[:, t * h:(t + 1) * h] + carry
        dpre = d_total * (rec["out"] > 0)
        if t == 0:
            grads["self0"] += rec["h_in"].T @ dpre
        else:
            grads[f"nbr{t}"] += rec["z"].T @ dpre
            grads[f"self{t}"] += rec["h_in"].T @ dpre
            carry = (p_mat.T @ (dpre @ params.weights[f"nbr{t}"].T)
                     + dpre @ params.weights[f"self{t}"].T)


def _dual_forward(g: Graph, x: np.ndarray, params: ModelParams,
                  flow_cfg: FlowConfig, q: int):
    if flow_cfg.schedule.num_layers != params.layers:
        raise ValueError("schedule length must match the layer count")
    specs = [AggregationSpec(transform="gcn_normalized",
                             weight=params.weights[f"gcn{t}"],
                             activation="relu")
             for t in range(params.layers)]
    x_ho, g_fin, score_obj, _, trace = flow.ifc_forward(
        g, x, specs, flow_cfg.score, flow_cfg.schedule, return_trace=True)
    ho_out = x_ho @ params.weights["ho_out"]

    cond_graph, node_map = rewiring.heterophilic_condensation(g_fin, score_obj, q)
    sel = np.asarray(node_map, dtype=np.int64)
    branch, he_tape = _hetero_stack_forward(cond_graph, x[sel], params)
    he_full = np.zeros((g.num_nodes, params.branch_dim))
    he_full[sel] = branch

    feats = np.concatenate([ho_out, he_full], axis=1)
    logits = feats @ params.weights["out"]
    tape = {"trace": trace, "x_ho": x_ho, "feats": feats, "sel": sel,
            "he_tape": he_tape, "graph_out": g_fin, "scores": score_obj}
    return logits, tape


def dual_forward(g: Graph, x: np.ndarray, params: ModelParams,
                 flow_cfg: FlowConfig, q: int) -> np.ndarray:
    """Two-branch pipeline: filtered normalized-adjacency stack plus a
    heterophilic stack over the condensed top-score nodes, concatenated
    into a final linear readout."""
    logits, _ = _dual_forward(g, x, params, flow_cfg, q)
    return logits


@dataclass
class ModelTape:
    kind: str
    logits: np.ndarray
    params: ModelParams
    parts: dict = field(default_factory=dict)


def forward(g: Graph, x: np.ndarray, params: ModelParams,
            flow_cfg: FlowConfig | None = None, q: int | None = None):
    """Run the model named by ``params.kind``; returns (logits, tape)."""
    x = np.asarray(x, dtype=np.float64)
    if params.kind == "gcn":
        logits, recs = _gcn_stack_forward(g, x, params)
        return logits, ModelTape("gcn", logits, params, {"recs": recs})
    if params.kind == "hetero":
        branch, tape = _hetero_stack_forward(g, x, params)
        return branch, ModelTape("hetero", branch, params, {"he_tape": tape})
    if params.kind == "dual":
        if flow_cfg is None or q is None:
            raise ValueError("the dual model needs a FlowConfig and q")
        logits, parts = _dual_forward(g, x, params, flow_cfg, q)
        return logits, ModelTape("dual", logits, params, parts)
    raise ValueError(f"unknown model kind {params.kind!r}")


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                          mask: np.ndarray):
    """Mean cross-entropy over masked nodes and its gradient w.r.t. logits."""
    idx = np.nonzero(np.asarray(mask, dtype=bool))[0]
    if len(idx) == 0:
        raise ValueError("mask selects no nodes")
    with np.errstate(invalid="ignore", over="ignore"):
        z = logits[idx] - logits[idx].max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(idx))
    loss = float(-logp[rows, labels[idx]].mean())
    dlogits = np.zeros_like(logits)
    p = np.exp(logp)
    p[rows, labels[idx]] -= 1.0
    dlogits[idx] = p / len(idx)
    return loss, dlogits


def loss_and_grads(tape: ModelTape, labels: np.ndarray, mask: np.ndarray):
    """Masked cross-entropy plus analytic gradients for every weight."""
    params = tape.params
    loss, d = softmax_cross_entropy(tape.logits, labels, mask)
    grads = {k: np.zeros_like(w) for k, w in params.weights.items()}
    if tape.kind == "gcn":
        _gcn_stack_backward(tape.parts["recs"], d, params, grads)
    elif tape.kind == "hetero":
        _hetero_stack_backward(tape.parts["he_tape"], d, params, grads)
    else:
        feats, sel = tape.parts["feats"], tape.parts["sel"]
        grads["out"] += feats.T @ d
        dfeats = d @ params.weights["out"].T
        b = params.branch_dim
        dho_out, dhe_full = dfeats[:, :b], dfeats[:, b:]
        grads["ho_out"] += tape.parts["x_ho"].T @ dho_out
        dx_ho = dho_out @ params.weights["ho_out"].T
        _hetero_stack_backward(tape.parts["he_tape"], dhe_full[sel], params, grads)
        trace = tape.parts["trace"]
        recs = [{"graph": r.graph, "h_in": r.x_in, "out": r.x_out, "act": True}
                for r in trace]
        _gcn_stack_backward(recs, dx_ho, params, grads)
    return loss, grads


# ---------------------------------------------------------------- training

def accuracy(labels: np.ndarray, preds: np.ndarray, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float((preds[mask] == labels[mask]).mean())


def specificity(labels: np.ndarray, preds: np.ndarray, num_classes: int,
                mask: np.ndarray | None = None) -> float:
    """Macro-averaged true-negative rate."""
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        labels, preds = labels[mask], preds[mask]
    rates = []
    for c in range(num_classes):
        neg = labels != c
        if not neg.any():
            continue
        rates.append(float(((preds != c) & neg).sum() / neg.sum()))
    return float(np.mean(rates)) if rates else float("nan")


def _flow_cfg_from(cfg: TrainConfig) -> FlowConfig:
    return FlowConfig(
        ScoreParams(estimator=cfg.estimator, ema_decay=cfg.ema_decay),
        ScheduleK(cfg.schedule_shape, cfg.theta, cfg.layers))


def train(g: Graph, x: np.ndarray, labels: np.ndarray, splits: dict,
          cfg: TrainConfig):
    """Gradient descent with validation-accuracy early stopping.

    Returns (params, history); params are the best-validation snapshot when
    a validation mask is present, otherwise the final weights.  Raises
    :class:`DivergedLoss` on a non-finite loss.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = int(labels.max()) + 1 if len(labels) else 1
    params = init_params(cfg.model, x.shape[1], cfg.hidden, num_classes,
                         cfg.layers, cfg.seed, cfg.branch_dim)
    flow_cfg = _flow_cfg_from(cfg) if cfg.model == "dual" else None
    q = cfg.q if cfg.q is not None else min(20, g.num_nodes)

    vel = {k: np.zeros_like(w) for k, w in params.weights.items()}
    m1 = {k: np.zeros_like(w) for k, w in params.weights.items()}
    m2 = {k: np.zeros_like(w) for k, w in params.weights.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    val_mask = np.asarray(splits.get("val", np.zeros(g.num_nodes, dtype=bool)),
                          dtype=bool)
    best_val, best_weights, stall = -np.inf, None, 0
    history = []
    for epoch in range(cfg.max_epochs):
        logits, tape = forward(g, x, params, flow_cfg, q)
        loss, grads = loss_and_grads(tape, labels, splits["train"])
        if not np.isfinite(loss):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}")
        preds = logits.argmax(axis=1)
        train_acc = accuracy(labels, preds, splits["train"])
        val_acc = accuracy(labels, preds, val_mask) if val_mask.any() else float("nan")
        history.append({"epoch": epoch, "loss": loss,
                        "train_acc": train_acc, "val_acc": val_acc})

        if val_mask.any():
            if val_acc > best_val:
                best_val = val_acc
                best_weights = {k: w.copy() for k, w in params.weights.items()}
                stall = 0
            else:
                stall += 1
            if stall >= cfg.patience:
                break

        if cfg.optimizer == "momentum":
            for k in params.weights:
                vel[k] = cfg.momentum * vel[k] - cfg.learning_rate * grads[k]
                params.weights[k] += vel[k]
        elif cfg.optimizer == "adaptive":
            t = epoch + 1
            for k in params.weights:
                m1[k] = beta1 * m1[k] + (1 - beta1) * grads[k]
                m2[k] = beta2 * m2[k] + (1 - beta2) * grads[k] ** 2
                mhat = m1[k] / (1 - beta1 ** t)
                vhat = m2[k] / (1 - beta2 ** t)
                params.weights[k] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
        else:
            raise ValueError(f"unknown optimizer {cfg.optimizer!r}")

    if best_weights is not None:
        params.weights = best_weights
    return params, history


# ------------------------------------------------------------- persistence

def save_checkpoint(params: ModelParams, path) -> None:
    """JSON bundle: shapes plus row-major values for every weight."""
    payload = {
        "kind": params.kind,
        "layers": params.layers,
        "hidden": params.hidden,
        "num_classes": params.num_classes,
        "branch_dim": params.branch_dim,
        "weights": {k: {"shape": list(w.shape), "data": w.ravel().tolist()}
                    for k, w in sorted(params.weights.items())},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        payload = json.load(fh)
    weights = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
               for k, v in payload["weights"].items()}
    return ModelParams(payload["kind"], weights, payload["layers"],
                       payload["hidden"], payload["num_classes"],
                       payload["branch_dim"])
