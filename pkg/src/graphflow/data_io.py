"""Graph bundles on disk, synthetic generators, and node splits.

A bundle is a directory with four files:

* ``manifest.json`` — name, counts, num_classes, metadata, file names.
* ``edges.csv`` — header ``u,v``, one canonical (u < v) edge per line.
* ``features.csv`` — header ``f0..f{d-1}``, one node per line, floats
  written with ``repr`` so they round-trip exactly.
* ``labels.csv`` — header ``label,train,val,test``; masks encoded 0/1.

Loaders raise :class:`SchemaViolation` with file/line diagnostics; all
generators are pure functions of their arguments and seed.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph, build_graph

__all__ = [
    "GraphBundle",
    "SchemaViolation",
    "save_bundle",
    "load_bundle",
    "sbm_generate",
    "barbell_generate",
    "cosine_threshold_graph",
    "demo14_graph",
    "split_bundle",
    "ingest_planetoid",
]


class SchemaViolation(ValueError):
    """A bundle file is missing or malformed."""


@dataclass
class GraphBundle:
    name: str
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.masks:
            n = self.graph.num_nodes
            self.masks = {"train": np.ones(n, dtype=bool),
                          "val": np.zeros(n, dtype=bool),
                          "test": np.zeros(n, dtype=bool)}
        self.validate()

    def validate(self):
        n = self.graph.num_nodes
        if self.features.shape[0] != n:
            raise SchemaViolation(
                f"feature rows {self.features.shape[0]} != num_nodes {n}")
        if not np.isfinite(self.features).all():
            raise SchemaViolation("features contain non-finite entries")
        if self.labels.shape != (n,):
            raise SchemaViolation(f"labels shape {self.labels.shape} != ({n},)")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise SchemaViolation("labels outside [0, num_classes)")
        used = np.zeros(n, dtype=np.int64)
        for key in ("train", "val", "test"):
            mask = np.asarray(self.masks.get(key, np.zeros(n, dtype=bool)), dtype=bool)
            if mask.shape != (n,):
                raise SchemaViolation(f"mask {key!r} has wrong length")
            self.masks[key] = mask
            used += mask
        if (used > 1).any():
            raise SchemaViolation("train/val/test masks overlap")


def save_bundle(bundle: GraphBundle, path) -> None:
    """Write a bundle directory; see the module docstring for the layout."""
    os.makedirs(path, exist_ok=True)
    n, d = bundle.features.shape
    manifest = {
        "name": bundle.name,
        "num_nodes": n,
        "num_edges": bundle.graph.num_edges,
        "num_features": d,
        "num_classes": bundle.num_classes,
        "metadata": bundle.metadata,
        "files": {"edges": "edges.csv", "features": "features.csv",
                  "labels": "labels.csv"},
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "edges.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v"])
        for u, v in bundle.graph.edge_list:
            writer.writerow([int(u), int(v)])
    with open(os.path.join(path, "features.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(d)])
        for row in bundle.features:
            writer.writerow([repr(float(v)) for v in row])
    with open(os.path.join(path, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "train", "val", "test"])
        for i in range(n):
            writer.writerow([int(bundle.labels[i]),
                             int(bundle.masks["train"][i]),
                             int(bundle.masks["val"][i]),
                             int(bundle.masks["test"][i])])


def _read_csv(path, expect_cols: int):
    if not os.path.exists(path):
        raise SchemaViolation(f"missing bundle file {os.path.basename(path)!r}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaViolation(f"{os.path.basename(path)}: empty file")
        if expect_cols and len(header) != expect_cols:
            raise SchemaViolation(
                f"{os.path.basename(path)}: expected {expect_cols} columns, "
                f"got {len(header)} in header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaViolation(
                    f"{os.path.basename(path)}: line {lineno}: expected "
                    f"{len(header)} fields, got {len(row)}")
            rows.append(row)
    return header, rows


def load_bundle(path) -> GraphBundle:
    """Read a bundle directory written by :func:`save_bundle`."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise SchemaViolation("missing bundle file 'manifest.json'")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"manifest.json: {exc}") from exc
    for key in ("name", "num_nodes", "num_edges", "num_features", "num_classes"):
        if key not in manifest:
            raise SchemaViolation(f"manifest.json: missing field {key!r}")
    n = int(manifest["num_nodes"])
    d = int(manifest["num_features"])

    _, edge_rows = _read_csv(os.path.join(path, "edges.csv"), 2)
    try:
        edges = [(int(u), int(v)) for u, v in edge_rows]
    except ValueError as exc:
        raise SchemaViolation(f"edges.csv: non-integer endpoint: {exc}") from exc
    graph = build_graph(n, edges)
    if graph.num_edges != int(manifest["num_edges"]):
        raise SchemaViolation(
            f"edges.csv: {graph.num_edges} edges but manifest says "
            f"{manifest['num_edges']}")

    _, feat_rows = _read_csv(os.path.join(path, "features.csv"), d)
    if len(feat_rows) != n:
        raise SchemaViolation(f"features.csv: {len(feat_rows)} rows, expected {n}")
    try:
        features = np.array([[float(v) for v in row] for row in feat_rows],
                            dtype=np.float64).reshape(n, d)
    except ValueError as exc:
        raise SchemaViolation(f"features.csv: bad float: {exc}") from exc

    _, label_rows = _read_csv(os.path.join(path, "labels.csv"), 4)
    if len(label_rows) != n:
        raise SchemaViolation(f"labels.csv: {len(label_rows)} rows, expected {n}")
    try:
        table = np.array([[int(v) for v in row] for row in label_rows], dtype=np.int64)
    except ValueError as exc:
        raise SchemaViolation(f"labels.csv: bad integer: {exc}") from exc
    masks = {"train": table[:, 1].astype(bool),
             "val": table[:, 2].astype(bool),
             "test": table[:, 3].astype(bool)}
    return GraphBundle(manifest["name"], graph, features, table[:, 0],
                       int(manifest["num_classes"]), masks,
                       manifest.get("metadata", {}))


def _sample_pairs(total: int, k: int, rng) -> np.ndarray:
    """k distinct flat pair indices out of ``total``, without materializing
    the full range."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    chosen = np.unique(rng.integers(0, total, size=int(k * 1.2) + 8))
    while len(chosen) < k:
        extra = rng.integers(0, total, size=k)
        chosen = np.unique(np.concatenate([chosen, extra]))
    return rng.permutation(chosen)[:k]


def _triangle_unrank(t: np.ndarray, s: int):
    """Invert the row-major upper-triangle flattening of pairs i < j < s."""
    tf = t.astype(np.float64)
    i = np.floor(((2 * s - 1) - np.sqrt((2 * s - 1) ** 2 - 8 * tf)) / 2).astype(np.int64)
    # float guard: fix rows off by one
    start = i * (2 * s - i - 1) // 2
    too_big = start > t
    i[too_big] -= 1
    start = i * (2 * s - i - 1) // 2
    j = t - start + i + 1
    return i, j


def sbm_generate(num_nodes: int, num_classes: int, p_in: float, p_out: float,
                 centroid_separation: float, noise: float, seed: int,
                 name: str = "sbm") -> GraphBundle:
    """Planted-partition graph with Gaussian class-centroid features.

    Class assignment is round-robin; centroids are ``separation * e_c`` in
    ``num_classes`` dimensions, so every pair is at distance
    ``separation * sqrt(2) >= separation``.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes, dtype=np.int64) % num_classes
    members = [np.nonzero(labels == c)[0] for c in range(num_classes)]

    edges = []
    for a in range(num_classes):
        for b in range(a, num_classes):
            p = p_in if a == b else p_out
            if p <= 0:
                continue
            if a == b:
                s = len(members[a])
                total = s * (s - 1) // 2
                count = rng.binomial(total, p) if p < 1 else total
                flat = _sample_pairs(total, count, rng) if p < 1 else np.arange(total)
                i, j = _triangle_unrank(flat, s)
                edges.append(np.stack([members[a][i], members[a][j]], axis=1))
            else:
                sa, sb = len(members[a]), len(members[b])
                total = sa * sb
                count = rng.binomial(total, p) if p < 1 else total
                flat = _sample_pairs(total, count, rng) if p < 1 else np.arange(total)
                i, j = flat // sb, flat % sb
                edges.append(np.stack([members[a][i], members[b][j]], axis=1))
    edge_arr = np.concatenate(edges) if edges else np.empty((0, 2), dtype=np.int64)
    graph = build_graph(num_nodes, edge_arr)

    centroids = centroid_separation * np.eye(num_classes)
    features = centroids[labels] + rng.normal(0.0, noise, size=(num_nodes, num_classes))
    meta = {"generator": "sbm", "seed": seed, "p_in": p_in, "p_out": p_out,
            "centroid_separation": centroid_separation, "noise": noise}
    return GraphBundle(name, graph, features, labels, num_classes, metadata=meta)


def barbell_generate(clique_size: int, bridge_len: int, feature_dim: int = 8,
                     seed: int = 0, name: str = "barbell") -> GraphBundle:
    """Two cliques joined by a path of ``bridge_len`` edges; labels = clique id.

    Features are i.i.d. standard normal.  ``bridge_len = 1`` joins the
    cliques directly; longer bridges insert path nodes labeled with the
    nearer clique.
    """
    if clique_size < 2 or bridge_len < 1:
        raise ValueError("need clique_size >= 2 and bridge_len >= 1")
    k = clique_size
    n_path = bridge_len - 1
    n = 2 * k + n_path
    edges = [(i, j) for i in range(k) for j in range(i + 1, k)]
    edges += [(k + i, k + j) for i in range(k) for j in range(i + 1, k)]
    path = [k - 1] + [2 * k + i for i in range(n_path)] + [k]
    edges += list(zip(path[:-1], path[1:]))
    labels = np.zeros(n, dtype=np.int64)
    labels[k:2 * k] = 1
    for idx, node in enumerate(path[1:-1]):
        labels[node] = 0 if idx < n_path / 2 else 1
    rng = np.random.default_rng(seed)
    features = rng.normal(0.0, 1.0, size=(n, feature_dim))
    meta = {"generator": "barbell", "clique_size": k, "bridge_len": bridge_len,
            "seed": seed, "bridge_endpoints": [k - 1, k],
            "bridge_edges": [[int(u), int(v)] for u, v in zip(path[:-1], path[1:])]}
    return GraphBundle(name, build_graph(n, edges), features, labels, 2,
                       metadata=meta)


def cosine_threshold_graph(features: np.ndarray, threshold: float) -> Graph:
    """Edge (u, v) iff cosine(x_u, x_v) >= threshold, u != v."""
    x = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    xn = x / safe[:, None]
    sim = np.clip(xn @ xn.T, -1.0, 1.0)
    # colinear pairs have true cosine exactly 1; undo the last-ulp rounding
    sim[sim >= 1.0 - 1e-12] = 1.0
    iu, ju = np.triu_indices(len(x), k=1)
    keep = sim[iu, ju] >= threshold
    return build_graph(len(x), np.stack([iu[keep], ju[keep]], axis=1))


def demo14_graph() -> GraphBundle:
    """Deterministic 14-node, 3-class demo graph with two planted bridges.

    Three same-class cliques are joined by two heterophilic bridge edges;
    the four bridge endpoints are the planted low-score nodes recorded in
    the metadata.  Scored with the default aggregation over the number of
    layers in the metadata, those endpoints are exactly the score argmin
    set, and removing their incident edges raises the mean score.
    """
    cluster_a = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    cluster_b = [(i, j) for i in range(5, 10) for j in range(i + 1, 10)]
    cluster_c = [(i, j) for i in range(10, 14) for j in range(i + 1, 14)]
    bridges = [(4, 5), (9, 10)]
    graph = build_graph(14, cluster_a + cluster_b + cluster_c + bridges)
    labels = np.array([0] * 5 + [1] * 5 + [2] * 4, dtype=np.int64)
    centroids = np.eye(3)
    rng = np.random.default_rng(14)
    features = centroids[labels] + rng.normal(0.0, 0.01, size=(14, 3))
    meta = {"generator": "demo14",
            "planted_low_nodes": [4, 5, 9, 10],
            "bridge_edges": [[4, 5], [9, 10]],
            "score_layers": 3}
    return GraphBundle("demo14", graph, features, labels, 3, metadata=meta)


def split_bundle(bundle: GraphBundle, fractions, seed: int) -> GraphBundle:
    """Stratified-by-class train/val/test masks, deterministic per seed."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be three non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1")
    rng = np.random.default_rng(seed)
    n = bundle.graph.num_nodes
    masks = {k: np.zeros(n, dtype=bool) for k in ("train", "val", "test")}
    for c in range(bundle.num_classes):
        ids = np.nonzero(bundle.labels == c)[0]
        ids = rng.permutation(ids)
        cut1 = int(np.floor(fractions[0] * len(ids) + 0.5))
        cut2 = int(np.floor((fractions[0] + fractions[1]) * len(ids) + 0.5))
        masks["train"][ids[:cut1]] = True
        masks["val"][ids[cut1:cut2]] = True
        masks["test"][ids[cut2:]] = True
    meta = dict(bundle.metadata)
    meta["split"] = {"fractions": list(fractions), "seed": seed}
    return GraphBundle(bundle.name, bundle.graph, bundle.features, bundle.labels,
                       bundle.num_classes, masks, meta)


def ingest_planetoid(raw_dir, name: str = "cora") -> GraphBundle:
    """Best-effort converter for the classic citation-network pickle files.

    Expects ``ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}`` inside
    ``raw_dir``; produces a bundle with the standard public split.
    """
    import pickle

    objs = {}
    for suffix in ("x", "tx", "allx", "y", "ty", "ally", "graph"):
        path = os.path.join(raw_dir, f"ind.{name}.{suffix}")
        if not os.path.exists(path):
            raise SchemaViolation(f"missing raw file ind.{name}.{suffix}")
        with open(path, "rb") as fh:
            objs[suffix] = pickle.load(fh, encoding="latin1")
    index_path = os.path.join(raw_dir, f"ind.{name}.test.index")
    if not os.path.exists(index_path):
        raise SchemaViolation(f"missing raw file ind.{name}.test.index")
    test_idx = np.loadtxt(index_path, dtype=np.int64)

    allx = objs["allx"].toarray() if hasattr(objs["allx"], "toarray") else objs["allx"]
    tx = objs["tx"].toarray() if hasattr(objs["tx"], "toarray") else objs["tx"]
    features = np.vstack([allx, tx]).astype(np.float64)
    labels_onehot = np.vstack([objs["ally"], objs["ty"]])
    order = np.sort(test_idx)
    features[test_idx] = features[order]
    labels_onehot[test_idx] = labels_onehot[order]
    labels = labels_onehot.argmax(axis=1).astype(np.int64)

    n = features.shape[0]
    edges = [(int(u), int(v)) for u, nbrs in objs["graph"].items()
             for v in nbrs if u != v and u < n and v < n]
    graph = build_graph(n, edges)

    n_train = objs["y"].shape[0]
    masks = {"train": np.zeros(n, dtype=bool), "val": np.zeros(n, dtype=bool),
             "test": np.zeros(n, dtype=bool)}
    masks["train"][:n_train] = True
    masks["val"][n_train:n_train + 500] = True
    masks["test"][test_idx] = True
    return GraphBundle(name, graph, features, labels,
                       int(labels_onehot.shape[1]), masks,
                       {"generator": "planetoid", "raw_dir": str(raw_dir)})
