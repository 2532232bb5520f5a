"""Command-line front end.

Every command reads/writes bundle directories and emits machine-readable
CSV/JSON.  Commands exit 0 on success and nonzero with a single-line
``error:<Code>:<message>`` on stderr otherwise.  All outputs except
``timings.csv`` are byte-reproducible for identical flags and seeds;
wall-clock numbers are kept in that separate file on purpose.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import flow, graphs, model, rewiring
from .connectivity import MeasureTimeout
from .data_io import (GraphBundle, barbell_generate, demo14_graph, load_bundle,
                      sbm_generate, save_bundle, split_bundle)
from .graphs import connected_components, mean_edge_homophily

__all__ = ["main"]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x):
    return repr(float(x))


def _score_params(args):
    return flow.ScoreParams(l=args.l, m=args.m, estimator=args.estimator,
                            ema_decay=args.ema_decay)


def _flow_args(args, layers):
    params = _score_params(args)
    spec = flow.AggregationSpec()
    schedule = flow.ScheduleK(args.schedule, args.theta, layers)
    return spec, params, schedule


def _scoring_pass(bundle, args):
    spec, params, _ = _flow_args(args, args.layers)
    state = flow.DeltaState.zeros(bundle.graph.num_nodes, params.estimator,
                                  params.ema_decay)
    cur_x = bundle.features
    for t in range(1, args.layers + 1):
        m = flow.transform_features(cur_x, spec)
        cur_x = flow.message_pass(bundle.graph, cur_x, spec)
        state.observe(flow.first_deltas(bundle.graph, m, spec))
    scores = flow.ifs_score(state, params)
    return state, scores


def cmd_score(args) -> int:
    bundle = load_bundle(args.input)
    os.makedirs(args.output_dir, exist_ok=True)
    state, scores = _scoring_pass(bundle, args)
    flow.dump_scores_csv(os.path.join(args.output_dir, "scores.csv"), state, scores)
    _write_json(os.path.join(args.output_dir, "summary.json"),
                {"mean": float(scores.mean()), "min": float(scores.min()),
                 "max": float(scores.max()), "num_nodes": int(len(scores))})
    return 0


def cmd_filter(args) -> int:
    bundle = load_bundle(args.input)
    os.makedirs(args.output_dir, exist_ok=True)
    filtered, report = rewiring.baseline_rewire(
        bundle.graph, bundle.features, args.measure, args.k,
        labels=bundle.labels, alpha=args.alpha, layers=args.layers,
        params=_score_params(args))
    with open(os.path.join(args.output_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    _write_csv(os.path.join(args.output_dir, "removed_edges.csv"), ["u", "v"],
               report.removed_edges)
    out = GraphBundle(bundle.name, filtered, bundle.features, bundle.labels,
                      bundle.num_classes, bundle.masks,
                      {**bundle.metadata, "filtered_by": args.measure, "k": args.k})
    save_bundle(out, os.path.join(args.output_dir, "filtered_bundle"))
    return 0


def cmd_condense(args) -> int:
    bundle = load_bundle(args.input)
    os.makedirs(args.output_dir, exist_ok=True)
    scores = rewiring.measure_node_scores(
        bundle.graph, bundle.features, args.measure, alpha=args.alpha,
        layers=args.layers,
        params=_score_params(args))
    condensed, node_map = rewiring.heterophilic_condensation(
        bundle.graph, scores, args.q)
    _write_csv(os.path.join(args.output_dir, "condensed_edges.csv"), ["u", "v"],
               [(int(u), int(v)) for u, v in condensed.edge_list])
    _write_csv(os.path.join(args.output_dir, "node_map.csv"),
               ["local_id", "original_id"], list(enumerate(node_map)))
    sel = np.asarray(node_map)
    h_cond = (mean_edge_homophily(condensed, bundle.features[sel],
                                  bundle.labels[sel])
              if condensed.num_edges else None)
    _write_json(os.path.join(args.output_dir, "summary.json"),
                {"q": args.q, "measure": args.measure,
                 "homophily_condensed": h_cond})
    return 0


def _edge_homophily_histogram(g, x, labels, bins=30):
    """Fixed-bin histogram of per-edge homophily rates; counts sum to |E|."""
    if g.num_edges == 0:
        edges_h = np.empty(0)
    else:
        e = g.edge_list
        xu, xv = x[e[:, 0]], x[e[:, 1]]
        cos = (np.einsum("ij,ij->i", xu, xv)
               / (np.linalg.norm(xu, axis=1) * np.linalg.norm(xv, axis=1)))
        edges_h = 0.5 * cos + 0.5 * (labels[e[:, 0]] == labels[e[:, 1]])
    counts, edges = np.histogram(edges_h, bins=bins, range=(-0.5, 1.0))
    return counts, edges


def cmd_compare(args) -> int:
    bundle = load_bundle(args.input)
    os.makedirs(args.output_dir, exist_ok=True)
    measures = [m.strip() for m in args.measures.split(",") if m.strip()]
    for m in measures:
        if m not in rewiring.MEASURES:
            raise ValueError(f"unknown measure {m!r}")
    rows, hist_rows, timing_rows = [], [], []

    counts, bin_edges = _edge_homophily_histogram(
        bundle.graph, bundle.features, bundle.labels)
    for b in range(len(counts)):
        hist_rows.append(["original", "-", _fmt(bin_edges[b]),
                          _fmt(bin_edges[b + 1]), int(counts[b])])

    comp_before = int(connected_components(bundle.graph).max()) + 1
    for measure in measures:
        deadline = (time.monotonic() + args.timeout_ms / 1000.0
                    if args.timeout_ms else None)
        start = time.monotonic()
        try:
            f_rep, c_rep = rewiring.homophily_shift_report(
                bundle.graph, bundle.features, bundle.labels, measure,
                args.k, args.q, alpha=args.alpha, layers=args.layers,
                        params=_score_params(args), deadline=deadline)
        except MeasureTimeout:
            timing_rows.append([measure, _fmt(time.monotonic() - start)])
            rows.append([measure, "OOT"] + [""] * 6)
            continue
        timing_rows.append([measure, _fmt(time.monotonic() - start)])
        rows.append([
            measure, "ok", _fmt(f_rep.homophily_before),
            _fmt(f_rep.homophily_after), _fmt(f_rep.delta_pct),
            "" if c_rep.homophily_after is None else _fmt(c_rep.homophily_after),
            comp_before, f_rep.components_after,
        ])
        filtered = rewiring.filter_for_measure(
            bundle.graph, bundle.features, measure, args.k,
            alpha=args.alpha, layers=args.layers,
            params=_score_params(args), deadline=None)[0]
        counts, bin_edges = _edge_homophily_histogram(
            filtered, bundle.features, bundle.labels)
        for b in range(len(counts)):
            hist_rows.append(["filtered", measure, _fmt(bin_edges[b]),
                              _fmt(bin_edges[b + 1]), int(counts[b])])

    _write_csv(os.path.join(args.output_dir, "report.csv"),
               ["measure", "status", "homophily_before", "homophily_filtered",
                "delta_pct", "homophily_condensed", "components_before",
                "components_after"], rows)
    _write_csv(os.path.join(args.output_dir, "histograms.csv"),
               ["stage", "measure", "bin_lo", "bin_hi", "count"], hist_rows)
    _write_csv(os.path.join(args.output_dir, "timings.csv"),
               ["measure", "seconds"], timing_rows)
    return 0


def cmd_train(args) -> int:
    bundle = load_bundle(args.input)
    os.makedirs(args.output_dir, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    metrics_rows = []
    for seed in seeds:
        cfg = model.TrainConfig(
            learning_rate=args.lr, max_epochs=args.epochs, patience=args.patience,
            seed=seed, hidden=args.hidden, layers=args.layers, model=args.model,
            theta=args.theta, schedule_shape=args.schedule, q=args.q,
            estimator=args.estimator, ema_decay=args.ema_decay)
        params, history = model.train(bundle.graph, bundle.features,
                                      bundle.labels, bundle.masks, cfg)
        flow_cfg = (model.FlowConfig(
            flow.ScoreParams(estimator=args.estimator, ema_decay=args.ema_decay),
            flow.ScheduleK(args.schedule, args.theta, args.layers))
            if args.model == "dual" else None)
        q = args.q if args.q is not None else min(20, bundle.graph.num_nodes)
        logits, _ = model.forward(bundle.graph, bundle.features, params,
                                  flow_cfg, q)
        preds = logits.argmax(axis=1)
        acc = model.accuracy(bundle.labels, preds, bundle.masks["test"])
        spec_val = model.specificity(bundle.labels, preds, bundle.num_classes,
                                     bundle.masks["test"])
        metrics_rows.append({"seed": seed, "accuracy": acc, "specificity": spec_val})
        suffix = f"_seed{seed}" if len(seeds) > 1 else ""
        _write_csv(os.path.join(args.output_dir, f"history{suffix}.csv"),
                   ["epoch", "loss", "train_acc", "val_acc"],
                   [[h["epoch"], _fmt(h["loss"]), _fmt(h["train_acc"]),
                     _fmt(h["val_acc"])] for h in history])
        model.save_checkpoint(params,
                              os.path.join(args.output_dir, f"checkpoint{suffix}.json"))
    accs = [m["accuracy"] for m in metrics_rows]
    specs = [m["specificity"] for m in metrics_rows]
    _write_json(os.path.join(args.output_dir, "metrics.json"),
                {"model": args.model, "per_seed": metrics_rows,
                 "accuracy_mean": float(np.mean(accs)),
                 "accuracy_std": float(np.std(accs)),
                 "specificity_mean": float(np.mean(specs))})
    return 0


def cmd_synth(args) -> int:
    if args.generator == "sbm":
        bundle = sbm_generate(args.nodes, args.classes, args.p_in, args.p_out,
                              args.separation, args.noise, args.seed)
    elif args.generator == "barbell":
        bundle = barbell_generate(args.clique, args.bridge, seed=args.seed)
    elif args.generator == "demo14":
        bundle = demo14_graph()
    else:
        raise ValueError(f"unknown generator {args.generator!r}")
    if args.split:
        fractions = [float(f) for f in args.split.split(",")]
        bundle = split_bundle(bundle, fractions, args.seed)
    save_bundle(bundle, args.output_dir)
    return 0


def cmd_demo_ifs(args) -> int:
    """Score the demo graph, drop the lowest-scored nodes' edges, rescore."""
    os.makedirs(args.output_dir, exist_ok=True)
    bundle = demo14_graph()
    params = flow.ScoreParams()
    spec = flow.AggregationSpec()
    layers = args.layers or bundle.metadata["score_layers"]
    schedule = flow.ScheduleK("constant", 0.0, layers)

    _, _, before, util_before = flow.ifc_forward(
        bundle.graph, bundle.features, spec, params, schedule)
    planted = bundle.metadata["planted_low_nodes"]
    low = np.argsort(before.values)[:len(planted)]
    removed = [(int(u), int(v)) for u, v in bundle.graph.edge_list
               if u in low or v in low]
    filtered = graphs.remove_edges(bundle.graph, removed)
    _, _, after, util_after = flow.ifc_forward(
        filtered, bundle.features, spec, params, schedule)

    _write_csv(os.path.join(args.output_dir, "scores_before.csv"),
               ["node_id", "ifs_score"],
               [[i, _fmt(v)] for i, v in enumerate(before.values)])
    _write_csv(os.path.join(args.output_dir, "scores_after.csv"),
               ["node_id", "ifs_score"],
               [[i, _fmt(v)] for i, v in enumerate(after.values)])
    _write_json(os.path.join(args.output_dir, "summary.json"),
                {"mean_before": util_before, "mean_after": util_after,
                 "removed_edges": removed,
                 "planted_low_nodes": planted,
                 "lowest_scored_nodes": sorted(int(i) for i in low)})
    return 0


def _add_flow_flags(p):
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--l", type=float, default=1.0,
                   help="weight of the mean term in the score denominator")
    p.add_argument("--m", type=float, default=1.0,
                   help="weight of the variance term in the score numerator")
    p.add_argument("--estimator", choices=["welford", "ema"], default="welford")
    p.add_argument("--ema-decay", type=float, default=0.3)
    p.add_argument("--schedule", choices=["constant", "linear"], default="constant")
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="per-node flow statistics and scores")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    _add_flow_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("filter", help="one-shot measure-guided edge filtering")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--measure", choices=rewiring.MEASURES, default="ifs")
    p.add_argument("--k", type=int, required=True)
    _add_flow_flags(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("condense", help="complete graph over top-scored nodes")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--measure", choices=rewiring.MEASURES, default="ifs")
    p.add_argument("--q", type=int, required=True)
    _add_flow_flags(p)
    p.set_defaults(func=cmd_condense)

    p = sub.add_parser("compare", help="homophily shifts across measures")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--measures", default=",".join(rewiring.MEASURES))
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--timeout-ms", type=float, default=30 * 60 * 1000.0,
                   help="per-measure budget before an OOT row (default 30 min)")
    _add_flow_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("train", help="train a model and report test metrics")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--model", choices=["gcn", "hetero", "dual"], default="gcn")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--seeds", default="0")
    _add_flow_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="write a synthetic bundle")
    p.add_argument("--generator", choices=["sbm", "barbell", "demo14"],
                   required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--nodes", type=int, default=300)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--clique", type=int, default=10)
    p.add_argument("--bridge", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default=None,
                   help="train,val,test fractions, e.g. 0.6,0.2,0.2")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("demo-ifs", help="scores before/after planted-edge removal")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--layers", type=int, default=None)
    p.set_defaults(func=cmd_demo_ifs)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single machine-parseable line per contract
        msg = str(exc).replace("\n", " ")
        print(f"error:{type(exc).__name__}:{msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
