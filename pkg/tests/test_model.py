import numpy as np
import pytest

from graphflow import flow
from graphflow.data_io import sbm_generate, split_bundle
from graphflow.flow import ScheduleK, ScoreParams
from graphflow.graphs import build_graph
from graphflow.model import (DivergedLoss, FlowConfig, TrainConfig, accuracy,
                             dual_forward, forward, gcn_forward, hetero_forward,
                             init_params, jk_readout, load_checkpoint, loss_and_grads,
                             save_checkpoint, softmax_cross_entropy, specificity,
                             train)

import oracles


@pytest.fixture
def tiny_bundle():
    b = sbm_generate(10, 2, 0.5, 0.3, 1.0, 0.3, 3)
    return split_bundle(b, (0.6, 0.2, 0.2), 0)


def _identity_gcn_params(n_feats, layers):
    params = init_params("gcn", n_feats, n_feats, n_feats, layers, seed=0)
    for t in range(layers):
        params.weights[f"gcn{t}"] = np.eye(n_feats)
    return params


class TestGcnForward:
    def test_identity_weight_edgeless(self):
        g = build_graph(3, [])
        x = np.array([[1.0, -2.0], [0.5, 3.0], [-1.0, 0.0]])
        params = _identity_gcn_params(2, 2)
        out = gcn_forward(g, x, params, 0)       # hidden layer: rectified
        assert np.array_equal(out, np.maximum(x, 0.0))
        out = gcn_forward(g, x, params, 1)       # logits layer: linear
        assert np.array_equal(out, x)

    def test_k2_equal_features_symmetry(self):
        g = build_graph(2, [(0, 1)])
        x = np.array([[1.0, 2.0], [1.0, 2.0]])
        params = init_params("gcn", 2, 4, 2, 2, seed=5)
        out = gcn_forward(g, x, params, 0)
        assert np.allclose(out[0], out[1])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        g = build_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)])
        x = rng.normal(size=(6, 3))
        params = init_params("gcn", 3, 4, 2, 2, seed=1)
        got = gcn_forward(g, x, params, 0)
        ref = np.maximum(oracles.naive_gcn_pass(g, x @ params.weights["gcn0"]), 0.0)
        assert np.abs(got - ref).max() < 1e-12


class TestHeteroForward:
    def test_first_layer_ignores_edges(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 3))
        params = init_params("hetero", 3, 4, 2, 3, seed=2)
        g1 = build_graph(5, [(0, 1), (2, 3)])
        g2 = build_graph(5, [(0, 4), (1, 2), (3, 4)])
        assert np.array_equal(hetero_forward(g1, x, params, 0),
                              hetero_forward(g2, x, params, 0))

    def test_edgeless_any_layer_is_self_path(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 4))
        params = init_params("hetero", 4, 4, 2, 3, seed=3)
        g = build_graph(4, [])
        got = hetero_forward(g, x, params, 1)
        ref = np.maximum(x @ params.weights["self1"], 0.0)
        assert np.array_equal(got, ref)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        g = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        x = rng.normal(size=(5, 4))
        params = init_params("hetero", 4, 4, 2, 2, seed=4)
        got = hetero_forward(g, x, params, 1)
        agg = oracles.naive_message_pass(g, x, combine="mean", include_self=False)
        ref = np.maximum(agg @ params.weights["nbr1"] + x @ params.weights["self1"], 0.0)
        assert np.abs(got - ref).max() < 1e-12


class TestJkReadout:
    def test_single_layer_plain_linear(self):
        params = init_params("hetero", 3, 4, 2, 1, seed=0)
        h = np.random.default_rng(0).normal(size=(5, 4))
        assert np.array_equal(jk_readout([h], params), h @ params.weights["jk"])

    def test_zero_weights_zero_output(self):
        params = init_params("hetero", 3, 4, 2, 2, seed=0)
        params.weights["jk"][:] = 0.0
        outs = [np.ones((5, 4)), np.ones((5, 4))]
        assert (jk_readout(outs, params) == 0).all()

    def test_concat_width(self):
        params = init_params("hetero", 3, 4, 6, 3, seed=0)
        assert params.weights["jk"].shape == (3 * 4, 6)


class TestDualForward:
    def test_logit_shape(self, tiny_bundle):
        b = tiny_bundle
        params = init_params("dual", b.features.shape[1], 5, 2, 2, seed=0,
                             branch_dim=4)
        cfg = FlowConfig(ScoreParams(), ScheduleK("constant", 0.0, 2))
        logits = dual_forward(b.graph, b.features, params, cfg, q=4)
        assert logits.shape == (10, 2)

    def test_degenerate_pipeline_matches_branch_recompute(self, tiny_bundle):
        # q = |V| and theta = 0: compose the two branches by hand
        b = tiny_bundle
        n, d = b.features.shape
        params = init_params("dual", d, 5, 2, 2, seed=1, branch_dim=4)
        cfg = FlowConfig(ScoreParams(), ScheduleK("constant", 0.0, 2))
        logits = dual_forward(b.graph, b.features, params, cfg, q=n)

        h = b.features
        for t in range(2):
            h = np.maximum(flow.gcn_adjacency(b.graph) @ (h @ params.weights[f"gcn{t}"]), 0.0)
        ho_out = h @ params.weights["ho_out"]

        _, _, scores, _ = flow.ifc_forward(
            b.graph, b.features, [flow.AggregationSpec(transform="gcn_normalized",
                                                       weight=params.weights[f"gcn{t}"],
                                                       activation="relu")
                                  for t in range(2)],
            ScoreParams(), ScheduleK("constant", 0.0, 2))
        from graphflow.rewiring import heterophilic_condensation
        kq, node_map = heterophilic_condensation(b.graph, scores, n)
        sel = np.asarray(node_map)
        xs = b.features[sel]
        h1 = np.maximum(xs @ params.weights["self0"], 0.0)
        from graphflow.model import _mean_adjacency
        h2 = np.maximum((_mean_adjacency(kq) @ h1) @ params.weights["nbr1"]
                        + h1 @ params.weights["self1"], 0.0)
        he = np.concatenate([h1, h2], axis=1) @ params.weights["jk"]
        he_full = np.zeros((n, 4))
        he_full[sel] = he
        ref = np.concatenate([ho_out, he_full], axis=1) @ params.weights["out"]
        assert np.abs(logits - ref).max() < 1e-12


class TestLoss:
    def test_uniform_logits_log_c(self):
        logits = np.zeros((6, 4))
        labels = np.array([0, 1, 2, 3, 0, 1])
        mask = np.ones(6, dtype=bool)
        loss, _ = softmax_cross_entropy(logits, labels, mask)
        assert loss == pytest.approx(np.log(4.0))

    def test_confident_correct_logits(self):
        labels = np.array([0, 1])
        logits = np.array([[50.0, 0.0], [0.0, 50.0]])
        loss, _ = softmax_cross_entropy(logits, labels, np.ones(2, dtype=bool))
        assert loss < 1e-15

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros((2, 2)), np.zeros(2, dtype=int),
                                  np.zeros(2, dtype=bool))


def _fd_reference(kind, bundle, seed):
    g, x, labels = bundle.graph, bundle.features, bundle.labels
    mask = bundle.masks["train"]
    params = init_params(kind, x.shape[1], 5, 2, 3, seed=seed, branch_dim=4)
    flow_cfg = (FlowConfig(ScoreParams(), ScheduleK("constant", 0.0, 3))
                if kind == "dual" else None)
    q = g.num_nodes if kind == "dual" else None

    def loss_fn():
        _, tape = forward(g, x, params, flow_cfg, q)
        return loss_and_grads(tape, labels, mask)[0]

    _, tape = forward(g, x, params, flow_cfg, q)
    _, grads = loss_and_grads(tape, labels, mask)
    fd = oracles.finite_diff_grads(loss_fn, params.weights, eps=1e-5)
    worst = 0.0
    for name in params.weights:
        rel = np.abs(grads[name] - fd[name]) / np.maximum(
            np.maximum(np.abs(grads[name]), np.abs(fd[name])), 1e-6)
        worst = max(worst, float(rel.max()))
    return worst


class TestGradients:
    @pytest.mark.parametrize("kind", ["gcn", "hetero", "dual"])
    def test_finite_difference_check(self, kind, tiny_bundle):
        assert _fd_reference(kind, tiny_bundle, seed=1) < 1e-4


class TestTrain:
    def test_zero_epochs_returns_initial_params(self, tiny_bundle):
        b = tiny_bundle
        cfg = TrainConfig(max_epochs=0, seed=9, hidden=4, layers=2)
        params, history = train(b.graph, b.features, b.labels, b.masks, cfg)
        ref = init_params("gcn", b.features.shape[1], 4, 2, 2, seed=9)
        assert history == []
        for k in ref.weights:
            assert np.array_equal(params.weights[k], ref.weights[k])

    def test_separable_sbm_trains(self):
        b = sbm_generate(60, 2, 0.3, 0.05, 2.0, 0.3, 1)
        b = split_bundle(b, (0.7, 0.15, 0.15), 1)
        # oracle: logistic regression on aggregated features clears the bar
        from sklearn.linear_model import LogisticRegression
        agg = flow.gcn_adjacency(b.graph) @ b.features
        clf = LogisticRegression().fit(agg[b.masks["train"]],
                                       b.labels[b.masks["train"]])
        assert clf.score(agg[b.masks["train"]], b.labels[b.masks["train"]]) >= 0.95
        cfg = TrainConfig(model="gcn", layers=2, hidden=16, learning_rate=0.01,
                          optimizer="adaptive", max_epochs=200, patience=200, seed=0)
        params, history = train(b.graph, b.features, b.labels, b.masks, cfg)
        assert max(h["train_acc"] for h in history) >= 0.95

    def test_patience_halts_on_flat_validation(self, tiny_bundle):
        b = tiny_bundle
        # zero learning rate: validation accuracy can never improve
        cfg = TrainConfig(learning_rate=0.0, max_epochs=100, patience=5, seed=0,
                          hidden=4, layers=2)
        _, history = train(b.graph, b.features, b.labels, b.masks, cfg)
        assert len(history) == 1 + 5

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged_loss_raises(self, tiny_bundle):
        b = tiny_bundle
        cfg = TrainConfig(learning_rate=1e12, max_epochs=50, patience=50, seed=0,
                          hidden=4, layers=2)
        with pytest.raises(DivergedLoss):
            train(b.graph, b.features, b.labels, b.masks, cfg)

    def test_fixed_seed_bit_identical(self, tiny_bundle):
        b = tiny_bundle
        cfg = TrainConfig(max_epochs=20, patience=20, seed=3, hidden=4, layers=2)
        p1, h1 = train(b.graph, b.features, b.labels, b.masks, cfg)
        p2, h2 = train(b.graph, b.features, b.labels, b.masks, cfg)
        assert h1 == h2
        for k in p1.weights:
            assert np.array_equal(p1.weights[k], p2.weights[k])

    def test_invalid_patience_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(patience=0)


class TestPermutationEquivariance:
    @pytest.mark.parametrize("kind", ["gcn", "dual"])
    def test_logits_permute_with_nodes(self, kind):
        b = sbm_generate(12, 2, 0.4, 0.2, 1.0, 0.3, 8)
        rng = np.random.default_rng(5)
        perm = rng.permutation(12)
        params = init_params(kind, b.features.shape[1], 5, 2, 2, seed=2,
                             branch_dim=4)
        # theta = 0: edge keys tie whenever one node keys several of its
        # edges, and the id tie-break is not label-invariant
        flow_cfg = (FlowConfig(ScoreParams(), ScheduleK("constant", 0.0, 2))
                    if kind == "dual" else None)
        q = 6 if kind == "dual" else None
        logits, _ = forward(b.graph, b.features, params, flow_cfg, q)
        g_perm = build_graph(12, np.stack([perm[b.graph.edge_list[:, 0]],
                                           perm[b.graph.edge_list[:, 1]]], axis=1))
        x_perm = np.empty_like(b.features)
        x_perm[perm] = b.features
        logits_perm, _ = forward(g_perm, x_perm, params, flow_cfg, q)
        assert np.allclose(logits_perm[perm], logits, atol=1e-9)


class TestMetrics:
    def test_perfect_predictor(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        mask = np.ones(6, dtype=bool)
        assert accuracy(labels, labels, mask) == 1.0
        assert specificity(labels, labels, 3, mask) == 1.0

    def test_majority_class_predictor(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        preds = np.zeros(6, dtype=int)
        mask = np.ones(6, dtype=bool)
        assert accuracy(labels, preds, mask) == pytest.approx(1 / 3)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, tiny_bundle):
        b = tiny_bundle
        params = init_params("dual", b.features.shape[1], 4, 2, 2, seed=7,
                             branch_dim=3)
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.kind == "dual" and loaded.layers == 2
        for k in params.weights:
            assert np.array_equal(loaded.weights[k], params.weights[k])
