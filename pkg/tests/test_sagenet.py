"""Network forward, hand-written gradients, optimizer, and training."""

import hashlib
import struct

import numpy as np
import pytest

from deforma._segops import (
    HAVE_NUMBA,
    _scatter_rows_add_py,
    _seg_max_argmax_py,
    _seg_sum_py,
    scatter_rows_add,
    seg_max_argmax,
    seg_sum,
)
from deforma.loadcase import SPLIT_TRAIN, SPLIT_VAL, Dataset, LoadCase, Sample
from deforma.meshgraph import DeformationGraph
from deforma.sagenet import (
    LAYER_GCN_MEAN,
    LAYER_GRAPH_CONV,
    LAYER_SAGE_MAX,
    Checkpoint,
    CheckpointFormatError,
    ModelConfig,
    NonFiniteActivationError,
    TrainConfig,
    TrainingDivergedError,
    adamw_step,
    forward,
    init_checkpoint,
    load_checkpoint,
    loss_and_gradients,
    predict,
    sage_layer,
    save_checkpoint,
    train,
    _cosine_lr,
    _forward_cached,
)


def make_graph(
    n: int, edge_list: list[tuple[int, int]], features: np.ndarray
) -> DeformationGraph:
    """Hand-rolled symmetric CSR graph, independent of meshgraph assembly."""
    if edge_list:
        edges = np.array(
            sorted({tuple(sorted(e)) for e in edge_list}), dtype=np.int64
        )
    else:
        edges = np.empty((0, 2), dtype=np.int64)
    if edges.size:
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        order = np.lexsort((cols, rows))
        indices = cols[order]
        indptr = np.zeros(n + 1, np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    else:
        indices = np.empty(0, np.int64)
        indptr = np.zeros(n + 1, np.int64)
    return DeformationGraph(
        n_nodes=n,
        edges=edges,
        edge_kinds=np.zeros(edges.shape[0], np.uint8),
        indptr=indptr,
        indices=indices,
        csr_kinds=np.zeros(indices.shape[0], np.uint8),
        node_features=np.asarray(features, dtype=np.float64),
    )


def random_graph(seed: int, n: int = 10) -> tuple[DeformationGraph, np.ndarray]:
    rng = np.random.default_rng(seed)
    edge_list = [
        (int(a), int(b)) for a, b in rng.integers(0, n, (2 * n, 2)) if a != b
    ]
    X = rng.normal(size=(n, 3))
    T = rng.normal(size=(n, 3))
    return make_graph(n, edge_list, X), T


def randomize_params_alive(
    checkpoint: Checkpoint, graph: DeformationGraph
) -> None:
    """Overwrite weights so no stage's ReLU is fully dead.

    The default tiny-scale init can zero out a whole stage on a toy
    graph, which would make gradient checks vacuous.
    """
    for seed in range(7, 64):
        rng = np.random.default_rng(seed)
        for name in checkpoint.params:
            checkpoint.params[name] = rng.uniform(
                -0.8, 0.8, checkpoint.params[name].shape
            )
        cache = _forward_cached(graph, checkpoint)
        if (cache["h1"] > 0).any() and all(
            (h > 0).any() for h in cache["hs"]
        ):
            return
    raise RuntimeError("no seed kept all stages alive")


class TestSegmentOps:
    def test_numba_path_active(self):
        assert HAVE_NUMBA

    def test_matches_python_fallback_bitwise(self):
        rng = np.random.default_rng(3)
        n, d = 40, 6
        edge_list = [
            (int(a), int(b)) for a, b in rng.integers(0, n, (80, 2)) if a != b
        ]
        g = make_graph(n, edge_list, np.zeros((n, 3)))
        H = rng.normal(size=(n, d))
        out_nb, arg_nb = seg_max_argmax(g.indptr, g.indices, H)
        out_py, arg_py = _seg_max_argmax_py(g.indptr, g.indices, H)
        np.testing.assert_array_equal(out_nb, out_py)
        np.testing.assert_array_equal(arg_nb, arg_py)
        np.testing.assert_array_equal(
            seg_sum(g.indptr, g.indices, H), _seg_sum_py(g.indptr, g.indices, H)
        )
        G = rng.normal(size=(n, d))
        acc_nb = np.zeros((n, d))
        acc_py = np.zeros((n, d))
        scatter_rows_add(arg_nb, G, acc_nb)
        _scatter_rows_add_py(arg_py, G, acc_py)
        np.testing.assert_array_equal(acc_nb, acc_py)

    def test_max_tie_routes_to_lowest_index(self):
        # node 0 sees identical vectors at neighbors 1 and 2
        g = make_graph(3, [(0, 1), (0, 2)], np.zeros((3, 3)))
        H = np.array([[5.0, 5.0], [2.0, 2.0], [2.0, 2.0]])
        _, arg = seg_max_argmax(g.indptr, g.indices, H)
        assert arg[0].tolist() == [1, 1]

    def test_empty_row_zero_and_negative_max_kept(self):
        g = make_graph(3, [(0, 1)], np.zeros((3, 3)))
        H = np.array([[-3.0], [-7.0], [4.0]])
        out, arg = seg_max_argmax(g.indptr, g.indices, H)
        assert out[0, 0] == -7.0 and arg[0, 0] == 1
        assert out[2, 0] == 0.0 and arg[2, 0] == -1


class TestLayer:
    def test_identity_configuration(self):
        g = make_graph(4, [(0, 1), (2, 3)], np.zeros((4, 3)))
        h = np.abs(np.random.default_rng(1).normal(size=(4, 6)))
        eye = np.eye(6)
        out = sage_layer(h, g, eye, np.zeros((6, 6)))
        np.testing.assert_array_equal(out, h)

    def test_path_graph_hand_values(self):
        g = make_graph(3, [(0, 1), (1, 2)], np.zeros((3, 3)))
        h = np.array([[1.0], [2.0], [3.0]])
        one = np.ones((1, 1))
        out = sage_layer(h, g, one, one)
        np.testing.assert_array_equal(out, [[3.0], [5.0], [5.0]])

    def test_isolated_node_uses_self_term_only(self):
        g = make_graph(3, [(0, 1)], np.zeros((3, 3)))
        h = np.array([[1.0], [2.0], [5.0]])
        w_self = np.array([[2.0]])
        w_neigh = np.array([[10.0]])
        out = sage_layer(h, g, w_self, w_neigh)
        assert out[2, 0] == 10.0

    def test_gcn_mean_includes_self(self):
        g = make_graph(3, [(0, 1), (1, 2)], np.zeros((3, 3)))
        h = np.array([[1.0], [2.0], [3.0]])
        one = np.ones((1, 1))
        out = sage_layer(h, g, one, one, kind=LAYER_GCN_MEAN)
        np.testing.assert_allclose(out, [[1.5], [2.0], [2.5]])

    def test_graphconv_sums_neighbors(self):
        g = make_graph(3, [(0, 1), (1, 2)], np.zeros((3, 3)))
        h = np.array([[1.0], [2.0], [3.0]])
        one = np.ones((1, 1))
        out = sage_layer(h, g, one, one, kind=LAYER_GRAPH_CONV)
        np.testing.assert_array_equal(out, [[3.0], [6.0], [5.0]])

    def test_negative_preactivation_clipped(self):
        g = make_graph(2, [(0, 1)], np.zeros((2, 3)))
        h = np.array([[1.0], [2.0]])
        out = sage_layer(h, g, -np.ones((1, 1)), np.zeros((1, 1)))
        np.testing.assert_array_equal(out, [[0.0], [0.0]])

    def test_shape_mismatch_rejected(self):
        g = make_graph(2, [(0, 1)], np.zeros((2, 3)))
        with pytest.raises(ValueError, match="shape"):
            sage_layer(np.zeros((2, 5)), g, np.eye(4), np.eye(4))


class TestForward:
    def test_zero_features_zero_biases_zero_output(self):
        g, _ = random_graph(0)
        g = make_graph(g.n_nodes, [tuple(e) for e in g.edges.tolist()],
                       np.zeros((g.n_nodes, 3)))
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=2, rng_seed=2))
        for name in ("projection.bias", "head1.bias", "head2.bias"):
            ck.params[name][:] = 0.0
        np.testing.assert_array_equal(forward(g, ck), np.zeros((g.n_nodes, 3)))

    def test_permutation_equivariance_exact(self):
        rng = np.random.default_rng(5)
        n = 20
        edge_list = [
            (int(a), int(b)) for a, b in rng.integers(0, n, (40, 2)) if a != b
        ]
        X = rng.normal(size=(n, 3))
        g = make_graph(n, edge_list, X)
        ck = init_checkpoint(ModelConfig(hidden_dim=8, n_layers=3, rng_seed=4))
        randomize_params_alive(ck, g)
        y = forward(g, ck)

        perm = rng.permutation(n)
        inv = np.argsort(perm)
        permuted_edges = [(int(perm[a]), int(perm[b])) for a, b in edge_list]
        g_perm = make_graph(n, permuted_edges, X[inv])
        y_perm = forward(g_perm, ck)
        np.testing.assert_array_equal(y_perm[perm], y)

    def test_jk_single_layer_matches_plain(self):
        g, _ = random_graph(6)
        plain = init_checkpoint(
            ModelConfig(hidden_dim=6, n_layers=1, rng_seed=3)
        )
        jk = Checkpoint(
            config=ModelConfig(
                hidden_dim=6, n_layers=1, use_jumping_knowledge=True, rng_seed=3
            ),
            params={k: v.copy() for k, v in plain.params.items()},
        )
        np.testing.assert_array_equal(forward(g, plain), forward(g, jk))

    def test_nonfinite_input_diagnosed(self):
        g, _ = random_graph(7)
        bad = g.node_features.copy()
        bad[2, 1] = np.inf
        g_bad = make_graph(g.n_nodes, [tuple(e) for e in g.edges.tolist()], bad)
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=1))
        with pytest.raises(NonFiniteActivationError, match="input"):
            forward(g_bad, ck)

    def test_nonfinite_layer_named(self):
        g, _ = random_graph(8)
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=3, rng_seed=1))
        ck.params["layer1.w_self"][0, 0] = np.nan
        with pytest.raises(NonFiniteActivationError, match="layer1"):
            forward(g, ck)

    def test_locality_k_hops(self):
        # 12-node path; 3 layers reach exactly 3 hops
        n = 12
        edge_list = [(i, i + 1) for i in range(n - 1)]
        rng = np.random.default_rng(9)
        X = rng.normal(size=(n, 3))
        g = make_graph(n, edge_list, X)
        ck = init_checkpoint(ModelConfig(hidden_dim=6, n_layers=3, rng_seed=2))
        randomize_params_alive(ck, g)
        y = forward(g, ck)

        X2 = X.copy()
        X2[7] += 3.0
        g2 = make_graph(n, edge_list, X2)
        y2 = forward(g2, ck)
        # nodes 0..3 are at least 4 hops from node 7: bit-identical
        np.testing.assert_array_equal(y2[:4], y[:4])
        assert not np.array_equal(y2[7], y[7])


def fd_loss(graph, checkpoint, target, name, idx, eps=1e-6):
    p = checkpoint.params[name]
    orig = p[idx]
    p[idx] = orig + eps
    up = float(np.mean((forward(graph, checkpoint) - target) ** 2))
    p[idx] = orig - eps
    down = float(np.mean((forward(graph, checkpoint) - target) ** 2))
    p[idx] = orig
    return (up - down) / (2.0 * eps)


class TestGradients:
    @pytest.mark.parametrize(
        "kind", [LAYER_SAGE_MAX, LAYER_GCN_MEAN, LAYER_GRAPH_CONV]
    )
    @pytest.mark.parametrize("jk", [False, True])
    def test_finite_difference_all_parameters(self, kind, jk):
        g, T = random_graph(0)
        cfg = ModelConfig(
            hidden_dim=4, n_layers=2, use_jumping_knowledge=jk,
            layer_kind=kind, rng_seed=1,
        )
        ck = init_checkpoint(cfg)
        randomize_params_alive(ck, g)
        _, grads = loss_and_gradients(g, ck, T)
        for name, p in ck.params.items():
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                fd = fd_loss(g, ck, T, name, idx)
                err = abs(fd - grads[name][idx]) / max(1.0, abs(fd))
                assert err < 1e-6, f"{name}{idx}: fd={fd} got={grads[name][idx]}"

    def test_perfect_prediction_zero_gradients(self):
        g, _ = random_graph(2)
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=1, rng_seed=5))
        target = forward(g, ck)
        loss, grads = loss_and_gradients(g, ck, target)
        assert loss == 0.0
        assert all(np.all(v == 0.0) for v in grads.values())

    def test_quadratic_target_scaling(self):
        g, T = random_graph(3)
        cfg = ModelConfig(hidden_dim=4, n_layers=1)
        ck = init_checkpoint(cfg)
        for name in ck.params:
            ck.params[name][:] = 0.0
        l1, _ = loss_and_gradients(g, ck, T)
        l2, _ = loss_and_gradients(g, ck, 2.0 * T)
        assert l2 == pytest.approx(4.0 * l1, rel=1e-12)

    def test_target_shape_rejected(self):
        g, _ = random_graph(4)
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=1))
        with pytest.raises(ValueError, match="shape"):
            loss_and_gradients(g, ck, np.zeros((3, 3)))


class TestAdamW:
    def test_zero_grads_zero_decay_fixed_point(self):
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=1, rng_seed=6))
        grads = {k: np.zeros_like(v) for k, v in ck.params.items()}
        out = adamw_step(ck, grads, TrainConfig(learning_rate=1e-3, weight_decay=0.0))
        for name in ck.params:
            np.testing.assert_array_equal(out.params[name], ck.params[name])
        assert out.opt_step == 1

    def test_first_step_is_signed_unit_step(self):
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=1, rng_seed=6))
        rng = np.random.default_rng(0)
        grads = {
            k: rng.normal(size=v.shape) + np.sign(rng.normal(size=v.shape))
            for k, v in ck.params.items()
        }
        lr = 1e-3
        out = adamw_step(ck, grads, TrainConfig(learning_rate=lr, weight_decay=0.0))
        for name, g in grads.items():
            delta = out.params[name] - ck.params[name]
            np.testing.assert_allclose(
                delta, -lr * np.sign(g), rtol=0, atol=lr * 1e-4
            )

    def test_decay_shrinks_before_moment_update(self):
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=1, rng_seed=6))
        grads = {k: np.zeros_like(v) for k, v in ck.params.items()}
        lr, wd = 1e-2, 0.5
        out = adamw_step(ck, grads, TrainConfig(learning_rate=lr, weight_decay=wd))
        for name in ck.params:
            np.testing.assert_array_equal(
                out.params[name], ck.params[name] * (1.0 - lr * wd)
            )

    def test_inputs_not_mutated(self):
        ck = init_checkpoint(ModelConfig(hidden_dim=4, n_layers=1, rng_seed=6))
        before = {k: v.copy() for k, v in ck.params.items()}
        grads = {k: np.ones_like(v) for k, v in ck.params.items()}
        adamw_step(ck, grads, TrainConfig())
        for name in before:
            np.testing.assert_array_equal(ck.params[name], before[name])
        assert ck.opt_step == 0


def tiny_dataset(graph: DeformationGraph, seed: int, n_train: int = 2,
                 n_val: int = 1, scale: float = 0.01) -> Dataset:
    rng = np.random.default_rng(seed)
    n = graph.n_nodes
    samples = []
    split = []
    for i in range(n_train + n_val):
        u_s = rng.normal(size=(n, 3)) * scale
        u = rng.normal(size=(n, 3)) * scale
        case = LoadCase(
            center=np.zeros(3), direction=np.array([0.0, -1.0, 0.0]),
            magnitude=1.0, radius=0.01, nodal_forces=np.zeros((n, 3)),
        )
        samples.append(Sample(u_s=u_s, u=u, case=case))
        split.append(SPLIT_TRAIN if i < n_train else SPLIT_VAL)
    return Dataset(
        mesh_ref="synthetic", samples=samples,
        split=np.array(split, dtype=np.uint8),
    )


class TestTraining:
    def test_single_sample_overfits(self):
        g, _ = random_graph(11, n=12)
        ds = tiny_dataset(g, seed=1, n_train=1, n_val=0, scale=1.0)
        cfg = ModelConfig(hidden_dim=16, n_layers=2, rng_seed=0)
        tc = TrainConfig(epochs=500, learning_rate=1e-2, weight_decay=0.0)
        ck, history = train(ds, g, cfg, tc)
        assert history["train_loss"][-1] < 1e-6 * history["train_loss"][0]

    def test_best_checkpoint_not_worse_than_final(self):
        g, _ = random_graph(12, n=12)
        ds = tiny_dataset(g, seed=2)
        cfg = ModelConfig(hidden_dim=8, n_layers=2, rng_seed=0)
        ck, history = train(ds, g, cfg, TrainConfig(epochs=40))
        val = history["val_loss"]
        sample = ds.samples[2]
        from deforma.meshgraph import with_features

        returned_val = float(
            np.mean((forward(with_features(g, sample.u_s), ck) - sample.u) ** 2)
        )
        assert returned_val == pytest.approx(min(val), rel=1e-12)
        assert returned_val <= val[-1] + 1e-18

    def test_bit_identical_reruns(self):
        g, _ = random_graph(13, n=10)
        ds = tiny_dataset(g, seed=3)
        cfg = ModelConfig(hidden_dim=6, n_layers=2, rng_seed=2)
        tc = TrainConfig(epochs=10, rng_seed=5)
        ck1, h1 = train(ds, g, cfg, tc)
        ck2, h2 = train(ds, g, cfg, tc)
        assert h1 == h2
        for name in ck1.params:
            np.testing.assert_array_equal(ck1.params[name], ck2.params[name])

    def test_nan_loss_aborts_with_location(self):
        g, _ = random_graph(14, n=8)
        ds = tiny_dataset(g, seed=4, n_train=1, n_val=0)
        ds.samples[0].u[:] = 1e200
        cfg = ModelConfig(hidden_dim=4, n_layers=1, rng_seed=0)
        with pytest.raises(TrainingDivergedError, match="epoch 0"):
            train(ds, g, cfg, TrainConfig(epochs=3))

    def test_empty_train_split_rejected(self):
        g, _ = random_graph(15, n=8)
        ds = tiny_dataset(g, seed=5, n_train=1, n_val=0)
        ds.split[:] = SPLIT_VAL
        with pytest.raises(ValueError, match="train split"):
            train(ds, g, ModelConfig(hidden_dim=4, n_layers=1), TrainConfig(epochs=1))

    def test_lr_schedule_decays_from_peak(self):
        rates = [_cosine_lr(1e-3, e, 200) for e in range(200)]
        assert rates[0] == 1e-3
        assert all(a > b for a, b in zip(rates, rates[1:]))
        assert all(r > 0.0 for r in rates)
        assert rates[-1] < 1e-6
        assert _cosine_lr(1e-3, 0, 1) == 1e-3

    def test_train_steps_match_manual_schedule(self):
        from dataclasses import replace

        from deforma.meshgraph import with_features

        g, _ = random_graph(16, n=10)
        ds = tiny_dataset(g, seed=6, n_train=2, n_val=0)
        cfg = ModelConfig(hidden_dim=6, n_layers=1, rng_seed=3)
        tc = TrainConfig(epochs=2, rng_seed=7)
        got, _ = train(ds, g, cfg, tc)

        ck = init_checkpoint(cfg)
        rng = np.random.default_rng(tc.rng_seed)
        train_idx = ds.indices_of(SPLIT_TRAIN)
        for epoch in range(tc.epochs):
            lr = _cosine_lr(tc.learning_rate, epoch, tc.epochs)
            for si in rng.permutation(train_idx):
                sample = ds.samples[int(si)]
                _, grads = loss_and_gradients(
                    with_features(g, sample.u_s), ck, sample.u
                )
                ck = adamw_step(ck, grads, replace(tc, learning_rate=lr))
        for name in got.params:
            np.testing.assert_array_equal(got.params[name], ck.params[name])


class TestStandardization:
    def scaled_pair(self, seed: int = 21):
        g, T = random_graph(seed)
        cfg = ModelConfig(hidden_dim=4, n_layers=2, rng_seed=3)
        ck = init_checkpoint(cfg)
        randomize_params_alive(ck, g)
        scaled = ck.copy()
        scaled.feature_scale = 2.0
        scaled.target_scale = 3.0
        return g, T, ck, scaled

    def test_scaled_forward_matches_manual_rescaling(self):
        g, _, ck, scaled = self.scaled_pair()
        halved = make_graph(
            g.n_nodes, [tuple(e) for e in g.edges], g.node_features / 2.0
        )
        np.testing.assert_array_equal(
            forward(g, scaled), 3.0 * forward(halved, ck)
        )

    def test_gradients_exact_with_scales(self):
        g, T, _, scaled = self.scaled_pair()
        _, grads = loss_and_gradients(g, scaled, T)
        for name, p in scaled.params.items():
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                fd = fd_loss(g, scaled, T, name, idx)
                err = abs(fd - grads[name][idx]) / max(1.0, abs(fd))
                assert err < 1e-6, f"{name}{idx}"

    def test_train_bakes_split_statistics(self):
        g, _ = random_graph(22, n=12)
        ds = tiny_dataset(g, seed=6, n_train=2, n_val=1)
        # zero a few feature rows; they must not dilute the scale
        ds.samples[0].u_s[:5] = 0.0
        ck, _ = train(
            ds,
            g,
            ModelConfig(hidden_dim=4, n_layers=1, rng_seed=0),
            TrainConfig(epochs=1, standardize=True),
        )
        feats = np.vstack([ds.samples[0].u_s[5:], ds.samples[1].u_s])
        targs = np.vstack([ds.samples[0].u, ds.samples[1].u])
        assert ck.feature_scale == pytest.approx(
            np.sqrt(np.mean(feats**2)), rel=1e-12
        )
        assert ck.target_scale == pytest.approx(
            np.sqrt(np.mean(targs**2)), rel=1e-12
        )

    def test_off_by_default_keeps_unit_scales(self):
        g, _ = random_graph(23, n=10)
        ds = tiny_dataset(g, seed=7)
        ck, _ = train(
            ds,
            g,
            ModelConfig(hidden_dim=4, n_layers=1, rng_seed=0),
            TrainConfig(epochs=1),
        )
        assert ck.feature_scale == 1.0 and ck.target_scale == 1.0

    def test_loss_reported_in_meters_either_way(self):
        g, T, ck, scaled = self.scaled_pair()
        loss_scaled, _ = loss_and_gradients(g, scaled, T)
        manual = float(np.mean((forward(g, scaled) - T) ** 2))
        assert loss_scaled == pytest.approx(manual, rel=1e-15)

    def test_round_trip_preserves_scales(self, tmp_path):
        _, _, _, scaled = self.scaled_pair()
        path = str(tmp_path / "scaled.ckpt")
        save_checkpoint(scaled, path)
        back = load_checkpoint(path)
        assert back.feature_scale == scaled.feature_scale
        assert back.target_scale == scaled.target_scale

    def test_corrupt_scale_rejected(self, tmp_path):
        _, _, _, scaled = self.scaled_pair()
        path = str(tmp_path / "scaled.ckpt")
        save_checkpoint(scaled, path)
        blob = bytearray(open(path, "rb").read())
        # scales sit right after the fixed-size config block
        off = 4 + struct.calcsize("<IIBBq")
        struct.pack_into("<d", blob, off, 0.0)
        body = bytes(blob[:-32])
        open(path, "wb").write(body + hashlib.sha256(body).digest())
        with pytest.raises(CheckpointFormatError, match="scale"):
            load_checkpoint(path)


class TestPredict:
    def test_matches_forward_and_times(self):
        g, _ = random_graph(16)
        ck = init_checkpoint(ModelConfig(hidden_dim=6, n_layers=2, rng_seed=1))
        y, elapsed = predict(g, ck)
        np.testing.assert_array_equal(y, forward(g, ck))
        assert elapsed > 0.0

    def test_repeat_identical(self):
        g, _ = random_graph(17)
        ck = init_checkpoint(ModelConfig(hidden_dim=6, n_layers=2, rng_seed=1))
        y1, _ = predict(g, ck)
        y2, _ = predict(g, ck)
        np.testing.assert_array_equal(y1, y2)

    def test_single_precision_close_to_double(self):
        g, _ = random_graph(18)
        ck = init_checkpoint(ModelConfig(hidden_dim=8, n_layers=2, rng_seed=3))
        randomize_params_alive(ck, g)
        y64, _ = predict(g, ck)
        y32, _ = predict(g, ck, single_precision=True)
        np.testing.assert_allclose(y32, y64, rtol=1e-4, atol=1e-5)


class TestCheckpointIO:
    def make_trained(self, tmp_path):
        g, T = random_graph(19)
        cfg = ModelConfig(
            hidden_dim=6, n_layers=2, use_jumping_knowledge=True, rng_seed=9
        )
        ck = init_checkpoint(cfg)
        _, grads = loss_and_gradients(g, ck, T)
        ck = adamw_step(ck, grads, TrainConfig())
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(ck, path)
        return ck, path

    def test_round_trip(self, tmp_path):
        ck, path = self.make_trained(tmp_path)
        back = load_checkpoint(path)
        assert back.config == ck.config
        assert back.opt_step == ck.opt_step
        for name in ck.params:
            np.testing.assert_array_equal(back.params[name], ck.params[name])
            np.testing.assert_array_equal(back.opt_m[name], ck.opt_m[name])
            np.testing.assert_array_equal(back.opt_v[name], ck.opt_v[name])

    def test_tampering_detected(self, tmp_path):
        _, path = self.make_trained(tmp_path)
        blob = bytearray(open(path, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        with pytest.raises(CheckpointFormatError, match="integrity"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "bad.ckpt")
        open(path, "wb").write(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        _, path = self.make_trained(tmp_path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[: len(blob) // 2])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)


class TestModelConfig:
    def test_odd_hidden_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(hidden_dim=7)

    def test_tiny_hidden_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(hidden_dim=2)

    def test_zero_layers_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(n_layers=0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="layer_kind"):
            ModelConfig(layer_kind="attention")

    def test_head_dims(self):
        assert ModelConfig(hidden_dim=80).head_dims == (80, 40, 3)

    def test_bad_train_config_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(weight_decay=-0.1)
