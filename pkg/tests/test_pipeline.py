import inspect

import numpy as np
import pytest

from gkd import pipeline as pl
from gkd.data import Dataset, SplitSpec, Splits, generate_synthetic
from gkd.graph import SparseGraph, multi_threshold_graph, sym_normalize
from gkd.lpa import LPAConfig
from gkd.nn import MLPParams, ShapeError, TrainConfig, UsageError, init_mlp, mlp_forward, train_mlp

from .helpers import finite_difference_check, random_graph_edges

CFG = TrainConfig((16,), 1e-2, 0.1, 40, 0)


@pytest.fixture(scope="module")
def small():
    ds = generate_synthetic(n=200, d_node=10, d_graph=2, p_missing=0.2, seed=4, n_informative=4)
    return ds.with_splits(SplitSpec(0.6, 0.2, 0.2, 0.3, 0))


@pytest.fixture(scope="module")
def small_graph(small):
    return multi_threshold_graph(small.graph_features[small.splits.train], [0.2, 0.2])


def _arrays_equal(a: MLPParams, b: MLPParams):
    return all(np.array_equal(u, v) for u, v in zip(a.arrays(), b.arrays()))


def _toy(n=40, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, 3)) * 0.3
    X[:, 0] += np.where(y == 1, 2.0, -2.0)
    return X, y, np.eye(2)[y]


# --- teacher / pseudo labels ---------------------------------------------------


def test_teacher_fits_separable_labeled_rows():
    X, y, Y = _toy()
    mask = np.zeros(40, bool)
    mask[::4] = True
    t = pl.train_teacher(X, Y, mask, TrainConfig((8,), 1e-2, 0.0, 200, 0))
    assert (mlp_forward(t, X[mask]).argmax(axis=1) == y[mask]).all()


def test_teacher_with_full_mask_is_plain_training():
    X, _, Y = _toy()
    cfg = TrainConfig((8,), 1e-2, 0.3, 30, 2)
    assert _arrays_equal(pl.train_teacher(X, Y, np.ones(40, bool), cfg), train_mlp(X, Y, None, cfg))
    assert _arrays_equal(pl.train_teacher(X, Y, np.ones(40, bool), cfg),
                         pl.train_teacher(X, Y, np.ones(40, bool), cfg))


def test_teacher_requires_every_class():
    X, _, Y = _toy()
    mask = np.zeros(40, bool)
    mask[:5] = True  # class 0 only
    with pytest.raises(UsageError):
        pl.train_teacher(X, Y, mask, CFG)


def test_pseudo_label_dispatch():
    X, _, Y = _toy()
    t = init_mlp([3, 4, 2], seed=0)
    soft = pl.predict_proba(t, X)
    np.testing.assert_array_equal(pl.pseudo_label(t, X, Y, np.ones(40, bool)), Y)
    np.testing.assert_array_equal(pl.pseudo_label(t, X, Y, np.zeros(40, bool)), soft)
    mask = np.random.default_rng(1).random(40) < 0.5
    out = pl.pseudo_label(t, X, Y, mask)
    for i in range(40):
        np.testing.assert_array_equal(out[i], Y[i] if mask[i] else soft[i])
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_pseudo_label_shape_error():
    with pytest.raises(ShapeError):
        pl.pseudo_label(init_mlp([3, 2], seed=0), np.ones((4, 3)), np.eye(2)[[0, 1, 0, 1]],
                        np.ones(5, bool))


# --- GKD -------------------------------------------------------------------------


def test_gkd_degenerate_matches_dnn(small):
    s = small.splits
    full = Dataset(small.X, small.labels, small.graph_features,
                   splits=Splits(s.train, s.val, s.test, s.train))
    g = multi_threshold_graph(full.graph_features[s.train], [0.2, 0.2])
    model = pl.gkd_train(full, g, CFG, LPAConfig(1.0), CFG)
    np.testing.assert_array_equal(model.soft_labels, full.Y[s.train])
    dnn = pl.dnn_baseline(full, CFG)
    assert _arrays_equal(model.student, dnn)


def test_gkd_edgeless_graph_keeps_teacher_labels(small):
    n_train = int(small.splits.train.sum())
    model = pl.gkd_train(small, SparseGraph(n_train), CFG, LPAConfig(0.3), CFG)
    np.testing.assert_array_equal(model.soft_labels, model.initial_labels)


def test_gkd_graph_size_mismatch(small):
    with pytest.raises(UsageError):
        pl.gkd_train(small, SparseGraph(small.n), CFG, LPAConfig(), CFG)


def test_gkd_targets_clamped_and_on_simplex(small, small_graph):
    model = pl.gkd_train(small, small_graph, CFG, LPAConfig(0.3), CFG)
    s = small.splits
    lab = s.labeled[s.train]
    np.testing.assert_array_equal(model.soft_labels[lab], small.Y[s.train][lab])
    np.testing.assert_allclose(model.soft_labels.sum(axis=1), 1.0, atol=1e-9)
    assert model.student.in_dim == small.X.shape[1]


def test_predict_is_graph_free(small, small_graph):
    assert list(inspect.signature(pl.predict).parameters) == ["model", "X_test"]
    model = pl.gkd_train(small, small_graph, CFG, LPAConfig(0.5), CFG)
    X_train = small.X[small.splits.train]
    np.testing.assert_array_equal(pl.predict(model, X_train),
                                  pl.predict_proba(model.student, X_train))
    one = pl.predict(model, small.X[:1])
    assert one.shape == (1, 2) and abs(one.sum() - 1) < 1e-12
    with pytest.raises(ShapeError):
        pl.predict(model, np.ones((2, 3)))


def test_test_rows_never_read(small, small_graph):
    s = small.splits
    model = pl.gkd_train(small, small_graph, CFG, LPAConfig(0.5), CFG)
    keep = ~s.test
    trimmed = Dataset(small.X[keep], small.labels[keep], small.graph_features[keep],
                      splits=Splits(s.train[keep], s.val[keep], s.test[keep], s.labeled[keep]))
    other = pl.gkd_train(trimmed, small_graph, CFG, LPAConfig(0.5), CFG)
    assert _arrays_equal(model.student, other.student)
    # scrambling the test rows in place changes nothing either
    scrambled = Dataset(small.X.copy(), small.labels.copy(), small.graph_features, splits=s)
    scrambled.X[s.test] = 1e6
    scrambled.labels[s.test] = 0
    assert _arrays_equal(model.student, pl.gkd_train(scrambled, small_graph, CFG,
                                                     LPAConfig(0.5), CFG).student)


# --- DNN-JFC -----------------------------------------------------------------


def test_training_means_and_imputation():
    G = np.array([[1.0, 5.0], [np.nan, 7.0], [3.0, np.nan]])
    means = pl.training_means(G)
    np.testing.assert_array_equal(means, [2.0, 6.0])
    np.testing.assert_array_equal(pl.impute(G, means, 3), [[1, 5], [2, 7], [3, 6]])
    np.testing.assert_array_equal(pl.impute(None, means, 2), [[2, 6], [2, 6]])
    with pytest.raises(UsageError):
        pl.training_means(np.array([[np.nan], [np.nan]]))


def test_jfc_without_missing_is_concatenated_mlp():
    ds = generate_synthetic(n=100, d_node=5, d_graph=2, seed=1).with_splits(SplitSpec(0.6, 0.2, 0.2, 0.5, 0))
    s = ds.splits
    model = pl.dnn_jfc_baseline(ds, CFG)
    Z = np.hstack([ds.X, ds.graph_features])
    val = (np.hstack([ds.X[s.val], np.tile(model.means, (int(s.val.sum()), 1))]), ds.labels[s.val])
    direct = pl.train_teacher(Z[s.train], ds.Y[s.train], s.labeled[s.train], CFG, val)
    assert _arrays_equal(model.params, direct)


def test_jfc_fully_missing_test_rows(small):
    model = pl.dnn_jfc_baseline(small, CFG)
    Xt = small.X[small.splits.test]
    p = pl.predict_jfc(model, Xt)
    assert np.isfinite(p).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(pl.jfc_features(model, Xt)[:, -2:],
                                  np.tile(model.means, (Xt.shape[0], 1)))


def test_jfc_unobserved_feature_errors(small):
    G = small.graph_features.copy()
    G[:, 0] = np.nan
    ds = Dataset(small.X, small.labels, G, splits=small.splits)
    with pytest.raises(UsageError):
        pl.dnn_jfc_baseline(ds, CFG)


# --- GCN ---------------------------------------------------------------------


def test_gcn_on_empty_graph_is_mlp():
    p = init_mlp([4, 6, 2], seed=3)
    X = np.random.default_rng(0).normal(size=(7, 4))
    np.testing.assert_allclose(pl.gcn_forward(p, pl.isolated_operator(7), X), mlp_forward(p, X),
                               atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_gcn_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    g = SparseGraph(6, random_graph_edges(rng, 6, 0.5))
    A = sym_normalize(g)
    p = init_mlp([3, 4, 2], seed=rng)
    p.layers[0] = (p.layers[0][0], rng.normal(scale=0.3, size=4))
    X = rng.normal(size=(6, 3))
    T = rng.dirichlet(np.ones(2), size=6)
    mask = np.array([1, 0, 1, 1, 0, 1], bool)
    _, grads = pl.gcn_loss_and_grads(p, A, X, T, mask)
    err = finite_difference_check(p, grads, lambda q: pl.gcn_loss_and_grads(q, A, X, T, mask)[0])
    assert err < 1e-4


def test_gcn_isolated_node_matches_hand_trace():
    # node 2 has no edges: its normalized row is [0, 0, 1]
    g = SparseGraph(3, [(0, 1)])
    W1 = np.array([[1.0, -0.5], [0.25, 1.0]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[1.0, 0.0], [2.0, -1.0]])
    b2 = np.array([0.0, 0.3])
    p = MLPParams([(W1, b1), (W2, b2)])
    X = np.array([[5.0, 5.0], [-3.0, 1.0], [2.0, 1.0]])
    # hidden pre-activation of node 2: [2*1 + 1*0.25 + 0.1, 2*-0.5 + 1*1 - 0.2] = [2.35, -0.2]
    # relu -> [2.35, 0]; logits = [2.35, 0 + 0.3]
    out = pl.gcn_forward(p, sym_normalize(g), X)
    np.testing.assert_allclose(out[2], [2.35, 0.3], atol=1e-14)
    np.testing.assert_allclose(out[2], mlp_forward(p, X[2:])[0], atol=1e-14)


def test_gcn_baseline_trains(small, small_graph):
    p = pl.gcn_baseline(small, small_graph, TrainConfig((16,), 1e-2, 0.1, 60, 0))
    s = small.splits
    acc = (pl.predict_proba(p, small.X[s.train]).argmax(axis=1) == small.labels[s.train]).mean()
    assert acc > 0.7


# --- model files -------------------------------------------------------------


def test_model_round_trip(tmp_path, small, small_graph):
    model = pl.gkd_train(small, small_graph, CFG, LPAConfig(0.5), CFG)
    pl.save_model(model, tmp_path / "m.gkd", {"method": "gkd"})
    assert (tmp_path / "m.gkd").read_text().startswith("GKD1\n")
    back, meta = pl.load_model(tmp_path / "m.gkd")
    assert meta["method"] == "gkd"
    assert _arrays_equal(back.student, model.student)
    np.testing.assert_array_equal(back.soft_labels, model.soft_labels)
    Xt = small.X[small.splits.test]
    assert pl.predict(back, Xt).tobytes() == pl.predict(model, Xt).tobytes()

    jfc = pl.dnn_jfc_baseline(small, CFG)
    pl.save_model(jfc, tmp_path / "j.gkd")
    jback, _ = pl.load_model(tmp_path / "j.gkd")
    np.testing.assert_array_equal(pl.predict_jfc(jback, Xt), pl.predict_jfc(jfc, Xt))


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_text("hello\n")
    with pytest.raises(ValueError, match="GKD1"):
        pl.load_model(tmp_path / "x")
