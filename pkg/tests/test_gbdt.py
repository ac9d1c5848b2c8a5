"""Histogram GBDT: binning, bundling, GOSS, split search, boosting and importance."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodnow.dataset import Feature, FeatureSchema, TabularDataset
from floodnow.gbdt import (
    GbdtModel,
    HistogramLayout,
    Tree,
    TrainConfig,
    TrainingError,
    UnseenCategoryError,
    bundle_matrix,
    cross_entropy,
    efb_bundle,
    goss_sample,
    grow_tree,
    importance_table,
    predict,
    predict_proba,
    quantile_bin,
    softmax_gradients,
    split_importance,
    train,
    unbundle,
)
from oracles import central_difference, exhaustive_best_split, softmax_ce_rows


def numeric_ds(X, y=None, k=None):
    X = np.asarray(X, dtype=float)
    schema = FeatureSchema.numeric([f"f{j}" for j in range(X.shape[1])])
    return TabularDataset(schema, X, y, k)


def depth1_split(X, g, h, lam=1.0, min_data=1):
    ds = numeric_ds(X)
    mapper, Xb = quantile_bin(ds, 255)
    cfg = TrainConfig(num_leaves=2, max_depth=1, min_data_in_leaf=min_data, l2_lambda=lam,
                      goss_enabled=False, efb_enabled=False)
    tree = grow_tree(Xb, None, g, h, None, cfg, n_bins=mapper.n_bins)
    return tree, Xb


# -- binning --------------------------------------------------------------


def test_few_distinct_values_get_own_bins():
    mapper, Xb = quantile_bin(numeric_ds([[1.0], [2.0], [3.0], [2.0]]), 255)
    assert mapper.n_bins[0] == 3
    np.testing.assert_array_equal(Xb[:, 0], [0, 1, 2, 1])


def test_quantile_bins_are_balanced():
    x = np.random.default_rng(0).uniform(size=1000)
    mapper, Xb = quantile_bin(numeric_ds(x[:, None]), 4)
    pops = np.bincount(Xb[:, 0])
    # oracle: the sorted sample split into four runs of 250
    assert len(pops) == 4
    assert np.all(np.abs(pops - 250) <= 1)
    cuts = mapper.cuts[0]
    assert np.all(np.diff(cuts) > 0)


def test_categorical_levels_and_unseen_level():
    schema = FeatureSchema((Feature("level", "categorical", ("low", "high")),))
    ds = TabularDataset(schema, [[0], [1], [1]])
    mapper, Xb = quantile_bin(ds, 255)
    assert mapper.n_bins[0] == 2
    with pytest.raises(UnseenCategoryError):
        mapper.transform(np.array([[2.0]]))


def test_values_beyond_training_range_land_in_edge_bins():
    mapper, _ = quantile_bin(numeric_ds([[0.0], [1.0], [2.0]]), 255)
    np.testing.assert_array_equal(mapper.transform(np.array([[-5.0], [99.0]]))[:, 0], [0, 2])


# -- bundling -------------------------------------------------------------


def test_complementary_one_hots_share_a_bundle():
    a = np.array([1, 0, 1, 0, 0])
    Xb = np.stack([a, 1 - a], axis=1)
    bundles = efb_bundle(Xb, 0.0)
    assert len(bundles) == 1 and bundles[0].members == [0, 1]
    col = bundle_matrix(Xb, bundles)[:, 0]
    for j in range(2):
        np.testing.assert_array_equal(unbundle(col, bundles[0], j, 2), Xb[:, j])


def test_dense_features_stay_apart():
    Xb = np.array([[1, 2], [2, 1], [1, 1]])
    assert [b.members for b in efb_bundle(Xb, 0.0)] == [[0], [1]]


def test_ten_exclusive_indicators_form_one_bundle():
    rng = np.random.default_rng(5)
    which = rng.integers(-1, 10, size=500)  # -1: no indicator set
    Xb = np.zeros((500, 10), dtype=np.int32)
    Xb[which >= 0, which[which >= 0]] = 1
    # brute-force conflict matrix is zero off the diagonal
    active = Xb != 0
    conflict = active.T.astype(int) @ active.astype(int)
    assert np.count_nonzero(conflict - np.diag(np.diag(conflict))) == 0
    bundles = efb_bundle(Xb, 0.0)
    assert len(bundles) == 1
    bd = bundles[0]
    assert sorted(bd.members) == list(range(10))
    ranges = [(off + 1, off + 1) for off in bd.offsets]  # each member's only non-default bin
    assert len(set(ranges)) == 10
    col = bundle_matrix(Xb, bundles)[:, 0]
    for j in range(10):
        np.testing.assert_array_equal(unbundle(col, bd, j, 2), Xb[:, j])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(5, 120))
def test_efb_round_trip_exact(seed, m, n):
    rng = np.random.default_rng(seed)
    n_bins = rng.integers(2, 6, size=m)
    # sparse columns: mostly default bin 0
    Xb = np.where(rng.uniform(size=(n, m)) < 0.15, rng.integers(1, n_bins, size=(n, m)), 0).astype(np.int32)
    bundles = efb_bundle(Xb, 0.0, n_bins)
    assert sorted(j for b in bundles for j in b.members) == list(range(m))
    B = bundle_matrix(Xb, bundles)
    for c, bd in enumerate(bundles):
        spans = [(o + 1, o + n_bins[j] - 1) for j, o in zip(bd.members, bd.offsets)]
        for (lo1, hi1), (lo2, hi2) in zip(spans, spans[1:]):
            assert hi1 < lo2  # member ranges disjoint
        for j in bd.members:
            np.testing.assert_array_equal(unbundle(B[:, c], bd, j, int(n_bins[j])), Xb[:, j])


# -- softmax statistics ---------------------------------------------------


def test_softmax_gradients_at_zero():
    g, h = softmax_gradients(np.array([1]), np.zeros((1, 3)))
    np.testing.assert_allclose(g, [[1 / 3, -2 / 3, 1 / 3]], atol=1e-15)
    np.testing.assert_allclose(h, np.full((1, 3), 2 / 9), atol=1e-15)


def test_softmax_saturation():
    g, h = softmax_gradients(np.array([0]), np.array([[800.0, 0.0, 0.0]]))
    assert g[0, 0] == 0.0 and h[0, 0] == 0.0


def test_softmax_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    raw = rng.normal(size=(5, 3))
    y = rng.integers(0, 3, size=5)
    g, h = softmax_gradients(y, raw)
    for i in range(5):
        loss_i = lambda r, i=i: softmax_ce_rows(r[None, :], y[i:i + 1])[0]
        num_g = central_difference(loss_i, raw[i], h=1e-5)
        np.testing.assert_allclose(g[i], num_g, rtol=1e-5, atol=1e-9)
        for c in range(3):
            gc = lambda r, c=c, i=i: softmax_gradients(y[i:i + 1], r[None, :])[0][0, c]
            num_h = central_difference(gc, raw[i], h=1e-5)[c]
            assert abs(h[i, c] - num_h) <= 1e-5 * max(1.0, abs(num_h))


# -- GOSS -----------------------------------------------------------------


def test_goss_forced_rows_and_weights():
    norms = [10, 9, 1, 1, 1, 1, 1, 1, 1, 1]
    for seed in range(20):
        idx, w = goss_sample(norms, 0.2, 0.2, seed)
        assert len(idx) == 4 and {0, 1} <= set(idx.tolist())
        assert dict(zip(idx.tolist(), w.tolist()))[0] == 1.0
        others = [wi for i, wi in zip(idx, w) if i not in (0, 1)]
        assert others == [4.0, 4.0]


def test_goss_full_sample():
    idx, w = goss_sample(np.arange(7.0), 1.0, 0.0, 0)
    np.testing.assert_array_equal(idx, np.arange(7))
    np.testing.assert_array_equal(w, np.ones(7))


def test_goss_rejects_bad_fractions():
    with pytest.raises(ValueError):
        goss_sample([1.0, 2.0], 0.7, 0.5, 0)


def test_goss_estimator_unbiased():
    g = np.abs(np.random.default_rng(2).standard_t(3, size=400))
    full = g.sum()
    est = [np.dot(w, g[idx]) for idx, w in (goss_sample(g, 0.2, 0.1, [9, r]) for r in range(10000))]
    assert abs(np.mean(est) - full) <= 0.01 * full


def test_goss_deterministic():
    g = np.random.default_rng(3).normal(size=50)
    a, b = goss_sample(g, 0.2, 0.1, 42), goss_sample(g, 0.2, 0.1, 42)
    np.testing.assert_array_equal(a[0], b[0])


# -- split search ---------------------------------------------------------


def test_zero_gradients_give_single_zero_leaf():
    X = np.random.default_rng(0).normal(size=(30, 3))
    tree, _ = depth1_split(X, np.zeros(30), np.ones(30))
    assert len(tree) == 1 and tree.value[0] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_depth1_split_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(10, 201)), int(rng.integers(1, 9))
    X = rng.normal(size=(n, m))
    X[:, : m // 2] = np.round(X[:, : m // 2] * 2)  # some coarse features with repeated values
    g = rng.normal(size=n)
    h = rng.uniform(0.05, 1.0, size=n)
    lam, min_data = float(rng.uniform(0, 2)), int(rng.integers(1, 6))
    tree, Xb = depth1_split(X, g, h, lam, min_data)
    gain, j, v = exhaustive_best_split(X, g, h, lam, min_data)
    if j is None or gain <= 0:
        assert len(tree) == 1
        return
    assert len(tree) == 3
    assert abs(tree.gain[0] - gain) <= 1e-9
    f, b = int(tree.feature[0]), int(tree.threshold[0])
    chosen = np.unique(X[:, f])[b]
    if j != f:
        # only acceptable as an exact tie with the oracle's lower-index pick
        assert j < f
    else:
        assert chosen == v
    left = X[:, f] <= chosen
    G, H = g.sum(), h.sum()
    gl, hl = g[left].sum(), h[left].sum()
    direct = gl**2 / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - G**2 / (H + lam)
    assert abs(direct - gain) <= 1e-9


def test_split_tie_prefers_lower_feature_and_bin():
    X = np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=float)
    tree, _ = depth1_split(X, np.array([1.0, 1.0, -1.0, -1.0]), np.ones(4))
    assert (tree.feature[0], tree.threshold[0]) == (0, 0)


def test_leaf_values_are_newton_steps():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    g, h = np.array([1.0, 2.0, -1.0, -3.0]), np.array([1.0, 1.0, 2.0, 2.0])
    tree, _ = depth1_split(X, g, h, lam=0.5)
    assert tree.value[1] == pytest.approx(-3.0 / 2.5)
    assert tree.value[2] == pytest.approx(4.0 / 4.5)


def xor_data(seed=0):
    rng = np.random.default_rng(seed)
    # unequal quadrant sizes so the first split already has positive gain
    sizes = {(0, 0): 200, (0, 1): 120, (1, 0): 60, (1, 1): 150}
    X, y = [], []
    for (a, b), n in sizes.items():
        X.append(np.c_[rng.uniform(a, a + 1, n), rng.uniform(b, b + 1, n)])
        y += [a ^ b] * n
    return numeric_ds(np.vstack(X), np.array(y), 2)


def test_xor_four_pure_leaves():
    ds = xor_data()
    cfg = TrainConfig(num_trees=30, num_leaves=4, max_depth=2, min_data_in_leaf=5,
                      goss_enabled=False, learning_rate=0.3)
    model = train(ds, cfg)
    assert np.mean(predict(model, ds) == ds.labels) >= 0.95
    first = model.trees[0][0]
    assert first.n_leaves == 4 and first.max_depth == 2


# -- boosting -------------------------------------------------------------


def test_single_class_gate_and_override():
    ds = numeric_ds(np.random.default_rng(0).normal(size=(40, 2)), np.zeros(40, dtype=int), 2)
    with pytest.raises(TrainingError, match="single class"):
        train(ds, TrainConfig(num_trees=10))
    model = train(ds, TrainConfig(num_trees=10), allow_single_class=True)
    assert np.all(predict_proba(model, ds)[:, 0] >= 0.99)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.1))
def test_training_loss_non_increasing(seed, lr):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 4))
    y = (X[:, 0] + 0.5 * rng.normal(size=150) > 0).astype(int) + (X[:, 1] > 1)
    model = train(numeric_ds(X, y, 3), TrainConfig(num_trees=15, learning_rate=lr, goss_enabled=False,
                                                   num_leaves=6, min_data_in_leaf=3))
    loss = np.array(model.train_loss)
    assert np.all(np.diff(loss) <= 1e-12)
    assert loss[-1] == pytest.approx(cross_entropy(y, model.raw_scores(X)), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 4))
def test_structure_caps_hold(seed, leaves, depth):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, 5))
    y = rng.integers(0, 3, size=200)
    model = train(numeric_ds(X, y, 3), TrainConfig(num_trees=4, num_leaves=leaves, max_depth=depth,
                                                   min_data_in_leaf=2))
    for rnd in model.trees:
        for t in rnd:
            assert t.n_leaves <= leaves and t.max_depth <= depth
            internal = t.feature >= 0
            assert np.all(t.gain[internal] > 0)


def test_large_scale_config_echoed():
    cfg = TrainConfig(num_leaves=41, max_depth=9, min_data_in_leaf=51, num_trees=2)
    rng = np.random.default_rng(0)
    model = train(numeric_ds(rng.normal(size=(300, 3)), rng.integers(0, 3, 300), 3), cfg)
    snap = json.loads(model.dumps())["config"]
    assert (snap["num_leaves"], snap["max_depth"], snap["min_data_in_leaf"]) == (41, 9, 51)


def test_probabilities_normalized_and_zero_tree_uniform():
    rng = np.random.default_rng(0)
    ds = numeric_ds(rng.normal(size=(90, 3)), np.repeat([0, 1, 2], 30), 3)
    zero = train(ds, TrainConfig(num_trees=0))
    np.testing.assert_allclose(predict_proba(zero, ds), 1 / 3, atol=1e-15)
    model = train(ds, TrainConfig(num_trees=5))
    p = predict_proba(model, rng.normal(size=(1000, 3)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_predict_accepts_level_strings_and_rejects_unknown():
    schema = FeatureSchema((Feature("x"), Feature("s", "categorical", ("dry", "wet"))))
    rng = np.random.default_rng(0)
    X = np.c_[rng.normal(size=60), rng.integers(0, 2, 60)]
    y = (X[:, 1] == 1).astype(int)
    model = train(TabularDataset(schema, X, y, 2), TrainConfig(num_trees=5))
    p = predict_proba(model, [0.1, "wet"])
    assert p.shape == (2,) and p[1] > 0.5
    with pytest.raises(UnseenCategoryError):
        predict_proba(model, [[0.1, 3]])
    with pytest.raises(UnseenCategoryError, match="unknown level"):
        predict_proba(model, [0.1, "damp"])


def test_serialization_round_trip_and_determinism(tmp_path):
    rng = np.random.default_rng(4)
    ds = numeric_ds(rng.normal(size=(300, 6)), rng.integers(0, 3, 300), 3)
    cfg = TrainConfig(num_trees=8, seed=7)
    a, b = train(ds, cfg), train(ds, cfg)
    assert a.dumps() == b.dumps()
    a.save(tmp_path / "m.json")
    back = GbdtModel.load(tmp_path / "m.json")
    assert back.dumps() == a.dumps()
    np.testing.assert_array_equal(predict_proba(back, ds), predict_proba(a, ds))


def test_parallel_histograms_identical():
    rng = np.random.default_rng(8)
    ds = numeric_ds(rng.normal(size=(400, 7)), rng.integers(0, 3, 400), 3)
    cfg = TrainConfig(num_trees=5)
    assert train(ds, cfg, n_jobs=1).dumps() == train(ds, cfg, n_jobs=3).dumps()


def test_efb_preserves_predictions_on_one_hot_data():
    rng = np.random.default_rng(6)
    code = rng.integers(0, 5, 500)
    X = np.c_[np.eye(5)[code], rng.normal(size=500)]
    y = (code >= 3).astype(int)
    on = train(numeric_ds(X, y, 2), TrainConfig(num_trees=10, goss_enabled=False))
    off = train(numeric_ds(X, y, 2), TrainConfig(num_trees=10, goss_enabled=False, efb_enabled=False))
    assert len(on.bundles) < len(off.bundles)
    np.testing.assert_allclose(predict_proba(on, X), predict_proba(off, X), atol=1e-12)


# -- importance -----------------------------------------------------------


def test_importance_counts_single_split():
    rng = np.random.default_rng(0)
    ds = numeric_ds(rng.normal(size=(20, 5)), rng.integers(0, 2, 20), 2)
    model = train(ds, TrainConfig(num_trees=0))
    stump = Tree.from_dict({
        "feature": [3, -1, -1], "threshold": [4, -1, -1], "categorical": [False] * 3,
        "left": [1, -1, -1], "right": [2, -1, -1], "gain": [1.0, 0, 0], "value": [0, 0.1, -0.1],
        "count": [20, 10, 10], "depth": [0, 1, 1],
    })
    leaf = Tree.from_dict({k: v[1:2] if k != "depth" else [0] for k, v in stump.to_dict().items()})
    model.trees = [[stump, leaf]]
    np.testing.assert_array_equal(split_importance(model), [0, 0, 0, 1, 0])
    model.trees = []
    np.testing.assert_array_equal(split_importance(model), [0, 0, 0, 0, 0])


def test_decisive_feature_ranks_first():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(600, 6))
    y = (X[:, 0] > 0.6).astype(int) + (X[:, 0] > 0.85)
    model = train(numeric_ds(X, y, 3), TrainConfig(num_trees=20))
    table = importance_table(model)
    assert table[0][0] == "f0"
    assert [c for _, c in table] == sorted((c for _, c in table), reverse=True)


def test_histogram_layout_unpacks_bundles_to_features():
    a = np.array([1, 0, 2, 0, 0, 1])
    Xb = np.stack([a, np.where(a == 0, np.array([0, 1, 0, 2, 1, 0]), 0)], axis=1).astype(np.int32)
    n_bins = np.array([3, 3])
    bundles = efb_bundle(Xb, 0.0, n_bins)
    assert len(bundles) == 1
    layout = HistogramLayout(Xb, bundles, n_bins)
    g = np.arange(1.0, 7.0)
    h = np.ones(6)
    rows = np.arange(6)
    hist = layout.build(rows, g, h)
    totals = np.array([g.sum(), h.sum(), 6.0])
    fh = layout.feature_histograms(hist, totals)
    for j in range(2):
        for b in range(3):
            sel = Xb[:, j] == b
            assert fh[0, layout.feat_start[j] + b] == pytest.approx(g[sel].sum())
