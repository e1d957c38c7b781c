import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_split, gains_from_serialized, pinball_sum
from volboost.gbdt import (LGBM, LGBM_PINBALL, LGBM_SHOCKS, BinMapper, BoostedModel, BoostParams,
                           best_split, build_histograms, fit, fit_ensemble, leaf_weight,
                           predict_ensemble, sample_rows, soft_threshold)
from volboost.gbdt.params import SHOCK_THRESHOLD
from volboost.losses import LossSpec, loss_value


def random_instance(rng, n=None, m=None, levels=None):
    n = n or int(rng.integers(20, 200))
    m = m or int(rng.integers(1, 6))
    levels = levels or int(rng.integers(2, 30))
    X = rng.integers(0, levels, size=(n, m)).astype(float) + rng.normal(0, 1e-3, size=(1, m))
    g = rng.normal(size=n)
    h = rng.uniform(0.1, 2.0, size=n)
    return X, g, h


# ---------------------------------------------------------------- presets

def test_presets_match_tuned_table():
    assert (LGBM.n_estimators, LGBM.max_depth, LGBM.min_data_in_leaf) == (500, 2, 3)
    assert (LGBM.learning_rate, LGBM.reg_alpha, LGBM.reg_lambda) == (0.0234, 0.132, 0.002)
    assert (LGBM.feature_fraction, LGBM.bagging_fraction, LGBM.bagging_freq, LGBM.max_bin) == \
        (0.6, 1.0, 3, 128)
    assert (LGBM_SHOCKS.n_estimators, LGBM_SHOCKS.min_data_in_leaf, LGBM_SHOCKS.learning_rate) == \
        (500, 2, 0.0203)
    assert (LGBM_SHOCKS.reg_alpha, LGBM_SHOCKS.reg_lambda) == (1.51e-5, 0.197)
    assert (LGBM_SHOCKS.feature_fraction, LGBM_SHOCKS.bagging_fraction,
            LGBM_SHOCKS.bagging_freq, LGBM_SHOCKS.max_bin) == (0.8, 0.7, 3, 224)
    p = LGBM_PINBALL
    assert (p.n_estimators, p.max_depth, p.min_data_in_leaf, p.learning_rate) == (600, 2, 4, 0.0399)
    assert (p.reg_alpha, p.reg_lambda, p.feature_fraction) == (8.5e-4, 1.13e-4, 0.6)
    assert (p.bagging_fraction, p.bagging_freq, p.max_bin) == (0.5, 2, 32)
    assert SHOCK_THRESHOLD == 2.5
    for preset in (LGBM, LGBM_SHOCKS, LGBM_PINBALL):
        assert preset.reg_gamma == 0.0


def test_params_validation_and_roundtrip():
    with pytest.raises(ValueError):
        BoostParams(n_estimators=0)
    with pytest.raises(ValueError):
        BoostParams(max_bin=300)
    with pytest.raises(ValueError):
        BoostParams(bagging_fraction=0.0)
    with pytest.raises(ValueError):
        BoostParams.from_dict({"n_trees": 3})
    p = LGBM.with_(seed=7)
    assert BoostParams.from_dict(p.to_dict()) == p


# ---------------------------------------------------------------- binning

def test_bins_one_per_distinct_value():
    X = np.array([[3.0], [1.0], [2.0], [2.0], [5.0]])
    m = BinMapper.fit(X, 255)
    assert m.n_bins.tolist() == [4]
    assert m.transform(X)[:, 0].tolist() == [2, 0, 1, 1, 3]
    # unseen values fall into neighbouring bins by threshold
    assert m.transform(np.array([[0.0], [1.4], [1.6], [100.0]]))[:, 0].tolist() == [0, 0, 1, 3]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 64), st.integers(0, 10_000))
def test_bins_are_monotone_and_bounded(max_bin, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(3, size=(300, 1))
    m = BinMapper.fit(x, max_bin)
    b = m.transform(x)[:, 0]
    assert m.n_bins[0] <= max_bin
    order = np.argsort(x[:, 0], kind="stable")
    assert np.all(np.diff(b[order].astype(int)) >= 0)
    assert b.max() < m.n_bins[0]


def test_bin_mapper_roundtrip():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    m = BinMapper.fit(X, 8)
    m2 = BinMapper.from_dict(m.to_dict())
    assert np.array_equal(m.transform(X), m2.transform(X))


# ---------------------------------------------------------------- histograms and splits

def test_histogram_matches_loop():
    rng = np.random.default_rng(1)
    X, g, h = random_instance(rng, 80, 3, 6)
    m = BinMapper.fit(X, 255)
    B = m.transform(X)
    rows = np.sort(rng.choice(80, 50, replace=False))
    hist = build_histograms(rows, B, g, h, max_bins=int(m.n_bins.max()))
    ref = np.zeros_like(hist)
    for i in rows:
        for j in range(3):
            ref[j, B[i, j]] += (g[i], h[i], 1)
    assert np.allclose(hist, ref, rtol=0, atol=1e-12)


def test_split_matches_exhaustive_search_small():
    rng = np.random.default_rng(2)
    for _ in range(30):
        X, g, h = random_instance(rng)
        lam, alpha = float(rng.choice([0.0, 0.5])), float(rng.choice([0.0, 0.3]))
        params = BoostParams(min_data_in_leaf=1, reg_lambda=lam, reg_alpha=alpha)
        m = BinMapper.fit(X, 255)
        B = m.transform(X)
        hist = build_histograms(np.arange(len(g)), B, g, h, max_bins=int(m.n_bins.max()))
        got = best_split(hist, (g.sum(), h.sum(), len(g)), params, m.n_bins)
        ref = exhaustive_split(X, g, h, lam, alpha)
        if ref is None:
            assert got is None
            continue
        assert (got["feature"], got["bin"]) == ref[:2]
        assert got["gain"] == pytest.approx(ref[2], abs=1e-9)


def test_split_respects_min_data_and_gamma():
    X = np.arange(10, dtype=float)[:, None]
    g = np.where(X[:, 0] < 2, -5.0, 1.0)
    h = np.ones(10)
    m = BinMapper.fit(X)
    B = m.transform(X)
    hist = build_histograms(np.arange(10), B, g, h)
    tot = (g.sum(), h.sum(), 10)
    assert best_split(hist, tot, BoostParams(min_data_in_leaf=1), m.n_bins)["bin"] == 1
    got = best_split(hist, tot, BoostParams(min_data_in_leaf=3), m.n_bins)
    assert got["bin"] >= 2 and got["bin"] <= 6
    assert best_split(hist, tot, BoostParams(min_data_in_leaf=1, reg_gamma=1e6), m.n_bins) is None


def test_leaf_weight_soft_threshold_cases():
    assert leaf_weight(-4.0, 2.0, BoostParams(reg_lambda=0.0, reg_alpha=0.0)) == 2.0
    assert leaf_weight(-4.0, 2.0, BoostParams(reg_lambda=0.0, reg_alpha=1.0)) == 1.5
    assert leaf_weight(0.5, 1.0, BoostParams(reg_alpha=1.0)) == 0.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    with pytest.raises(ValueError):
        leaf_weight(1.0, 0.0, BoostParams())


def test_lambda_never_increases_squared_weights():
    rng = np.random.default_rng(3)
    X, g, h = random_instance(rng, 150, 3, 10)
    lams = [0.0, 0.1, 1.0, 10.0]
    sums = []
    for lam in lams:
        from volboost.gbdt import _kernels
        m = BinMapper.fit(X)
        arr = _kernels.grow_tree(m.transform(X), np.arange(150, dtype=np.int64), g, h,
                                 np.arange(3, dtype=np.int64), m.n_bins, int(m.n_bins.max()),
                                 2, 1, lam, 0.0, 0.0, -1)
        leaf = arr[0] == -1
        sums.append(float(np.sum(arr[5][leaf] ** 2)))
    assert all(a >= b - 1e-12 for a, b in zip(sums, sums[1:]))


# ---------------------------------------------------------------- growth and boosting

def friedman_like(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 4))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=n)
    return X, y


def test_stump_and_depth_limits():
    X, y = friedman_like()
    m = fit(X, y, BoostParams(n_estimators=3, max_depth=1, min_data_in_leaf=5))
    for t in m.trees:
        assert t.n_leaves <= 2 and t.max_depth <= 1
    m = fit(X, y, BoostParams(n_estimators=3, max_depth=4, min_data_in_leaf=5, num_leaves=5))
    for t in m.trees:
        assert t.n_leaves <= 5 and t.max_depth <= 4


def test_leaf_wise_picks_best_leaf_first():
    # depth-2 tree with 3 leaves: the second split goes to the child with larger gain
    X, y = friedman_like(seed=4)
    m = fit(X, y, BoostParams(n_estimators=1, max_depth=2, min_data_in_leaf=5, num_leaves=3,
                              learning_rate=1.0), LossSpec("squared"))
    t = m.trees[0]
    full = fit(X, y, BoostParams(n_estimators=1, max_depth=2, min_data_in_leaf=5,
                                 learning_rate=1.0), LossSpec("squared")).trees[0]
    kids = [full.left[0], full.right[0]]
    best_child = max(kids, key=lambda k: (full.gain[k], -k))
    assert t.feature[best_child] == full.feature[best_child]
    other = kids[0] if best_child == kids[1] else kids[1]
    assert t.feature[other] == -1


@pytest.mark.parametrize("loss", [LossSpec("fair"), LossSpec("squared")])
def test_training_loss_non_increasing(loss):
    X, y = friedman_like(seed=5)
    losses = []
    fit(X, y, BoostParams(n_estimators=100, max_depth=2, min_data_in_leaf=5, learning_rate=0.1),
        loss, callback=lambda m, F: losses.append(loss_value(loss, y, F).mean()))
    assert np.all(np.diff(losses) <= 1e-12)


def test_first_tree_of_squared_loss_fits_mean_residuals():
    X, y = friedman_like(seed=6)
    m = fit(X, y, BoostParams(n_estimators=1, max_depth=1, min_data_in_leaf=1, learning_rate=1.0),
            LossSpec("squared"))
    leaf = m.trees[0].apply_binned(m.mapper.transform(X))
    for k in np.unique(leaf):
        assert m.trees[0].value[k] == pytest.approx(np.mean(y[leaf == k] - y.mean()), abs=1e-12)


def test_goss_sampling():
    rng = np.random.default_rng(0)
    g = rng.normal(size=100)
    p = BoostParams(sampler="goss", goss_top_rate=0.2, goss_other_rate=0.1)
    rows, w = sample_rows(g, p, 0, rng)
    assert len(rows) == 30 and np.all(np.diff(rows) > 0)
    top = set(np.argsort(-np.abs(g), kind="stable")[:20].tolist())
    assert top <= set(rows.tolist())
    for r, wt in zip(rows, w):
        assert wt == (1.0 if r in top else (1 - 0.2) / 0.1)


def test_bagging_frequency():
    rng = np.random.default_rng(0)
    p = BoostParams(bagging_fraction=0.5, bagging_freq=3)
    g = np.zeros(40)
    prev = None
    bags = []
    for it in range(7):
        prev = sample_rows(g, p, it, rng, prev)
        bags.append(tuple(prev[0].tolist()))
    assert len(bags[0]) == 20
    assert bags[0] == bags[1] == bags[2] and bags[3] == bags[4] == bags[5]
    assert bags[0] != bags[3] and bags[3] != bags[6]
    rows, _ = sample_rows(g, BoostParams(bagging_fraction=0.5, bagging_freq=0), 0, rng)
    assert len(rows) == 40


def test_goss_model_trains():
    X, y = friedman_like(seed=7)
    m = fit(X, y, BoostParams(n_estimators=50, sampler="goss", min_data_in_leaf=3))
    assert np.mean((m.predict(X) - y) ** 2) < np.var(y)


def test_pinball_renewal_is_optimal_in_leaf():
    rng = np.random.default_rng(8)
    X = rng.uniform(size=(300, 2))
    y = X[:, 0] + rng.exponential(size=300)
    q = 0.8
    m = fit(X, y, BoostParams(n_estimators=1, max_depth=2, min_data_in_leaf=10, learning_rate=1.0),
            LossSpec("pinball", q=q))
    t = m.trees[0]
    leaf = t.apply_binned(m.mapper.transform(X))
    res = y - m.base_prediction
    for k in np.unique(leaf):
        r = res[leaf == k]
        v = t.value[k]
        grid = np.linspace(r.min() - 0.1, r.max() + 0.1, 2001)
        best = min(pinball_sum(r, c, q) for c in grid)
        assert pinball_sum(r, v, q) <= best + 1e-9
        assert v in r  # an order statistic


def test_gain_totals_and_serialisation_walk():
    X, y = friedman_like(seed=9)
    m = fit(X, y, LGBM.with_(n_estimators=40, min_data_in_leaf=5))
    walked = gains_from_serialized(m.to_dict(), 4)
    assert np.allclose(m.gain_totals, walked, rtol=0, atol=1e-9)


def test_serialisation_roundtrip_is_bit_identical():
    X, y = friedman_like(seed=10)
    m = fit(X, y, LGBM.with_(n_estimators=30, min_data_in_leaf=5), feature_names=list("abcd"))
    m2 = BoostedModel.from_json(m.to_json())
    assert np.array_equal(m.predict(X), m2.predict(X))
    assert m2.feature_names == list("abcd")
    with pytest.raises(ValueError):
        BoostedModel.from_dict({**m.to_dict(), "version": 99})


def test_prediction_equals_cached_training_predictions():
    X, y = friedman_like(seed=11)
    cache = {}
    m = fit(X, y, BoostParams(n_estimators=25, min_data_in_leaf=3),
            callback=lambda it, F: cache.__setitem__("F", F.copy()))
    assert np.array_equal(m.predict(X), cache["F"])


def test_schema_mismatch_rejected():
    import pandas as pd
    X, y = friedman_like(seed=12)
    m = fit(X, y, BoostParams(n_estimators=5), feature_names=list("abcd"))
    with pytest.raises(ValueError, match="schema"):
        m.predict(X[:, :3])
    df = pd.DataFrame(X, columns=list("dcba"))
    assert np.array_equal(m.predict(df), m.predict(df[list("abcd")].to_numpy()))
    with pytest.raises(ValueError, match="schema"):
        m.predict(df.rename(columns={"a": "z"}))


def test_fit_is_deterministic_and_seed_sensitive():
    X, y = friedman_like(seed=13)
    p = LGBM.with_(n_estimators=30, bagging_fraction=0.7, min_data_in_leaf=3)
    a = fit(X, y, p).predict(X)
    b = fit(X, y, p).predict(X)
    c = fit(X, y, p.with_(seed=1)).predict(X)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_ensemble_mean_and_member_seeds():
    X, y = friedman_like(seed=14)
    p = LGBM.with_(n_estimators=20, min_data_in_leaf=3, seed=5)
    models = fit_ensemble(X, y, p, n_members=3)
    assert [m.params.seed for m in models] == [5, 6, 7]
    pred = predict_ensemble(models, X)
    assert np.allclose(pred, np.mean([m.predict(X) for m in models], axis=0), atol=1e-14)


def test_feature_fraction_uses_subset():
    X, y = friedman_like(seed=15)
    m = fit(X, y, BoostParams(n_estimators=30, feature_fraction=0.25, min_data_in_leaf=5))
    for t in m.trees:
        used = set(t.feature[t.feature >= 0].tolist())
        assert len(used) <= 1


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        fit(np.zeros((3, 2)), np.array([1.0, np.nan, 2.0]))
