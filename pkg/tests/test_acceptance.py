"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the terminal summary. The optional dataset track runs only when
``VOLBOOST_DATASET`` points at a CSV file.
"""

import json
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

import conftest
from oracles import exhaustive_split, winkler
from volboost.evaluation import (coverage, diebold_mariano, evaluate_run,
                                 ForecastRun, marfe, winkler_scores)
from volboost.gbdt import (LGBM, LGBM_PINBALL, BinMapper, BoostParams, best_split,
                           build_histograms, fit, leaf_weight, _kernels)
from volboost.hyperopt import (Dim, SearchSpace, Trial, TrialLog, fanova_importance, run_search)
from volboost.importance import gain_importance, permutation_importance, used_features
from volboost.losses import LossSpec, loss_gradient_hessian, loss_value
from volboost.pipeline import ExperimentConfig, replay, run_experiment
from volboost.probabilistic import (LEVELS, QuantileSurface, ResidualStore, crossing_audit,
                                    fit_pinball_models, predict_surface, qrs_surface)
from volboost.synthetic import heteroskedastic_series


def record(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- boosting core

def test_gradient_correctness():
    worst = 0.0
    for spec in (LossSpec("fair"), LossSpec("squared")):
        for r in (0.01, 0.1, 1.0, 10.0, -0.01, -0.1, -1.0, -10.0):
            y, yhat = 1.0, 1.0 - r
            g, h = loss_gradient_hessian(spec, y, yhat)
            step = 1e-5 * max(1.0, abs(r))
            fd_g = (loss_value(spec, y, yhat + step) - loss_value(spec, y, yhat - step)) / (2 * step)
            fd_h = (loss_gradient_hessian(spec, y, yhat + step)[0]
                    - loss_gradient_hessian(spec, y, yhat - step)[0]) / (2 * step)
            worst = max(worst, abs(fd_g - g) / max(abs(g), 1e-12), abs(fd_h - h) / abs(h))
    exact = True
    for q in (0.1, 0.5, 0.9):
        spec = LossSpec("pinball", q=q)
        eps = 2.0 ** -10
        above = (loss_value(spec, 1.0, 0.5 + eps) - loss_value(spec, 1.0, 0.5)) / eps
        below = (loss_value(spec, 1.0, 1.5 + eps) - loss_value(spec, 1.0, 1.5)) / eps
        exact &= loss_gradient_hessian(spec, 1.0, 0.5)[0] == -q
        exact &= loss_gradient_hessian(spec, 1.0, 1.5)[0] == 1 - q
        exact &= math.isclose(above, -q, rel_tol=1e-12) and math.isclose(below, 1 - q, rel_tol=1e-12)
    record("gradient correctness", worst < 1e-4 and exact,
           f"max rel err {worst:.2e}; pinball branches exact={exact}")


def test_split_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    n_inst = 120
    for k in range(n_inst):
        n = int(rng.integers(10, 201))
        m = int(rng.integers(1, 6))
        levels = int(rng.integers(2, 40))
        X = rng.integers(0, levels, size=(n, m)).astype(float) + rng.normal(0, 1e-3, size=(1, m))
        g = rng.normal(size=n)
        h = rng.uniform(0.1, 2.0, size=n)
        lam = float(rng.choice([0.0, 0.5, 2.0]))
        alpha = float(rng.choice([0.0, 0.3]))
        gamma = float(rng.choice([0.0, 0.05]))
        min_data = int(rng.choice([1, 3]))
        params = BoostParams(min_data_in_leaf=min_data, reg_lambda=lam, reg_alpha=alpha,
                             reg_gamma=gamma)
        mapper = BinMapper.fit(X, 255)
        B = mapper.transform(X)
        hist = build_histograms(np.arange(n), B, g, h, max_bins=int(mapper.n_bins.max()))
        got = best_split(hist, (g.sum(), h.sum(), n), params, mapper.n_bins)
        ref = exhaustive_split(X, g, h, lam, alpha, gamma, min_data)
        if ref is None or got is None:
            mismatches += (ref is None) != (got is None)
            continue
        if (got["feature"], got["bin"]) != ref[:2] or abs(got["gain"] - ref[2]) > 1e-9:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    record("split oracle", mismatches == 0 and elapsed < 10,
           f"{n_inst} instances, {mismatches} mismatches, {elapsed:.2f}s")


def test_regularization_arithmetic():
    cases = (leaf_weight(-4.0, 2.0, BoostParams(reg_lambda=0.0, reg_alpha=0.0)) == 2.0
             and leaf_weight(-4.0, 2.0, BoostParams(reg_lambda=0.0, reg_alpha=1.0)) == 1.5)
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(100):
        n = int(rng.integers(30, 200))
        X = rng.normal(size=(n, 3))
        g, h = rng.normal(size=n), rng.uniform(0.1, 2, size=n)
        mapper = BinMapper.fit(X, 64)
        B = mapper.transform(X)
        tree = _kernels.grow_tree(B, np.arange(n, dtype=np.int64), g, h,
                                  np.arange(3, dtype=np.int64), mapper.n_bins,
                                  int(mapper.n_bins.max()), 3, 1, 0.0, 0.0, 0.0, -1)
        sums = _leaf_sums(tree, B, g, h)
        alpha = float(rng.choice([0.0, 0.5]))
        prev = np.inf
        for lam in (0.0, 0.01, 0.1, 1.0, 10.0, 100.0):
            p = BoostParams(reg_lambda=lam, reg_alpha=alpha)
            total = sum(leaf_weight(gs, hs, p) ** 2 for gs, hs in sums)
            violations += total > prev
            prev = total
    record("regularization arithmetic", cases and violations == 0,
           f"soft-threshold cases exact={cases}; lambda increases raising sum w^2: {violations}")


def _leaf_sums(tree, B, g, h):
    feat, thr, left, right = tree[0], tree[1], tree[2], tree[3]
    out = []
    rows = np.arange(len(g))
    stack = [(0, rows)]
    while stack:
        node, r = stack.pop()
        if feat[node] == -1:
            out.append((float(g[r].sum()), float(h[r].sum())))
            continue
        go_left = B[r, feat[node]] <= thr[node]
        stack.append((left[node], r[go_left]))
        stack.append((right[node], r[~go_left]))
    return out


def test_boosting_monotonicity():
    bad = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-1, 1, size=(500, 4))
        y = np.sin(3 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.2 * rng.standard_t(3, size=500)
        for spec in (LossSpec("fair"), LossSpec("squared")):
            losses = []
            p = LGBM.with_(n_estimators=200, bagging_fraction=1.0, seed=seed)
            fit(X, y, p, spec, callback=lambda m, F: losses.append(loss_value(spec, y, F).mean()))
            if len(losses) != 200 or np.any(np.diff(losses) > 1e-12):
                bad.append((seed, spec.kind))
    record("boosting monotonicity", not bad, f"5 datasets x 2 losses, M=200; failures {bad}")


# ---------------------------------------------------------------- probabilistic

def test_pinball_calibration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    n = 5000
    x = rng.uniform(-2, 2, size=(n, 1))
    y = x[:, 0] + rng.normal(0, 0.5, size=n)
    x_new = rng.uniform(-2, 2, size=(n, 1))
    y_new = x_new[:, 0] + rng.normal(0, 0.5, size=n)
    qs = [0.1, 0.25, 0.5, 0.75, 0.9]
    models = fit_pinball_models(x, y, LGBM_PINBALL, levels=qs)
    surf = predict_surface(models, x_new, levels=qs)
    refr = np.mean(y_new[:, None] <= surf.values, axis=0)
    dev = np.abs(refr - np.array(qs))
    elapsed = time.perf_counter() - t0
    record("pinball calibration", bool(np.all(dev <= 0.05)) and elapsed < 120,
           "ReFr " + ", ".join(f"{q}:{r:.3f}" for q, r in zip(qs, refr)) + f"; {elapsed:.1f}s")


def test_qrs_properties():
    rng = np.random.default_rng(12)
    crossings = 0
    for _ in range(1000):
        res = rng.standard_t(2, size=int(rng.integers(1, 80))) * 10 ** rng.uniform(-5, 2)
        s = qrs_surface([rng.normal() * 10], ResidualStore([res]))
        crossings += int(np.any(np.diff(s.values[0]) < 0))
        crossings += crossing_audit(s)["rows_with_crossing"]
    equivariant = True
    for _ in range(200):
        # one binade and an integer grid: every interpolation rounds identically
        res = 2.0 ** 20 + rng.integers(0, 2 ** 18, size=int(rng.integers(1, 60))).astype(float)
        c = float(rng.integers(0, 2 ** 18))
        base = qrs_surface([0.0], ResidualStore([res])).values
        equivariant &= np.array_equal(qrs_surface([0.0], ResidualStore([res + c])).values,
                                      base + c)
        point = float(rng.normal() * 100)
        equivariant &= np.array_equal(qrs_surface([point], ResidualStore([res])).values,
                                      base + point)
    record("qrs properties", crossings == 0 and equivariant,
           f"1000 stores, crossings {crossings}; translation equivariance exact={equivariant}")


# ---------------------------------------------------------------- evaluation

def test_metric_identities():
    y = np.array([0.5, 1.0, 2.0, 3.0, 8.0])
    perfect = QuantileSurface(np.tile(y[:, None], (1, 99)))
    m = evaluate_run(ForecastRun(list(range(5)), y, y.copy(), perfect)).metrics
    zero = all(m[k] == 0.0 for k in ("MAE", "MSE", "sMAPE", "CRPS", "MWS"))
    perfect_ok = zero and m["R2"] == 1.0 and m["PI_within"] == 100.0
    rng = np.random.default_rng(13)
    worst_sum = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 500))
        yy = rng.normal(size=n)
        lo = rng.normal(size=n) - 0.5
        c = coverage(yy, lo, lo + rng.uniform(0, 2, size=n))
        worst_sum = max(worst_sum, abs(c["below"] + c["within"] + c["above"] - 100.0))
    anti = True
    for _ in range(50):
        e1, e2 = rng.normal(size=40), rng.normal(size=40) * 1.2
        anti &= diebold_mariano(e1, e2)["statistic"] == -diebold_mariano(e2, e1)["statistic"]
    wk = True
    for yv, lo, hi, a in [(0.5, 0, 1, 0.1), (-1.5, 0, 1, 0.1), (2.5, 0, 1, 0.1),
                          (0.0, 0, 1, 0.2), (1.0, 0, 1, 0.2), (-0.2, -0.1, 0.3, 0.05)]:
        wk &= math.isclose(winkler_scores([yv], [lo], [hi], a)[0], winkler(yv, lo, hi, a),
                           rel_tol=1e-12)
    record("metric identities", perfect_ok and worst_sum <= 1e-9 and anti and wk,
           f"perfect={perfect_ok}; coverage sum err {worst_sum:.1e}; DM antisymmetric={anti}; "
           f"Winkler branches={wk}")


def test_calibration_metric_marfe():
    rng = np.random.default_rng(14)
    n = 2000
    mu = rng.normal(size=n)
    y = mu + rng.normal(size=n)
    surf = QuantileSurface(mu[:, None] + stats.norm.ppf(LEVELS)[None, :])
    value = marfe(y, surf)
    record("calibration metric", value < 0.03, f"MARFE {value:.4f} at N=2000")


# ---------------------------------------------------------------- importance

def test_importance_recovery():
    rng = np.random.default_rng(15)
    n = 2000
    X = rng.normal(size=(n, 10))
    y = 3 * X[:, 0] + rng.normal(size=n)
    model = fit(X, y, LGBM, LossSpec("squared"))
    gfi = gain_importance(model)
    pfi = permutation_importance(model, X, y, repeats=5, seed=0)
    ranks_ok = gfi.ranking()[0] == "x0" and pfi.ranking()[0] == "x0"
    shares_ok = gfi.scores[0] > 60 and pfi.scores[0] > 60
    gfi_sum = float(gfi.scores.sum())
    # a feature that never splits: append a constant column and refit
    Xc = np.column_stack([X, np.full(n, 1.0)])
    mc = fit(Xc, y, LGBM, LossSpec("squared"))
    unused = np.flatnonzero(~used_features(mc))
    pc = permutation_importance(mc, Xc, y, repeats=5, seed=0)
    zero_ok = len(unused) > 0 and all(pc.raw[j] == 0.0 and pc.scores[j] == 0.0 for j in unused)
    record("importance recovery",
           ranks_ok and shares_ok and abs(gfi_sum - 100) <= 1e-6 and zero_ok,
           f"GFI x0 {gfi.scores[0]:.1f}%, PFI x0 {pfi.scores[0]:.1f}%, GFI sum {gfi_sum:.9f}, "
           f"unused-feature PFI exactly 0={zero_ok}")


# ---------------------------------------------------------------- hyperopt

SYNTH = SearchSpace((Dim("a", "float", 0.0, 1.0), Dim("b", "float", 0.0, 1.0),
                     Dim("c", "float", 1e-3, 1.0, log=True), Dim("d", "int", 1, 20)))


def synthetic_objective(p):
    return ((p["a"] - 0.3) ** 2 + (p["b"] - 0.7) ** 2 + (math.log10(p["c"]) + 2) ** 2 / 9
            + ((p["d"] - 13) / 19) ** 2)


@pytest.mark.slow
def test_hyperopt_tpe_and_fanova():
    wins = 0
    reps = 50
    for r in range(reps):
        tpe, _ = run_search(SYNTH, synthetic_objective, 300, np.random.default_rng(1000 + r))
        rnd, _ = run_search(SYNTH, synthetic_objective, 300, np.random.default_rng(1000 + r),
                            sampler="random")
        wins += synthetic_objective(tpe) < synthetic_objective(rnd)
    # planted log: only the first dimension moves the objective
    rng = np.random.default_rng(16)
    log = TrialLog()
    for i in range(300):
        p = SYNTH.sample(rng)
        log.append(Trial(i, p, (p["a"] - 0.4) ** 2))
    imp = fanova_importance(SYNTH, log, np.random.default_rng(17))
    name, share = imp.dominant()
    record("hyperopt", wins >= 0.7 * reps and name == "a" and share > 90,
           f"TPE beat random in {wins}/{reps}; fANOVA dominant {name} {share:.2f}%")


# ---------------------------------------------------------------- end to end

@pytest.mark.slow
def test_desk_run(tmp_path):
    heteroskedastic_series(600, 4, seed=0).to_csv(tmp_path / "desk.csv", index=False)
    cfg = ExperimentConfig(
        data=["desk.csv"], base_dir=str(tmp_path), test_size=100,
        tasks=["deterministic", "qrs", "pinball"], importance=True,
        pinball_params={"preset": "lgbm_pinball", "n_estimators": 100},
        output_dir="desk")
    t0 = time.perf_counter()
    run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    run = tmp_path / "desk"
    reports = {k: json.loads((run / f"reports/{k}.json").read_text())["metrics"]
               for k in ("deterministic", "qrs", "pinball")}
    n_splits = len(list((run / "splits/h1").glob("*.json")))
    files_ok = all((run / f"reports/{f}").exists() for f in (
        "importance_gfi.csv", "importance_pfi.csv", "coverage.csv", "qrs_calibration.csv",
        "pinball_surface.csv", "acf.csv"))
    t1 = time.perf_counter()
    diffs = replay(run)
    replay_s = time.perf_counter() - t1
    ok = n_splits == 100 and files_ok and elapsed < 600 and diffs == [] \
        and reports["qrs"]["crossing_rows"] == 0
    record("end-to-end desk run", ok,
           f"{n_splits} splits in {elapsed:.0f}s, replay {replay_s:.0f}s diffs={len(diffs)}; "
           f"R2 {reports['deterministic']['R2']:.3f}, QRS MARFE {reports['qrs']['MARFE']:.3f}, "
           f"pinball MARFE {reports['pinball']['MARFE']:.3f}")


DATASET = os.environ.get("VOLBOOST_DATASET")


@pytest.mark.slow
@pytest.mark.skipif(not DATASET, reason="VOLBOOST_DATASET not set")
def test_optional_dataset_track(tmp_path):
    target = os.environ.get("VOLBOOST_DATASET_TARGET", "RV")
    cfg = ExperimentConfig(data=[os.path.abspath(DATASET)], target=target, test_size=848,
                           tasks=["deterministic", "qrs", "pinball"], importance=False,
                           workers=int(os.environ.get("VOLBOOST_WORKERS", "1")),
                           base_dir=str(tmp_path), output_dir="dataset")
    run_experiment(cfg)
    rep = {k: json.loads((tmp_path / f"dataset/reports/{k}.json").read_text())["metrics"]
           for k in ("deterministic", "qrs", "pinball")}
    r2 = rep["deterministic"]["R2"]
    record("optional dataset track", r2 > 0.5 and rep["qrs"]["CRPS"] < rep["pinball"]["CRPS"],
           f"R2 {r2:.3f}; CRPS qrs {rep['qrs']['CRPS']:.3e} vs pinball {rep['pinball']['CRPS']:.3e}")
