"""The compiled kernels and the numpy fallback must agree."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from volboost.gbdt import BinMapper, _pykernels as py
from volboost.gbdt import _kernels

ck = pytest.importorskip("volboost.gbdt._ckernels")


def instance(rng):
    n = int(rng.integers(10, 300))
    m = int(rng.integers(1, 6))
    X = rng.normal(size=(n, m))
    X[:, 0] = np.round(X[:, 0], 1)
    mapper = BinMapper.fit(X, int(rng.integers(2, 64)))
    B = mapper.transform(X)
    g = rng.normal(size=n)
    h = rng.uniform(0.1, 2, size=n)
    rows = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)).astype(np.int64)
    k = int(rng.integers(1, m + 1))
    feats = np.sort(rng.choice(m, size=k, replace=False)).astype(np.int64)
    return B, mapper.n_bins, g, h, rows, feats


def test_default_backend_is_compiled():
    assert _kernels.BACKEND == "cython"


def test_histograms_agree():
    rng = np.random.default_rng(0)
    for _ in range(50):
        B, nb, g, h, rows, feats = instance(rng)
        a = ck.build_histogram(B, rows, g, h, feats, int(nb.max()))
        b = py.build_histogram(B, rows, g, h, feats, int(nb.max()))
        assert np.allclose(a, b, rtol=0, atol=1e-10)


def test_grow_tree_agrees():
    rng = np.random.default_rng(1)
    for _ in range(200):
        B, nb, g, h, rows, feats = instance(rng)
        args = (B, rows, g, h, feats, nb, int(nb.max()), int(rng.integers(1, 5)),
                int(rng.integers(1, 6)), float(rng.choice([0, 0.5])), float(rng.choice([0, 0.2])),
                float(rng.choice([0, 0.01])), int(rng.choice([-1, 2, 3])))
        a = ck.grow_tree(*args)
        b = py.grow_tree(*args)
        for x, y in zip(a, b):
            assert x.shape == y.shape
            assert np.allclose(x, y, rtol=1e-9, atol=1e-9)


def test_predict_and_leaf_quantiles_agree():
    rng = np.random.default_rng(2)
    for _ in range(50):
        B, nb, g, h, rows, feats = instance(rng)
        tree = ck.grow_tree(B, rows, g, h, feats, nb, int(nb.max()), 3, 2, 0.0, 0.0, 0.0, -1)
        f, t, l, r = tree[0], tree[1], tree[2], tree[3]
        la = ck.apply_tree(B, f, t, l, r)
        lb = py.apply_tree(B, f, t, l, r)
        assert np.array_equal(la, lb)
        off = np.array([0, len(f)], dtype=np.int64)
        pa = ck.predict_trees(B, f, t, l, r, tree[5], off, 0.5, 0.1)
        pb = py.predict_trees(B, f, t, l, r, tree[5], off, 0.5, 0.1)
        assert np.array_equal(pa, pb)
        q = float(rng.uniform(0.01, 0.99))
        va, vb = tree[5].copy(), tree[5].copy()
        ck.leaf_quantiles(la, rows, g, q, va)
        py.leaf_quantiles(lb, rows, g, q, vb)
        assert np.array_equal(va, vb)


SCRIPT = """
import json, numpy as np
from volboost.gbdt import fit, LGBM, _kernels
from volboost.losses import LossSpec
rng = np.random.default_rng(0)
X = rng.normal(size=(300, 4)); y = X[:, 0] + 0.3 * rng.normal(size=300)
out = {"backend": _kernels.BACKEND}
for loss in ("fair", "pinball:0.8"):
    m = fit(X, y, LGBM.with_(n_estimators=40, bagging_fraction=0.8, bagging_freq=2),
            LossSpec.parse(loss))
    out[loss] = m.predict(X).tolist()
print(json.dumps(out))
"""


def _run(pure):
    env = dict(os.environ)
    env.pop("VOLBOOST_PURE_PYTHON", None)
    if pure:
        env["VOLBOOST_PURE_PYTHON"] = "1"
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(res.stdout)


def test_fallback_selected_by_environment_and_models_agree():
    c, p = _run(False), _run(True)
    assert c["backend"] == "cython" and p["backend"] == "python"
    for loss in ("fair", "pinball:0.8"):
        assert np.allclose(c[loss], p[loss], rtol=0, atol=1e-9)
