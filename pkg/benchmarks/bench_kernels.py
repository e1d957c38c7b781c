"""Compare the compiled tree kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows 5000] [--features 10] [--repeat 3]

Each kernel is timed on identical inputs in both backends, and the
outputs are checked for agreement before any timing is reported.
"""

import argparse
import time

import numpy as np

from volboost.gbdt import BinMapper
from volboost.gbdt import _pykernels as py

try:
    from volboost.gbdt import _ckernels as ck
except ImportError:  # extension not built
    ck = None


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _renewed(k, leaves, rows, residual, value):
    out = value.copy()
    k.leaf_quantiles(leaves, rows, residual, 0.3, out)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=5000)
    ap.add_argument("--features", type=int, default=10)
    ap.add_argument("--max-bin", type=int, default=255)
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if ck is None:
        raise SystemExit("compiled kernels unavailable; build with `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.rows, args.features))
    mapper = BinMapper.fit(X, args.max_bin)
    B = mapper.transform(X)
    nb = mapper.n_bins
    mb = int(nb.max())
    g = rng.normal(size=args.rows)
    h = rng.uniform(0.5, 1.5, size=args.rows)
    rows = np.arange(args.rows, dtype=np.int64)
    feats = np.arange(args.features, dtype=np.int64)
    grow = (B, rows, g, h, feats, nb, mb, args.depth, 20, 0.1, 0.0, 0.0, -1)

    tree = ck.grow_tree(*grow)
    f, t, l, r, v = tree[0], tree[1], tree[2], tree[3], tree[5]
    off = np.array([0, len(f)], dtype=np.int64)
    leaves = ck.apply_tree(B, f, t, l, r)

    cases = {
        "build_histogram": lambda k: k.build_histogram(B, rows, g, h, feats, mb),
        "grow_tree": lambda k: k.grow_tree(*grow),
        "apply_tree": lambda k: k.apply_tree(B, f, t, l, r),
        "predict_trees": lambda k: k.predict_trees(B, f, t, l, r, v, off, 0.0, 0.1),
        "leaf_quantiles": lambda k: _renewed(k, leaves, rows, g, v),
    }

    # agreement first
    for name, call in cases.items():
        a, b = call(ck), call(py)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            if x is not None and not np.allclose(x, y, rtol=1e-9, atol=1e-9):
                raise SystemExit(f"{name}: backends disagree")

    print(f"rows={args.rows} features={args.features} max_bin={args.max_bin} depth={args.depth}")
    print(f"{'kernel':<16} {'cython ms':>10} {'python ms':>10} {'speedup':>8}")
    for name, call in cases.items():
        tc = best_time(lambda: call(ck), args.repeat)
        tp = best_time(lambda: call(py), args.repeat)
        print(f"{name:<16} {1e3 * tc:>10.3f} {1e3 * tp:>10.3f} {tp / tc:>8.1f}")


if __name__ == "__main__":
    main()
