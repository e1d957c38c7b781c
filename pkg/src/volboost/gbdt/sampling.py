"""Row sampling per boosting iteration: bagging (gbdt) and GOSS."""

from __future__ import annotations

import math

import numpy as np


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-9))


def sample_rows(gradients, params, iteration: int, rng, previous=None):
    """Rows and weights used to grow the tree at ``iteration``.

    Parameters
    ----------
    gradients : ndarray of shape (N,)
    params : BoostParams
    iteration : int
        Zero-based boosting iteration.
    rng : numpy.random.Generator
    previous : tuple or None
        The ``(rows, weights)`` returned at the previous iteration. Under
        bagging a bag is drawn when ``iteration % bagging_freq == 0`` and
        reused in between.

    Returns
    -------
    rows : ndarray of int64, sorted ascending
    weights : ndarray of float64 aligned with ``rows``
    """
    g = np.asarray(gradients, dtype=float)
    n = len(g)
    if params.sampler == "goss":
        a, b = params.goss_top_rate, params.goss_other_rate
        n_top = min(n, _ceil(a * n))
        n_other = min(n - n_top, _ceil(b * n))
        order = np.argsort(-np.abs(g), kind="stable")
        top = order[:n_top]
        other = rng.choice(order[n_top:], size=n_other, replace=False)
        rows = np.concatenate([top, other]).astype(np.int64)
        w = np.concatenate([np.ones(n_top), np.full(n_other, (1.0 - a) / b)])
        idx = np.argsort(rows, kind="stable")
        return rows[idx], w[idx]

    bagging = params.bagging_fraction < 1.0 and params.bagging_freq > 0
    if not bagging:
        return np.arange(n, dtype=np.int64), np.ones(n)
    if previous is not None and iteration % params.bagging_freq != 0:
        return previous
    k = _ceil(params.bagging_fraction * n)
    rows = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
    return rows, np.ones(k)
