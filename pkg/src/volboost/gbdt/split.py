"""Second-order split gain and leaf weights with L1/L2 regularisation."""

from __future__ import annotations

import numpy as np

from . import _kernels


def soft_threshold(G: float, alpha: float) -> float:
    """L1 shrinkage ``sign(G) * max(|G| - alpha, 0)``."""
    return float(np.sign(G) * max(abs(G) - alpha, 0.0))


def leaf_weight(G: float, H: float, params) -> float:
    """Optimal leaf output ``-S(G) / (H + lambda)``."""
    denom = H + params.reg_lambda
    if not denom > 0:
        raise ValueError(f"degenerate leaf: H + lambda = {denom} <= 0")
    return -soft_threshold(G, params.reg_alpha) / denom


def build_histograms(rows, binned, g, h, features=None, max_bins=None):
    """Per-feature ``(sum g, sum h, count)`` histograms for ``rows``.

    Returns an array of shape ``(len(features), max_bins, 3)``.
    """
    binned = np.ascontiguousarray(binned, dtype=np.uint8)
    if features is None:
        features = np.arange(binned.shape[1])
    if max_bins is None:
        max_bins = int(binned.max()) + 1 if binned.size else 1
    return _kernels.build_histogram(
        binned, np.asarray(rows, dtype=np.int64), np.asarray(g, dtype=float),
        np.asarray(h, dtype=float), np.asarray(features, dtype=np.int64), int(max_bins))


def best_split(hist, totals, params, n_bins, features=None):
    """Highest-gain legal split of a node, or ``None``.

    Parameters
    ----------
    hist : ndarray of shape (n_selected, max_bins, 3)
    totals : tuple
        Node ``(G, H, count)``.
    params : BoostParams
        Supplies ``reg_alpha``, ``reg_lambda``, ``reg_gamma`` and
        ``min_data_in_leaf``.
    n_bins : array of int
        Bin count per feature id.
    features : array of int, optional
        Feature ids matching the histogram rows; defaults to ``0..n-1``.

    Returns
    -------
    dict or None
        ``{"feature", "bin", "gain"}``; the left child takes bins ``<= bin``.
    """
    hist = np.ascontiguousarray(hist, dtype=float)
    if features is None:
        features = np.arange(hist.shape[0])
    G, H, C = totals
    f, b, gain, *_ = _kernels.find_best_split(
        hist, np.asarray(features, dtype=np.int64), np.asarray(n_bins, dtype=np.int32),
        float(G), float(H), float(C), params.reg_lambda, params.reg_alpha,
        params.reg_gamma, float(params.min_data_in_leaf))
    if f < 0:
        return None
    return {"feature": int(f), "bin": int(b), "gain": float(gain)}
