"""Quantile binning of continuous features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BinMapper:
    """Per-feature bin thresholds.

    A value ``x`` of feature ``j`` falls in bin ``k`` when
    ``thresholds[j][k-1] < x <= thresholds[j][k]``; values above the last
    threshold land in the last bin. A feature with ``t`` thresholds has
    ``t + 1`` bins.
    """

    thresholds: list

    @classmethod
    def fit(cls, X, max_bin: int = 255) -> "BinMapper":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("cannot fit bins on empty training data")
        if max_bin < 2:
            raise ValueError("max_bin must be >= 2")
        return cls([_feature_thresholds(X[:, j], max_bin) for j in range(X.shape[1])])

    @property
    def n_features(self) -> int:
        return len(self.thresholds)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(t) + 1 for t in self.thresholds], dtype=np.int32)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} feature columns, got shape {X.shape}")
        out = np.empty(X.shape, dtype=np.uint8)
        for j, t in enumerate(self.thresholds):
            out[:, j] = np.searchsorted(t, X[:, j], side="left")
        return np.ascontiguousarray(out)

    def to_dict(self) -> dict:
        return {"thresholds": [t.tolist() for t in self.thresholds]}

    @classmethod
    def from_dict(cls, d: dict) -> "BinMapper":
        return cls([np.asarray(t, dtype=float) for t in d["thresholds"]])


def _feature_thresholds(col: np.ndarray, max_bin: int) -> np.ndarray:
    if not np.all(np.isfinite(col)):
        raise ValueError("features must be finite")
    distinct = np.unique(col)
    if len(distinct) <= max_bin:
        # one bin per distinct value, cut at midpoints
        return (distinct[:-1] + distinct[1:]) / 2.0
    s = np.sort(col)
    n = len(s)
    cuts = []
    for k in range(1, max_bin):
        i = (k * n) // max_bin
        if 0 < i < n:
            cuts.append((s[i - 1] + s[i]) / 2.0)
    t = np.unique(np.asarray(cuts))
    return t[t < s[-1]]
