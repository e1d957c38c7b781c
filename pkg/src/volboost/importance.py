"""Gain and permutation feature importance, and their evolution across splits."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImportanceVector:
    """Percentage scores per feature.

    ``raw`` keeps the unnormalised values (signed for PFI). ``status`` is
    ``"ok"``, ``"no_splits"`` or ``"undefined"``.
    """

    feature_names: tuple
    scores: np.ndarray
    raw: np.ndarray
    method: str
    status: str = "ok"
    split: int | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(zip(self.feature_names, self.scores.tolist()))

    def ranking(self) -> list:
        order = np.argsort(-self.scores, kind="stable")
        return [self.feature_names[i] for i in order]


def _percent(raw) -> tuple:
    total = float(np.sum(raw))
    if not total > 0:
        return np.zeros_like(raw, dtype=float), False
    return 100.0 * np.asarray(raw, dtype=float) / total, True


def gain_importance(model, split=None) -> ImportanceVector:
    """Share of total split gain attributed to each feature."""
    raw = np.asarray(model.gain_totals, dtype=float).copy()
    scores, ok = _percent(raw)
    if not ok:
        log.warning("model has no splits; gain importance is all zero")
    return ImportanceVector(tuple(model.feature_names), scores, raw, "gfi",
                            "ok" if ok else "no_splits", split)


def gain_from_trees(model) -> np.ndarray:
    """Per-feature gain totals recomputed by walking serialised trees."""
    out = np.zeros(model.n_features)
    for t in model.to_dict()["trees"]:
        for f, g in zip(t["feature"], t["gain"]):
            if f >= 0:
                out[f] += g
    return out


def r2_score(y, y_hat) -> float:
    y = np.asarray(y, dtype=float)
    ss_res = float(np.sum((y - y_hat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 0.0 if ss_res == 0 else float("-inf")
    return 1.0 - ss_res / ss_tot


def used_features(model) -> np.ndarray:
    used = np.zeros(model.n_features, dtype=bool)
    for t in model.trees:
        used[t.feature[t.feature >= 0]] = True
    return used


def permutation_importance(model, X, y, repeats: int = 5, seed=0,
                           split=None) -> ImportanceVector:
    """Mean R² drop after shuffling each column, normalised to percent.

    Each feature draws from its own stream spawned from ``seed``, so the
    result does not depend on evaluation order. Negative drops are clamped
    to zero before normalisation; ``raw`` keeps the signed means.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    binned = model.mapper.transform(X)
    base = r2_score(y, model.predict_binned(binned))
    n_feat = X.shape[1]
    streams = np.random.SeedSequence(seed).spawn(n_feat)
    used = used_features(model)
    raw = np.zeros(n_feat)
    for j in range(n_feat):
        if not used[j]:
            continue  # predictions cannot change
        rng = np.random.default_rng(streams[j])
        drops = np.empty(repeats)
        col = binned[:, j].copy()
        for r in range(repeats):
            binned[:, j] = col[rng.permutation(len(col))]
            drops[r] = base - r2_score(y, model.predict_binned(binned))
        binned[:, j] = col
        raw[j] = drops.mean()
    scores, ok = _percent(np.maximum(raw, 0.0))
    return ImportanceVector(tuple(model.feature_names), scores, raw, "pfi",
                            "ok" if ok else "undefined", split,
                            {"baseline_r2": base, "repeats": repeats})


def importance_timeseries(vectors, window: int = 1):
    """Stack per-split vectors into a matrix and a trailing-mean smoothing of it."""
    if not vectors:
        raise ValueError("need at least one importance vector")
    if window < 1:
        raise ValueError("window must be >= 1")
    M = np.vstack([v.scores for v in vectors])
    smooth = np.vstack([M[max(0, i + 1 - window):i + 1].mean(axis=0) for i in range(len(M))])
    return M, smooth


def write_importance_csv(path, vectors, dates=None) -> None:
    """Long format: split_date, feature, method, score, raw_score."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split_date", "feature", "method", "score", "raw_score"])
        for i, v in enumerate(vectors):
            d = dates[i] if dates is not None else (v.split if v.split is not None else i)
            for name, s, r in zip(v.feature_names, v.scores, v.raw):
                w.writerow([str(d), name, v.method, repr(float(s)), repr(float(r))])
