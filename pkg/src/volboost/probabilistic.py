"""Quantile surfaces from pinball-loss boosters and from residual simulation (QRS)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .gbdt import BoostParams, fit
from .losses import LossSpec

LEVELS = np.round(np.arange(1, 100) / 100.0, 2)
CROSS_TOL = 1e-12


def level_label(q: float) -> str:
    return f"q{int(round(q * 100)):03d}"


@dataclass(frozen=True)
class QuantileSurface:
    """Predicted quantiles, one row per forecast and one column per level."""

    values: np.ndarray
    levels: np.ndarray = LEVELS
    scale: str = "log"

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        lv = np.asarray(self.levels, dtype=float)
        if vals.shape[1] != len(lv):
            raise ValueError("surface columns do not match the level count")
        if len(lv) > 1 and not np.all(np.diff(lv) > 0):
            raise ValueError("quantile levels must be strictly increasing")
        if self.scale not in ("log", "original"):
            raise ValueError("scale must be 'log' or 'original'")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "levels", lv)

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, q: float) -> np.ndarray:
        k = np.flatnonzero(np.isclose(self.levels, q, rtol=0, atol=1e-9))
        if len(k) == 0:
            raise KeyError(f"quantile level {q} not in surface")
        return self.values[:, k[0]]

    def rows(self, index) -> "QuantileSurface":
        return QuantileSurface(self.values[index], self.levels, self.scale)

    def to_csv(self, path, dates, y_true) -> None:
        """Write ``date, q001..q099, y_true`` with a leading scale comment line."""
        with open(path, "w", newline="") as fh:
            fh.write(f"# scale={self.scale}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date"] + [level_label(q) for q in self.levels] + ["y_true"])
            for d, row, y in zip(dates, self.values, y_true):
                w.writerow([str(d)] + [repr(float(v)) for v in row] + [repr(float(y))])

    @classmethod
    def from_csv(cls, path):
        """Inverse of :meth:`to_csv`; returns ``(surface, dates, y_true)``."""
        with open(path, newline="") as fh:
            first = fh.readline().strip()
            scale = first.split("=", 1)[1] if first.startswith("# scale=") else "log"
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        levels = np.array([int(h[1:]) / 100.0 for h in header[1:-1]])
        dates = [r[0] for r in body]
        vals = np.array([[float(v) for v in r[1:-1]] for r in body]).reshape(len(body), len(levels))
        y = np.array([float(r[-1]) for r in body])
        return cls(vals, levels, scale), dates, y


def empirical_quantiles(sample, levels=LEVELS) -> np.ndarray:
    """Linearly interpolated empirical quantiles of ``sample``."""
    s = np.asarray(sample, dtype=float)
    if s.size == 0:
        raise ValueError("empty residual set")
    return np.quantile(s, levels, method="linear")


@dataclass
class ResidualStore:
    """Residual sets Θ, one per forecast row, on the training (log) scale."""

    residuals: list

    def __post_init__(self):
        self.residuals = [np.asarray(r, dtype=float) for r in self.residuals]

    def __len__(self) -> int:
        return len(self.residuals)

    @classmethod
    def in_sample(cls, y_train, fitted, window=None) -> "ResidualStore":
        """Single-row store from a model's own training errors."""
        e = np.asarray(y_train, dtype=float) - np.asarray(fitted, dtype=float)
        if window is not None:
            e = e[-int(window):]
        return cls([e])


def qrs_surface(point_forecasts, store: ResidualStore, levels=LEVELS,
                scale: str = "log") -> QuantileSurface:
    """``y_hat + quantile_q(Θ)`` for every row; monotone in ``q`` by construction."""
    pf = np.atleast_1d(np.asarray(point_forecasts, dtype=float))
    if len(store) != len(pf):
        raise ValueError("one residual set per point forecast is required")
    levels = np.asarray(levels, dtype=float)
    vals = np.empty((len(pf), len(levels)))
    for i, (p, res) in enumerate(zip(pf, store.residuals)):
        vals[i] = p + empirical_quantiles(res, levels)
    # a sum of a constant and a sorted vector can round out of order by one ulp
    np.maximum.accumulate(vals, axis=1, out=vals)
    return QuantileSurface(vals, levels, scale)


def fit_pinball_models(X, y, params: BoostParams, levels=LEVELS, renew_leaves=True,
                       feature_names=None) -> list:
    """One pinball booster per level, all sharing ``params`` (including seed)."""
    return [fit(X, y, params, LossSpec("pinball", q=float(q), renew_leaves=renew_leaves),
                feature_names=feature_names)
            for q in np.asarray(levels, dtype=float)]


def predict_surface(models, X, levels=LEVELS) -> QuantileSurface:
    cols = [m.predict(X) for m in models]
    return QuantileSurface(np.column_stack(cols), levels, "log")


def fit_pinball_surface(X_train, y_train, X_new, params: BoostParams, levels=LEVELS,
                        renew_leaves=True) -> QuantileSurface:
    """Fit the per-level models and return their surface on ``X_new`` (log scale)."""
    models = fit_pinball_models(X_train, y_train, params, levels, renew_leaves)
    return predict_surface(models, X_new, levels)


def crossing_audit(surface: QuantileSurface, tol: float = CROSS_TOL) -> dict:
    """Count rows where some higher level falls below its lower neighbour."""
    v = surface.values
    crossed = np.any(v[:, 1:] < v[:, :-1] - tol, axis=1) if v.shape[1] > 1 \
        else np.zeros(len(v), dtype=bool)
    n = len(v)
    return {"rows_with_crossing": int(crossed.sum()),
            "fraction": float(crossed.sum() / n) if n else 0.0}


def back_transform(surface: QuantileSurface, variance: float | None = None) -> QuantileSurface:
    """Exponentiate a log-scale surface.

    ``variance`` enables the log-normal half-variance correction (off by default).
    """
    if surface.scale != "log":
        raise ValueError("surface is not on the log scale")
    vals = surface.values if variance is None else surface.values + 0.5 * variance
    return QuantileSurface(np.exp(vals), surface.levels, "original")
