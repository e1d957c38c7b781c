"""Forecast evaluation: point metrics, error diagnostics, probabilistic scores
and paired significance tests."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .probabilistic import QuantileSurface, crossing_audit

ALPHA_TEST = 0.05
EXACT_MAX_N = 25


@dataclass
class ForecastRun:
    """Realised values and forecasts on the original scale."""

    dates: list
    y_true: np.ndarray
    y_pred: np.ndarray
    surface: QuantileSurface | None = None
    name: str = "run"

    def __post_init__(self):
        self.y_true = np.asarray(self.y_true, dtype=float)
        self.y_pred = np.asarray(self.y_pred, dtype=float)
        if len(self.y_true) != len(self.y_pred) or len(self.dates) != len(self.y_true):
            raise ValueError("dates, y_true and y_pred must have equal lengths")
        if self.surface is not None and len(self.surface) != len(self.y_true):
            raise ValueError("surface row count does not match y_true")

    @property
    def errors(self) -> np.ndarray:
        return self.y_true - self.y_pred


@dataclass
class EvaluationReport:
    """Named metric values plus per-level calibration data."""

    name: str
    metrics: dict = field(default_factory=dict)
    calibration: dict | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "metrics": self.metrics, "calibration": self.calibration}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        width = max((len(k) for k in self.metrics), default=0)
        lines = [f"report: {self.name}"]
        for k, v in self.metrics.items():
            val = f"{v:.6g}" if isinstance(v, float) else str(v)
            lines.append(f"  {k:<{width}}  {val:>14}")
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ deterministic

def smape(y, y_hat) -> float:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    denom = np.abs(y) + np.abs(y_hat)
    num = 2.0 * np.abs(y - y_hat)
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom != 0)
    return float(100.0 * terms.mean())


def central_moments(e):
    e = np.asarray(e, dtype=float)
    c = e - e.mean()
    return float(np.mean(c ** 2)), float(np.mean(c ** 3)), float(np.mean(c ** 4))


def outlier_fractions(e, ks=(1.5, 3.0)) -> dict:
    """Percent of errors below ``Q1 - k IQR`` and above ``Q3 + k IQR``."""
    e = np.asarray(e, dtype=float)
    q1, q3 = np.quantile(e, [0.25, 0.75])
    iqr = q3 - q1
    out = {}
    for k in ks:
        tag = f"{k:g}"
        out[f"below_lb{tag}"] = float(100.0 * np.mean(e < q1 - k * iqr))
        out[f"above_ub{tag}"] = float(100.0 * np.mean(e > q3 + k * iqr))
    return out


def deterministic_metrics(y, y_hat) -> dict:
    """MAE, sMAPE, MSE, R², ME, skewness, kurtosis and IQR outlier shares."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least two forecasts")
    e = y - y_hat
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(e * e))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else float("-inf")
    m2, m3, m4 = central_moments(e)
    out = {
        "MAE": float(np.mean(np.abs(e))),
        "sMAPE": smape(y, y_hat),
        "MSE": float(np.mean(e * e)),
        "R2": r2,
        "ME": float(np.mean(e)),
        "skewness": m3 / m2 ** 1.5 if m2 > 0 else 0.0,
        "kurtosis": m4 / (m2 * m2) if m2 > 0 else 0.0,
    }
    out.update(outlier_fractions(e))
    return out


# ------------------------------------------------------------------ probabilistic

def pinball(y, y_hat, q):
    r = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    return np.where(r >= 0, q * r, (q - 1.0) * r)


def crps_rows(y, surface: QuantileSurface) -> np.ndarray:
    """Per-row ``2/|Π| Σ_q pinball_q``."""
    y = np.asarray(y, dtype=float)
    lv = surface.levels
    losses = pinball(y[:, None], surface.values, lv[None, :])
    return 2.0 * losses.sum(axis=1) / len(lv)


def crps(y, surface) -> float:
    return float(np.mean(crps_rows(y, surface)))


def reliability(y, surface) -> np.ndarray:
    """ReFr per level: share of rows with ``y <= y_hat_q``."""
    y = np.asarray(y, dtype=float)
    return np.mean(y[:, None] <= surface.values, axis=0)


def marfe(y, surface) -> float:
    return float(np.mean(np.abs(reliability(y, surface) - surface.levels)))


def winkler_scores(y, lower, upper, alpha: float) -> np.ndarray:
    """Interval width plus ``2/alpha`` times the distance outside the interval."""
    y = np.asarray(y, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    width = upper - lower
    return np.where(y < lower, width + 2.0 / alpha * (lower - y),
                    np.where(y > upper, width + 2.0 / alpha * (y - upper), width))


def winkler_alpha(q_l: float, q_u: float, as_paper: bool = False) -> float:
    nominal = round(q_u - q_l, 12)
    return nominal if as_paper else round(1.0 - nominal, 12)


def coverage(y, lower, upper) -> dict:
    """Percent below, within and above ``[lower, upper]``."""
    y = np.asarray(y, dtype=float)
    below = y < lower
    above = (y > upper) & ~below
    n = len(y)
    nb, na = int(below.sum()), int(above.sum())
    return {"below": 100.0 * nb / n, "within": 100.0 * (n - nb - na) / n,
            "above": 100.0 * na / n}


def probabilistic_metrics(y, surface: QuantileSurface, q_l: float = 0.05, q_u: float = 0.95,
                          winkler_alpha_as_paper: bool = False) -> dict:
    """CRPS, MARFE, MWS, PI coverage, MAE-Q/MSE-Q and crossing share."""
    y = np.asarray(y, dtype=float)
    for q in (q_l, q_u, 0.5):
        surface.column(q)  # raises on a missing level
    lo, hi, med = surface.column(q_l), surface.column(q_u), surface.column(0.5)
    alpha = winkler_alpha(q_l, q_u, winkler_alpha_as_paper)
    cov = coverage(y, lo, hi)
    refr = reliability(y, surface)
    return {
        "CRPS": crps(y, surface),
        "MARFE": float(np.mean(np.abs(refr - surface.levels))),
        "MWS": float(np.mean(winkler_scores(y, lo, hi, alpha))),
        "winkler_alpha": alpha,
        "PI_below": cov["below"],
        "PI_within": cov["within"],
        "PI_above": cov["above"],
        "MAE_Q": float(np.mean(np.abs(y - med))),
        "MSE_Q": float(np.mean((y - med) ** 2)),
        "crossing_fraction": crossing_audit(surface)["fraction"],
    }


def evaluate_run(run: ForecastRun, q_l=0.05, q_u=0.95,
                 winkler_alpha_as_paper=False) -> EvaluationReport:
    metrics = deterministic_metrics(run.y_true, run.y_pred)
    calib = None
    if run.surface is not None:
        metrics.update(probabilistic_metrics(run.y_true, run.surface, q_l, q_u,
                                             winkler_alpha_as_paper))
        calib = {"levels": run.surface.levels.tolist(),
                 "refr": reliability(run.y_true, run.surface).tolist()}
    return EvaluationReport(run.name, metrics, calib)


def write_calibration_csv(path, report: EvaluationReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "refr"])
        if report.calibration:
            for q, r in zip(report.calibration["levels"], report.calibration["refr"]):
                w.writerow([repr(float(q)), repr(float(r))])


def write_coverage_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "below", "within", "above"])
        for r in reports:
            if "PI_within" in r.metrics:
                m = r.metrics
                w.writerow([r.name] + [repr(float(m[k]))
                                       for k in ("PI_below", "PI_within", "PI_above")])


# ------------------------------------------------------------------ tests

def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def diebold_mariano(e1, e2, loss: str = "squared") -> dict:
    """Equal-accuracy test on ``d = L(e1) - L(e2)`` at horizon one.

    Negative statistics mean the first forecast has lower loss.
    """
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if len(e1) != len(e2):
        raise ValueError("error vectors differ in length")
    if len(e1) < 10:
        raise ValueError("need at least 10 paired errors")
    if loss == "squared":
        d = e1 * e1 - e2 * e2
    elif loss == "absolute":
        d = np.abs(e1) - np.abs(e2)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    var = float(np.var(d))
    if not var > 0:
        return {"statistic": None, "p_value": None, "status": "undefined"}
    stat = float(np.mean(d)) / math.sqrt(var / len(d))
    return {"statistic": stat, "p_value": math.erfc(abs(stat) / math.sqrt(2.0)),
            "status": "ok"}


def average_ranks(x) -> np.ndarray:
    """Ranks starting at 1 with ties sharing their mean rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_lower_tail(n: int, w: float) -> float:
    # counts of subsets of {1..n} by rank sum
    top = n * (n + 1) // 2
    counts = np.zeros(top + 1)
    counts[0] = 1.0
    for k in range(1, n + 1):
        counts[k:] = counts[k:] + counts[:-k].copy()
    return float(counts[: int(math.floor(w + 1e-9)) + 1].sum() / 2.0 ** n)


def wilcoxon_signed_rank(abs_e1, abs_e2, alpha: float = ALPHA_TEST) -> dict:
    """One-sided signed-rank test that the first forecast has smaller errors.

    ``statistic`` is the rank sum of positive differences ``|e1| - |e2|``.
    Small values favour the first forecast.
    """
    a = np.abs(np.asarray(abs_e1, dtype=float))
    b = np.abs(np.asarray(abs_e2, dtype=float))
    if len(a) != len(b):
        raise ValueError("error vectors differ in length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return {"statistic": None, "p_value": None, "significant": None,
                "status": "no_decision", "n": 0, "method": None}
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    ties = len(np.unique(np.abs(d))) < n
    if n <= EXACT_MAX_N and not ties:
        p = _exact_lower_tail(n, w_plus)
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tcounts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tcounts ** 3 - tcounts)) / 48.0
        if var <= 0:
            return {"statistic": w_plus, "p_value": None, "significant": None,
                    "status": "no_decision", "n": n, "method": "normal"}
        z = (w_plus - mean + 0.5) / math.sqrt(var)
        p = _norm_cdf(z)
        method = "normal"
    return {"statistic": w_plus, "p_value": p, "significant": bool(p < alpha),
            "status": "ok", "n": n, "method": method}


def pairwise_tests(errors: dict, loss: str = "squared") -> dict:
    """DM statistics and Wilcoxon decisions for every ordered pair of runs.

    ``errors`` maps run name to its error vector. Entry ``[a][b]`` compares
    ``a`` (first) against ``b``.
    """
    names = list(errors)
    dm = {a: {} for a in names}
    wx = {a: {} for a in names}
    for a in names:
        for b in names:
            if a == b:
                dm[a][b] = None
                wx[a][b] = None
                continue
            dm[a][b] = diebold_mariano(errors[a], errors[b], loss)["statistic"]
            res = wilcoxon_signed_rank(errors[a], errors[b])
            wx[a][b] = None if res["significant"] is None else int(res["significant"])
    return {"dm": dm, "wilcoxon": wx, "order": names}


def summarize_reports(reports) -> dict:
    """Mean and population standard deviation of each metric shared by all reports."""
    keys = [k for k in reports[0].metrics
            if all(isinstance(r.metrics.get(k), (int, float)) for r in reports)]
    out = {}
    for k in keys:
        vals = np.array([r.metrics[k] for r in reports], dtype=float)
        out[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
