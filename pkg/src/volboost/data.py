"""Ingestion, realized-variance transforms, leakage-free preprocessing and
rolling-origin splits.

A :class:`TimeTable` row ``t`` pairs a predictor vector built only from
information available before ``t`` with the log realized variance on day
``t``. Predictor columns loaded from CSV are shifted by ``lag`` rows to
enforce this; the realized-variance lags built by :func:`build_rv_features`
are lagged by construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

WEEK = 5
MONTH = 22


class DataError(ValueError):
    """Rejected input data (bad values, gaps, positivity violations)."""


class SchemaError(DataError):
    """Column layout does not match what was fitted or requested."""


@dataclass(frozen=True)
class TimeTable:
    """Dated feature matrix with the log target and the original-scale target."""

    dates: np.ndarray
    features: np.ndarray
    feature_names: tuple
    target: np.ndarray
    raw_target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", np.asarray(self.dates, dtype="datetime64[D]"))
        # private C-ordered copies: reductions then do not depend on the caller's layout
        feats = np.array(self.features, dtype=float, order="C", ndmin=1)
        if feats.ndim == 1:
            feats = feats[:, None]
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "target", np.array(self.target, dtype=float))
        object.__setattr__(self, "raw_target", np.array(self.raw_target, dtype=float))
        n = len(self.dates)
        if feats.shape[0] != n or len(self.target) != n or len(self.raw_target) != n:
            raise SchemaError("dates, features and targets must have equal row counts")
        if feats.shape[1] != len(self.feature_names):
            raise SchemaError("feature_names does not match the feature matrix")
        if n > 1 and not np.all(self.dates[1:] > self.dates[:-1]):
            raise DataError("dates must be strictly increasing")
        for a in (self.features, self.target, self.raw_target):
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def rows(self, index) -> "TimeTable":
        """Sub-table for a slice, an index array or a boolean mask."""
        return TimeTable(self.dates[index], self.features[index], self.feature_names,
                         self.target[index], self.raw_target[index])

    def index_of(self, date) -> int:
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.dates, d))
        if i >= len(self.dates) or self.dates[i] != d:
            raise DataError(f"date {d} not present in table")
        return i

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=list(self.feature_names))
        df.insert(0, "date", pd.to_datetime(self.dates))
        df["target"] = self.target
        df["raw_target"] = self.raw_target
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "TimeTable":
        names = [c for c in df.columns if c not in ("date", "target", "raw_target")]
        return cls(pd.to_datetime(df["date"]).to_numpy().astype("datetime64[D]"),
                   df[names].to_numpy(dtype=float), tuple(names),
                   df["target"].to_numpy(dtype=float), df["raw_target"].to_numpy(dtype=float))


# ---------------------------------------------------------------- transforms

def compute_realized_variance(prices) -> float:
    """Sum of squared intraday log returns of one day's price path."""
    p = np.asarray(prices, dtype=float)
    if p.ndim != 1 or len(p) < 2:
        raise DataError("need at least two intraday prices")
    if not np.all(p > 0):
        raise DataError("intraday prices must be strictly positive")
    r = np.diff(np.log(p))
    return float(np.dot(r, r))


def daily_realized_variance(timestamps, prices) -> pd.Series:
    """Realized variance per calendar day from an intraday price series."""
    ts = pd.to_datetime(pd.Series(timestamps))
    df = pd.DataFrame({"day": ts.dt.normalize().to_numpy(),
                       "price": np.asarray(prices, dtype=float)})
    out = {day: compute_realized_variance(grp["price"].to_numpy())
           for day, grp in df.groupby("day", sort=True)}
    return pd.Series(out, name="RV")


def build_rv_features(rv) -> dict:
    """Log target and its daily, weekly and monthly lags.

    Returns a dict with keys ``target``, ``d``, ``w``, ``m``. Row ``t`` of
    ``d`` is ``ln RV[t-1]``, of ``w`` the log of the mean of the previous 5
    values and of ``m`` the log of the mean of the previous 22. Rows without
    enough history hold NaN.
    """
    rv = np.asarray(rv, dtype=float)
    if not np.all(rv > 0):
        raise DataError("realized variance must be strictly positive")
    n = len(rv)
    csum = np.concatenate([[0.0], np.cumsum(rv)])

    def trailing(width):
        out = np.full(n, np.nan)
        t = np.arange(width, n)
        out[t] = np.log((csum[t] - csum[t - width]) / width)
        return out

    return {"target": np.log(rv), "d": trailing(1), "w": trailing(WEEK), "m": trailing(MONTH)}


# ---------------------------------------------------------------- ingestion

def load_csv(path, required=None) -> pd.DataFrame:
    """Read a dated CSV: first column ISO dates, the rest numeric.

    Gaps are forward-filled within a column; a column starting with missing
    values is an error.
    """
    try:
        df = pd.read_csv(path, sep=",", decimal=".")
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if df.shape[1] < 2:
        raise SchemaError(f"{path}: need a date column and at least one value column")
    date_col = df.columns[0]
    try:
        dates = pd.to_datetime(df[date_col], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: column {date_col!r} is not ISO-8601 dates: {exc}") from exc
    df = df.drop(columns=[date_col])
    df.index = pd.DatetimeIndex(dates.dt.normalize(), name="date")
    for col in df.columns:
        converted = pd.to_numeric(df[col], errors="coerce")
        bad = converted.isna() & df[col].notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"{path}: non-numeric value in column {col!r} at data row {row + 1}")
        df[col] = converted
    if not df.index.is_monotonic_increasing or df.index.has_duplicates:
        raise DataError(f"{path}: dates must be strictly increasing")
    for col in df.columns:
        if df[col].isna().iloc[0] if len(df) else False:
            raise DataError(f"{path}: column {col!r} starts with missing values")
    df = df.ffill()
    for col in required or ():
        if col not in df.columns:
            raise SchemaError(f"{path}: required column {col!r} not found")
    return df


def merge_frames(*frames) -> pd.DataFrame:
    """Inner join of dated frames on their date index."""
    out = frames[0]
    for f in frames[1:]:
        overlap = set(out.columns) & set(f.columns)
        if overlap:
            raise SchemaError(f"duplicate columns across inputs: {sorted(overlap)}")
        out = out.join(f, how="inner")
    return out


def make_table(frame: pd.DataFrame, target: str, *, target_is_log: bool = False,
               lag: int = 1, rv_features: bool = True) -> TimeTable:
    """Build a :class:`TimeTable` from a dated frame.

    Parameters
    ----------
    frame : DataFrame indexed by date
    target : str
        Realized-variance column (original scale unless ``target_is_log``).
    lag : int
        Rows by which exogenous predictors are shifted so that row ``t``
        only sees values up to ``t - lag``. Use 0 when the file is already
        aligned.
    rv_features : bool
        Append the daily/weekly/monthly log-RV lags of the target.
    """
    if target not in frame.columns:
        raise SchemaError(f"target column {target!r} not found")
    col = frame[target].to_numpy(dtype=float)
    if target_is_log:
        raw = np.exp(col)
    else:
        bad = np.flatnonzero(~(col > 0))
        if len(bad):
            raise DataError(f"target {target!r} must be positive; row {int(bad[0]) + 1} "
                            f"has {col[bad[0]]}")
        raw = col
    if lag < 0:
        raise ValueError("lag must be >= 0")
    preds = frame.drop(columns=[target]).shift(lag)
    names = [str(c) for c in preds.columns]
    blocks = [preds.to_numpy(dtype=float)]
    if rv_features:
        rvf = build_rv_features(raw)
        stem = target[3:] if target.startswith("ln_") else target
        names += [f"ln_{stem}d", f"ln_{stem}w", f"ln_{stem}m"]
        blocks.append(np.column_stack([rvf["d"], rvf["w"], rvf["m"]]))
    X = np.hstack(blocks) if blocks else np.zeros((len(frame), 0))
    keep = np.all(np.isfinite(X), axis=1)
    if not keep.any():
        raise DataError("no row has a complete predictor history")
    dates = frame.index.to_numpy().astype("datetime64[D]")
    return TimeTable(dates[keep], X[keep], tuple(names), np.log(raw[keep]), raw[keep])


def horizon_table(table: TimeTable, h: int) -> TimeTable:
    """Pair each target with the predictor row ``h - 1`` rows earlier.

    Row ``t`` of the result predicts the target at date ``t`` from
    information up to ``t - h``. ``h == 1`` returns the table unchanged.
    """
    if h < 1:
        raise ValueError("horizon must be >= 1")
    if h == 1:
        return table
    if h > len(table):
        raise DataError(f"horizon {h} exceeds table length {len(table)}")
    k = h - 1
    return TimeTable(table.dates[k:], table.features[:-k], table.feature_names,
                     table.target[k:], table.raw_target[k:])


# ---------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class PreprocessParams:
    """Winsorization caps, standardization moments and shock thresholds,
    all estimated on training rows only."""

    feature_names: tuple
    lower_q: float
    upper_q: float
    lower_caps: tuple
    upper_caps: tuple
    means: tuple
    stds: tuple
    constant: tuple
    shock_threshold: float
    shock_sigma: tuple
    shock_enabled: tuple
    winsorize_target: bool = False
    target_caps: tuple = field(default=(float("-inf"), float("inf")))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_caps"] = [float(x) for x in self.target_caps]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessParams":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @classmethod
    def from_json(cls, text: str) -> "PreprocessParams":
        return cls.from_dict(json.loads(text))


def winsorize(X, lower, upper) -> np.ndarray:
    """Clip each column to ``[lower_j, upper_j]``."""
    return np.clip(np.asarray(X, dtype=float), np.asarray(lower), np.asarray(upper))


def fit_preprocess(train: TimeTable, lower_q: float = 0.01, upper_q: float = 0.99,
                   gamma: float = 2.5, winsorize_target: bool = False) -> PreprocessParams:
    """Estimate preprocessing parameters on the training rows."""
    if len(train) == 0:
        raise DataError("cannot fit preprocessing on an empty table")
    if not (0 < lower_q < 0.5 < upper_q < 1):
        raise ValueError("need 0 < lower_q < 0.5 < upper_q < 1")
    if not gamma > 0:
        raise ValueError("shock threshold gamma must be positive")
    X = train.features
    lo = np.quantile(X, lower_q, axis=0, method="linear")
    hi = np.quantile(X, upper_q, axis=0, method="linear")
    Xc = winsorize(X, lo, hi)
    mean = Xc.mean(axis=0)
    std = Xc.std(axis=0)
    constant = ~(std > 0)
    for j in np.flatnonzero(constant):
        log.info("feature %s is constant on the training rows", train.feature_names[j])
    std_safe = np.where(constant, 1.0, std)
    tcaps = (float("-inf"), float("inf"))
    if winsorize_target:
        tcaps = (float(np.quantile(train.target, lower_q)),
                 float(np.quantile(train.target, upper_q)))
    return PreprocessParams(
        feature_names=tuple(train.feature_names), lower_q=lower_q, upper_q=upper_q,
        lower_caps=tuple(lo.tolist()), upper_caps=tuple(hi.tolist()),
        means=tuple(mean.tolist()), stds=tuple(std_safe.tolist()),
        constant=tuple(bool(c) for c in constant), shock_threshold=float(gamma),
        shock_sigma=tuple(std.tolist()), shock_enabled=tuple(bool(s > 0) for s in std),
        winsorize_target=winsorize_target, target_caps=tcaps,
    )


def shock_indicators(X, sigma, gamma, enabled=None) -> np.ndarray:
    """Binary flags ``|x_j| > gamma * sigma_j``; disabled columns are all zero."""
    X = np.asarray(X, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    out = (np.abs(X) > gamma * sigma).astype(float)
    if enabled is not None:
        out[:, ~np.asarray(enabled, dtype=bool)] = 0.0
    return out


def apply_preprocess(table: TimeTable, params: PreprocessParams,
                     with_shocks: bool = False) -> TimeTable:
    """Cap, standardize and optionally append shock indicator columns."""
    if tuple(table.feature_names) != tuple(params.feature_names):
        unknown = sorted(set(table.feature_names) ^ set(params.feature_names))
        raise SchemaError(f"feature schema mismatch: {unknown or 'column order differs'}")
    X = table.features
    Z = (winsorize(X, params.lower_caps, params.upper_caps) - np.asarray(params.means)) \
        / np.asarray(params.stds)
    names = list(table.feature_names)
    if with_shocks:
        S = shock_indicators(X, params.shock_sigma, params.shock_threshold,
                             params.shock_enabled)
        Z = np.hstack([Z, S])
        names += [f"shock_{n}" for n in table.feature_names]
    target = table.target
    if params.winsorize_target:
        target = np.clip(target, *params.target_caps)
    return TimeTable(table.dates, Z, tuple(names), target, table.raw_target)


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class RollingSplit:
    """One rolling-origin step: train on rows ``[0, train_stop)``, test ``test_index``."""

    test_index: int
    train_stop: int
    horizon: int = 1

    @property
    def train_rows(self) -> range:
        return range(0, self.train_stop)


def rolling_splits(table: TimeTable, test_start, h: int = 1, test_end=None,
                   min_train: int = 2) -> list:
    """Expanding-window splits, one per test row from ``test_start`` on.

    ``table`` must already pair predictors and targets for horizon ``h``
    (see :func:`horizon_table`). Targets of training rows must be observed
    by the forecast origin, so split ``tau`` trains on rows
    ``[0, tau - h + 1)``.
    """
    if h < 1:
        raise ValueError("horizon must be >= 1")
    start = test_start if isinstance(test_start, (int, np.integer)) else table.index_of(test_start)
    stop = len(table) if test_end is None else (
        test_end + 1 if isinstance(test_end, (int, np.integer)) else table.index_of(test_end) + 1)
    if not 0 <= start < len(table):
        raise DataError("test start outside table")
    first_train = start - h + 1
    if first_train < min_train:
        raise DataError(f"test start leaves {max(first_train, 0)} training rows; "
                        f"need at least {min_train}")
    return [RollingSplit(tau, tau - h + 1, h) for tau in range(start, stop)]


def with_target(table: TimeTable, target, raw_target=None) -> TimeTable:
    """Copy of ``table`` with replaced targets (used by poisoning tests and tools)."""
    raw = table.raw_target if raw_target is None else raw_target
    return replace(table, target=np.asarray(target, dtype=float), raw_target=raw)
