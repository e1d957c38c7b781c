"""Hyperparameter search: time-series cross-validation objective, a
Tree-structured Parzen Estimator sampler and fANOVA-style importance from a
tree-forest surrogate."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .data import DataError, TimeTable, apply_preprocess, fit_preprocess
from .gbdt import BoostParams, fit
from .losses import LossSpec

SEEDS = (42, 2023, 999)
TPE_GAMMA = 0.25
N_STARTUP = 10
N_CANDIDATES = 24


@dataclass(frozen=True)
class Dim:
    """One search dimension: ``int``, ``float`` or ``cat``."""

    name: str
    kind: str
    low: float = 0.0
    high: float = 1.0
    log: bool = False
    choices: tuple = ()

    def __post_init__(self):
        if self.kind not in ("int", "float", "cat"):
            raise ValueError(f"unknown dimension kind {self.kind!r}")
        if self.kind == "cat":
            if not self.choices:
                raise ValueError(f"{self.name}: categorical dimension needs choices")
        elif not self.low < self.high:
            raise ValueError(f"{self.name}: need low < high")
        if self.log and self.low <= 0:
            raise ValueError(f"{self.name}: log scale needs a positive lower bound")

    # internal coordinates: log for log dims, category index for cat dims
    @property
    def bounds(self):
        if self.kind == "cat":
            return 0.0, float(len(self.choices) - 1)
        lo, hi = (self.low - 0.5, self.high + 0.5) if self.kind == "int" else (self.low, self.high)
        if self.log:
            lo = math.log(max(lo, self.low * 0.5) if self.kind == "int" else lo)
            hi = math.log(hi)
        return lo, hi

    def encode(self, value) -> float:
        if self.kind == "cat":
            return float(self.choices.index(value))
        return math.log(value) if self.log else float(value)

    def decode(self, u: float):
        if self.kind == "cat":
            return self.choices[int(round(u))]
        v = math.exp(u) if self.log else u
        if self.kind == "int":
            return int(min(max(round(v), self.low), self.high))
        return float(min(max(v, self.low), self.high))

    def contains(self, value) -> bool:
        if self.kind == "cat":
            return value in self.choices
        if self.kind == "int" and int(value) != value:
            return False
        return self.low <= value <= self.high

    def uniform(self, rng):
        if self.kind == "cat":
            return self.choices[int(rng.integers(len(self.choices)))]
        lo, hi = self.bounds
        return self.decode(rng.uniform(lo, hi))


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple

    @property
    def names(self) -> list:
        return [d.name for d in self.dims]

    def __getitem__(self, name) -> Dim:
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(name)

    def sample(self, rng) -> dict:
        return {d.name: d.uniform(rng) for d in self.dims}

    def contains(self, params: dict) -> bool:
        return all(d.name in params and d.contains(params[d.name]) for d in self.dims)

    def validate(self, params: dict) -> None:
        bad = [d.name for d in self.dims if d.name in params and not d.contains(params[d.name])]
        if bad:
            raise ValueError(f"outside search space: {bad}")

    def encode(self, params: dict) -> np.ndarray:
        return np.array([d.encode(params[d.name]) for d in self.dims])

    def to_dict(self) -> dict:
        return {"dims": [asdict(d) for d in self.dims]}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(tuple(Dim(**{**x, "choices": tuple(x.get("choices", ()))}) for x in d["dims"]))


def default_space(shocks: bool = False) -> SearchSpace:
    """Grid bounds used for the tuned boosted-tree models."""
    dims = [
        Dim("n_estimators", "int", 50, 600),
        Dim("max_depth", "int", 1, 2),
        Dim("min_data_in_leaf", "int", 1, 4),
        Dim("learning_rate", "float", 0.02, 0.04),
        Dim("reg_alpha", "float", 1e-5, 0.2, log=True),
        Dim("reg_lambda", "float", 1e-5, 0.2, log=True),
        Dim("feature_fraction", "float", 0.5, 1.0),
        Dim("bagging_fraction", "float", 0.5, 1.0),
        Dim("bagging_freq", "int", 1, 6),
        Dim("max_bin", "int", 32, 255),
    ]
    if shocks:
        dims.append(Dim("shock_threshold", "float", 1.5, 3.0))
    return SearchSpace(tuple(dims))


def split_params(params: dict, base: BoostParams | None = None):
    """Separate booster fields from the shock threshold."""
    base = base or BoostParams()
    p = dict(params)
    gamma = p.pop("shock_threshold", None)
    return base.with_(**p), gamma


# ------------------------------------------------------------------ trial log

@dataclass
class Trial:
    number: int
    params: dict
    value: float
    seeds: list = field(default_factory=list)
    fold_scores: list = field(default_factory=list)


class TrialLog:
    """Append-only record of evaluated trials."""

    def __init__(self, trials=None):
        self._trials = []
        for t in trials or ():
            self.append(t)

    def __len__(self):
        return len(self._trials)

    def __iter__(self):
        return iter(self._trials)

    def __getitem__(self, i):
        return self._trials[i]

    def append(self, trial: Trial) -> None:
        if not math.isfinite(trial.value):
            raise ValueError("trial objective must be finite")
        self._trials.append(trial)

    @property
    def values(self) -> np.ndarray:
        return np.array([t.value for t in self._trials])

    def best(self) -> Trial:
        if not self._trials:
            raise ValueError("empty trial log")
        return self._trials[int(np.argmin(self.values))]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(t), sort_keys=True) + "\n" for t in self._trials)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrialLog":
        return cls(Trial(**json.loads(line)) for line in text.splitlines() if line.strip())


# ------------------------------------------------------------------ objective

def time_series_folds(n: int, k: int, shuffled: bool = False, seed: int = 0) -> list:
    """``(train_idx, valid_idx)`` pairs.

    Expanding window by default: the rows are cut into ``k + 1`` blocks and
    fold ``i`` trains on blocks ``0..i`` and validates on block ``i + 1``.
    ``shuffled`` gives ordinary shuffled k-fold.
    """
    if k < 2:
        raise ValueError("need k >= 2 folds")
    if shuffled:
        perm = np.random.default_rng(seed).permutation(n)
        parts = np.array_split(perm, k)
        return [(np.sort(np.concatenate(parts[:i] + parts[i + 1:])), np.sort(parts[i]))
                for i in range(k)]
    edges = [round(n * i / (k + 1)) for i in range(k + 2)]
    return [(np.arange(0, edges[i + 1]), np.arange(edges[i + 1], edges[i + 2]))
            for i in range(k)]


def cv_objective(params, table: TimeTable, k: int = 3, seeds=SEEDS, loss: LossSpec | None = None,
                 shocks: bool = False, gamma: float = 2.5, shuffled: bool = False,
                 min_rows: int = 2):
    """Mean validation MAE (on the table's log target) over folds and seeds.

    Returns ``(objective, fold_scores)`` with ``fold_scores[s][i]`` the MAE
    of seed ``s`` on fold ``i``. Preprocessing is fitted on each fold's
    training rows.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    if isinstance(params, dict):
        params, g = split_params(params)
        gamma = g if g is not None else gamma
    loss = loss or LossSpec("fair")
    scores = []
    for s in seeds:
        folds = time_series_folds(len(table), k, shuffled, s)
        per = []
        for tr, va in folds:
            if len(tr) < min_rows or len(va) < 1:
                raise DataError(f"fold too small: {len(tr)} training and {len(va)} validation rows")
            train, valid = table.rows(tr), table.rows(va)
            pp = fit_preprocess(train, gamma=gamma)
            Xt = apply_preprocess(train, pp, shocks).features
            Xv = apply_preprocess(valid, pp, shocks).features
            model = fit(Xt, train.target, params.with_(seed=int(s)), loss)
            per.append(float(np.mean(np.abs(valid.target - model.predict(Xv)))))
        scores.append(per)
    return float(np.mean([np.mean(p) for p in scores])), scores


# ------------------------------------------------------------------ TPE

def _bandwidth(points, lo, hi):
    m = len(points)
    width = hi - lo
    sd = float(np.std(points)) if m > 1 else width
    bw = 1.06 * sd * (m + 1) ** (-0.2)
    return float(np.clip(bw, width / min(100.0, m + 1.0), width))


class _Parzen1D:
    """Truncated Gaussian mixture over observations plus one wide prior component."""

    def __init__(self, points, lo, hi, integer_edges=None):
        self.lo, self.hi = lo, hi
        width = hi - lo
        pts = np.asarray(points, dtype=float)
        bw = _bandwidth(pts, lo, hi) if len(pts) else width
        self.mu = np.append(pts, 0.5 * (lo + hi))
        self.sigma = np.append(np.full(len(pts), bw), width)
        self.w = np.full(len(self.mu), 1.0 / len(self.mu))
        self.mass = ndtr((hi - self.mu) / self.sigma) - ndtr((lo - self.mu) / self.sigma)
        self.edges = integer_edges

    def sample(self, rng, size):
        comp = rng.choice(len(self.mu), size=size, p=self.w)
        out = np.empty(size)
        for i, c in enumerate(comp):
            while True:
                x = rng.normal(self.mu[c], self.sigma[c])
                if self.lo <= x <= self.hi:
                    out[i] = x
                    break
        return out

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)[:, None]
        if self.edges is not None:
            a, b = self.edges(x)
            p = ndtr((b - self.mu) / self.sigma) - ndtr((a - self.mu) / self.sigma)
            dens = (self.w * p / self.mass).sum(axis=1)
        else:
            z = (x - self.mu) / self.sigma
            dens = (self.w * np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))
                    / self.mass).sum(axis=1)
        return np.log(np.maximum(dens, 1e-300))


def _int_edges(dim: Dim):
    def edges(u):
        v = np.vectorize(dim.decode)(u).astype(float)
        a, b = v - 0.5, v + 0.5
        if dim.log:
            a, b = np.log(np.maximum(a, dim.low * 0.5)), np.log(b)
        return a, b
    return edges


def _cat_logpdf(points, n_choices):
    counts = np.bincount(np.asarray(points, dtype=int), minlength=n_choices) + 1.0
    return np.log(counts / counts.sum()), counts / counts.sum()


def tpe_suggest(space: SearchSpace, log: TrialLog, rng, gamma: float = TPE_GAMMA,
                n_startup: int = N_STARTUP, n_candidates: int = N_CANDIDATES) -> dict:
    """Next parameter set: uniform while warming up, then argmax ``l(x)/g(x)``."""
    if len(log) < n_startup:
        return space.sample(rng)
    order = np.argsort(log.values, kind="stable")
    n_good = max(1, int(math.ceil(gamma * len(log) - 1e-9)))
    enc = np.vstack([space.encode(t.params) for t in log])
    good, bad = enc[order[:n_good]], enc[order[n_good:]]
    cand = np.empty((n_candidates, len(space.dims)))
    score = np.zeros(n_candidates)
    for j, d in enumerate(space.dims):
        if d.kind == "cat":
            n = len(d.choices)
            lp_l, p_l = _cat_logpdf(good[:, j], n)
            lp_g, _ = _cat_logpdf(bad[:, j], n)
            c = rng.choice(n, size=n_candidates, p=p_l)
            cand[:, j] = c
            score += lp_l[c] - lp_g[c]
            continue
        lo, hi = d.bounds
        edges = _int_edges(d) if d.kind == "int" else None
        l_est = _Parzen1D(good[:, j], lo, hi, edges)
        g_est = _Parzen1D(bad[:, j], lo, hi, edges)
        x = l_est.sample(rng, n_candidates)
        if d.kind == "int":
            x = np.array([d.encode(d.decode(u)) for u in x])
        cand[:, j] = x
        score += l_est.logpdf(x) - g_est.logpdf(x)
    best = cand[int(np.argmax(score))]
    return {d.name: d.decode(u) for d, u in zip(space.dims, best)}


def run_search(space: SearchSpace, objective, budget: int, rng, sampler: str = "tpe",
               n_startup: int = N_STARTUP, log: TrialLog | None = None, callback=None):
    """Evaluate ``budget`` trials and return ``(best_params, log)``.

    ``objective(params)`` returns a float or ``(value, fold_scores)``.
    """
    if sampler not in ("tpe", "random"):
        raise ValueError(f"unknown sampler {sampler!r}")
    if sampler == "tpe" and budget < n_startup:
        raise ValueError("budget must be at least the number of startup trials")
    log = log if log is not None else TrialLog()
    for _ in range(budget):
        if sampler == "random":
            params = space.sample(rng)
        else:
            params = tpe_suggest(space, log, rng, n_startup=n_startup)
        out = objective(params)
        value, folds = out if isinstance(out, tuple) else (out, [])
        log.append(Trial(len(log), params, float(value), [], folds))
        if callback is not None:
            callback(log[-1])
    return dict(log.best().params), log


# ------------------------------------------------------------------ fANOVA

@dataclass
class HyperImportance:
    names: list
    importance: np.ndarray
    status: str = "ok"

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.importance.tolist()))

    def dominant(self):
        k = int(np.argmax(self.importance))
        return self.names[k], float(self.importance[k])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hyperparameter", "importance_pct"])
            for n, v in zip(self.names, self.importance):
                w.writerow([n, repr(float(v))])


SURROGATE = BoostParams(n_estimators=1, learning_rate=1.0, max_depth=6, num_leaves=64,
                        min_data_in_leaf=1, bagging_fraction=0.8, bagging_freq=1, max_bin=255)


def fit_surrogate(X, y, n_trees: int = 64, seed: int = 0) -> list:
    """Bagged forest of single squared-loss trees."""
    loss = LossSpec("squared")
    return [fit(X, y, SURROGATE.with_(seed=seed + t), loss) for t in range(n_trees)]


def _forest_predict(forest, X) -> np.ndarray:
    return np.mean([m.predict(X) for m in forest], axis=0)


def _stratified(dim: Dim, n: int, rng=None) -> np.ndarray:
    # n equal-probability strata in internal coordinates, midpoints or jittered
    lo, hi = dim.bounds
    off = 0.5 if rng is None else rng.uniform(size=n)
    u = lo + (np.arange(n) + off) / n * (hi - lo)
    if rng is not None:
        u = rng.permutation(u)
    if dim.kind == "float":
        return u
    return np.array([dim.encode(dim.decode(x)) for x in u])


def fanova_importance(space: SearchSpace, log: TrialLog, rng, n_grid: int = 100,
                      n_other: int = 100, n_trees: int = 64, min_trials: int = 50,
                      surrogate_seed: int = 0) -> HyperImportance:
    """Main-effect variance share of each dimension, in percent.

    The marginal ``f_j(v)`` averages surrogate predictions over ``n_other``
    Latin-hypercube draws of the other dimensions; its variance over
    ``n_grid`` stratified values of dimension ``j`` is divided by the
    variance of the surrogate over a Latin-hypercube sample of the whole
    space. Monte-Carlo noise can push the sum past 100, in which case all
    shares are scaled down proportionally.
    """
    if len(log) < min_trials:
        raise ValueError(f"need at least {min_trials} trials, have {len(log)}")
    names = space.names
    y = log.values
    if np.ptp(y) == 0:
        return HyperImportance(names, np.zeros(len(names)), "degenerate")
    X = np.vstack([space.encode(t.params) for t in log])
    forest = fit_surrogate(X, y, n_trees, surrogate_seed)

    def draw(n):
        return np.column_stack([_stratified(d, n, rng) for d in space.dims])

    total = float(np.var(_forest_predict(forest, draw(n_grid * n_other))))
    if not total > 0:
        return HyperImportance(names, np.zeros(len(names)), "degenerate")
    imp = np.zeros(len(names))
    for j, d in enumerate(space.dims):
        grid = _stratified(d, n_grid)
        Z = np.repeat(draw(n_other), n_grid, axis=0)
        Z[:, j] = np.tile(grid, n_other)
        f = _forest_predict(forest, Z).reshape(n_other, n_grid).mean(axis=0)
        imp[j] = 100.0 * float(np.var(f)) / total
    s = imp.sum()
    if s > 100.0:
        imp *= 100.0 / s
    return HyperImportance(names, imp)
