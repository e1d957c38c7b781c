"""Rolling-origin experiment runner with per-split artifacts, report
generation and artifact-only replay.

Run directory layout::

    config.json          canonical copy of the configuration
    table.json           dates and targets of the experiment table
    splits/h<H>/<tau>.json   one file per horizon and test row
    reports/...          every report, rebuilt from artifacts alone
    manifest.json        config hash and sha256 of every file above

Seeds: every random draw in split ``tau`` of stage ``s`` comes from
``SeedSequence([seed, s, h, tau])``; booster seeds are the first 31 bits of
its state, ensemble member ``k`` adds ``k``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .data import (DataError, TimeTable, apply_preprocess, fit_preprocess, horizon_table,
                   load_csv, make_table, merge_frames, rolling_splits)
from .gbdt import PRESETS, BoostedModel, BoostParams, fit_ensemble, predict_ensemble
from .hyperopt import default_space
from .importance import ImportanceVector, importance_timeseries, permutation_importance
from .losses import LossSpec
from .probabilistic import (LEVELS, QuantileSurface, ResidualStore, back_transform,
                            crossing_audit, fit_pinball_models, predict_surface, qrs_surface)

log = logging.getLogger(__name__)

STAGE_POINT, STAGE_PINBALL, STAGE_PFI = 0, 1, 2
TASKS = ("deterministic", "qrs", "pinball")


class SplitError(RuntimeError):
    def __init__(self, tau, horizon, cause):
        super().__init__(f"split {tau} (h={horizon}) failed: {cause}")
        self.tau = tau
        self.horizon = horizon


def stream_seed(seed: int, stage: int, h: int, tau: int) -> int:
    state = np.random.SeedSequence([seed, stage, h, tau]).generate_state(1)[0]
    return int(state) & 0x7FFFFFFF


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def _resolve_params(spec, default: BoostParams) -> BoostParams:
    spec = dict(spec or {})
    preset = spec.pop("preset", None)
    base = PRESETS[preset.lower()] if preset else default
    return base.with_(**spec)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run (JSON document)."""

    data: list
    target: str = "RV"
    target_is_log: bool = False
    lag: int = 1
    rv_features: bool = True
    shocks: bool = False
    gamma: float = 2.5
    winsorize_target: bool = False
    loss: str = "fair"
    params: dict = field(default_factory=lambda: {"preset": "lgbm"})
    pinball_params: dict = field(default_factory=lambda: {"preset": "lgbm_pinball"})
    renew_leaves: bool = True
    ensemble: int = 1
    test_start: str | None = None
    test_size: int | None = None
    test_end: str | None = None
    horizons: list = field(default_factory=lambda: [1])
    tasks: list = field(default_factory=lambda: ["deterministic", "qrs"])
    qrs_window: int | None = None
    qrs_residuals: str = "in_sample"
    qrs_min_one_step: int = 20
    importance: bool = True
    pfi_repeats: int = 5
    pfi_on: str = "train"
    winkler_alpha_as_paper: bool = False
    smearing: bool = False
    acf_lags: int = 10
    seed: int = 0
    workers: int = 1
    output_dir: str = "run"
    check_space: bool = True
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if isinstance(self.data, str):
            self.data = [self.data]
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise ValueError(f"unknown tasks {sorted(unknown)}")
        if self.qrs_residuals not in ("in_sample", "one_step"):
            raise ValueError("qrs_residuals must be 'in_sample' or 'one_step'")
        if self.pfi_on not in ("train", "test"):
            raise ValueError("pfi_on must be 'train' or 'test'")
        if self.ensemble < 1:
            raise ValueError("ensemble must be >= 1")
        if not self.horizons or any(not 1 <= int(h) <= 10 for h in self.horizons):
            raise ValueError("horizons must lie in [1, 10]")
        if (self.test_start is None) == (self.test_size is None):
            raise ValueError("give exactly one of test_start and test_size")
        if len(self.horizons) > 1 and "deterministic" not in self.tasks:
            raise ValueError("multi-horizon runs need the deterministic task")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        LossSpec.parse(self.loss)
        for p in (self.point_params(), self.pinball_boost_params()):
            if self.check_space:
                default_space().validate(p.to_dict())
        if self.check_space and self.shocks:
            default_space(True).validate({"shock_threshold": self.gamma})

    def primary_horizon(self) -> int:
        return 1 if 1 in self.horizons else int(self.horizons[0])

    def point_params(self) -> BoostParams:
        return _resolve_params(self.params, BoostParams())

    def pinball_boost_params(self) -> BoostParams:
        return _resolve_params(self.pinball_params, BoostParams())

    def loss_spec(self) -> LossSpec:
        return LossSpec.parse(self.loss)

    def to_dict(self) -> dict:
        d = {k: copy.deepcopy(v) for k, v in self.__dict__.items() if k != "base_dir"}
        return d

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def digest(self) -> str:
        return sha256_bytes(self.to_json().encode())

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d, base_dir=str(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(d, path.parent)

    def data_paths(self) -> list:
        return [p if os.path.isabs(p) else os.path.join(self.base_dir, p) for p in self.data]

    def output_path(self) -> Path:
        out = Path(self.output_dir)
        if not out.is_absolute():
            root = os.environ.get("VOLBOOST_OUTPUT_ROOT")
            out = Path(root) / out if root else Path(self.base_dir) / out
        return out

    def load_table(self) -> TimeTable:
        frames = [load_csv(p) for p in self.data_paths()]
        frame = merge_frames(*frames) if len(frames) > 1 else frames[0]
        return make_table(frame, self.target, target_is_log=self.target_is_log,
                          lag=self.lag, rv_features=self.rv_features)

    def first_test_index(self, table: TimeTable) -> int:
        if self.test_start is not None:
            return table.index_of(self.test_start)
        if not 0 < self.test_size < len(table):
            raise DataError(f"test_size {self.test_size} does not fit a table of {len(table)} rows")
        return len(table) - self.test_size


# ------------------------------------------------------------------ per split work

def _fit_split(cfg: ExperimentConfig, table: TimeTable, tau: int, train_stop: int, h: int,
               tasks, with_importance: bool) -> dict:
    train = table.rows(slice(0, train_stop))
    test = table.rows(slice(tau, tau + 1))
    pp = fit_preprocess(train, gamma=cfg.gamma, winsorize_target=cfg.winsorize_target)
    tr = apply_preprocess(train, pp, cfg.shocks)
    te = apply_preprocess(test, pp, cfg.shocks)
    names = list(tr.feature_names)
    out = {
        "tau": tau, "horizon": h, "train_stop": train_stop,
        "date": str(table.dates[tau]),
        "train_last_date": str(table.dates[train_stop - 1]),
        "y_log": float(table.target[tau]), "y_true": float(table.raw_target[tau]),
        "x_test": te.features[0].tolist(),
        "preprocess": pp.to_dict(),
    }
    need_point = "deterministic" in tasks or "qrs" in tasks
    if need_point:
        params = cfg.point_params().with_(seed=stream_seed(cfg.seed, STAGE_POINT, h, tau))
        models = fit_ensemble(tr.features, tr.target, params, cfg.loss_spec(), cfg.ensemble, names)
        fitted = predict_ensemble(models, tr.features)
        yhat_log = float(predict_ensemble(models, te.features)[0])
        out["models"] = [m.to_dict() for m in models]
        out["yhat_log"] = yhat_log
        out["residuals"] = (tr.target - fitted).tolist()
        if with_importance:
            gains = np.sum([m.gain_totals for m in models], axis=0)
            out["gfi_raw"] = gains.tolist()
            X_eval, y_eval = (tr.features, tr.target) if cfg.pfi_on == "train" \
                else (te.features, te.target)
            pfi = permutation_importance(models[0], X_eval, y_eval, cfg.pfi_repeats,
                                         stream_seed(cfg.seed, STAGE_PFI, h, tau))
            out["pfi_raw"] = pfi.raw.tolist()
            out["pfi_baseline_r2"] = pfi.extra["baseline_r2"]
    if "pinball" in tasks:
        pparams = cfg.pinball_boost_params().with_(
            seed=stream_seed(cfg.seed, STAGE_PINBALL, h, tau))
        models = fit_pinball_models(tr.features, tr.target, pparams, LEVELS, cfg.renew_leaves,
                                    names)
        out["pinball_log"] = predict_surface(models, te.features).values[0].tolist()
    out["feature_names"] = names
    return out


def _split_worker(args):
    cfg, table, tau, train_stop, h, tasks, imp = args
    try:
        return _fit_split(cfg, table, tau, train_stop, h, tasks, imp)
    except Exception as exc:  # identify the failing split
        raise SplitError(tau, h, exc) from exc


def _split_path(run_dir: Path, h: int, tau: int) -> Path:
    return run_dir / "splits" / f"h{h}" / f"{tau:05d}.json"


def _run_splits(cfg, table_h, h, tasks, imp, run_dir, test_date_start, test_date_end):
    start = table_h.index_of(test_date_start)
    end = table_h.index_of(test_date_end)
    splits = rolling_splits(table_h, start, h, end)
    jobs = [(cfg, table_h, s.test_index, s.train_stop, h, tasks, imp) for s in splits]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_split_worker, jobs))
    else:
        results = [_split_worker(j) for j in jobs]
    for res in results:
        p = _split_path(run_dir, h, res["tau"])
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(canonical_json(res))
    return results


# ------------------------------------------------------------------ reports

def acf(x, nlags: int) -> np.ndarray:
    """Sample autocorrelations ``r_0..r_nlags`` (biased denominator)."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    denom = float(np.dot(c, c))
    return np.array([float(np.dot(c[: len(c) - k], c[k:])) / denom for k in range(nlags + 1)])


def _csv(rows) -> str:
    return "".join(",".join(str(v) for v in r) + "\n" for r in rows)


def _back(cfg, yhat_log, residuals):
    if cfg.smearing:
        return math.exp(yhat_log + 0.5 * float(np.var(residuals)))
    return math.exp(yhat_log)


def _qrs_stores(cfg, splits):
    stores = []
    errors = [s["y_log"] - s["yhat_log"] for s in splits]
    for i, s in enumerate(splits):
        res = np.asarray(s["residuals"])
        if cfg.qrs_residuals == "one_step":
            # out-of-sample errors of earlier test rows whose targets are observed
            h = s["horizon"]
            past = [errors[j] for j in range(i) if splits[j]["tau"] <= s["tau"] - h]
            if len(past) >= cfg.qrs_min_one_step:
                res = np.asarray(past)
        if cfg.qrs_window is not None:
            res = res[-int(cfg.qrs_window):]
        stores.append(res)
    return ResidualStore(stores)


def build_reports(cfg: ExperimentConfig, run_dir: Path, check_models: bool = False) -> dict:
    """All report files as ``{relative path: text}``, from artifacts only."""
    table = json.loads((run_dir / "table.json").read_text())
    files = {}
    per_h = {}
    missing = []
    for h in cfg.horizons:
        taus = table["test_taus"][str(h)]
        paths = [_split_path(run_dir, h, t) for t in taus]
        missing += [str(p) for p in paths if not p.exists()]
        if not missing:
            per_h[h] = [json.loads(p.read_text()) for p in paths]
    if missing:
        raise FileNotFoundError("missing artifacts:\n" + "\n".join(missing))

    splits = per_h[cfg.primary_horizon()]
    dates = [s["date"] for s in splits]
    y_true = np.array([s["y_true"] for s in splits])
    reports = []
    mismatched = []

    if "yhat_log" in splits[0]:
        yhat_log = np.array([s["yhat_log"] for s in splits])
        if check_models:
            for s in splits:
                models = [BoostedModel.from_dict(m) for m in s["models"]]
                again = float(predict_ensemble(models, np.asarray([s["x_test"]]))[0])
                if again != s["yhat_log"]:
                    mismatched.append(s["tau"])
        yhat = np.array([_back(cfg, s["yhat_log"], s["residuals"]) for s in splits])
        if "deterministic" in cfg.tasks:
            rep = ev.evaluate_run(ev.ForecastRun(dates, y_true, yhat, name="deterministic"))
            reports.append(rep)
            files["reports/deterministic.json"] = rep.to_json()
            files["reports/deterministic.txt"] = rep.to_text()
            files["reports/forecasts.csv"] = _csv(
                [["date", "y_true", "y_pred", "y_log", "yhat_log"]]
                + [[d, repr(float(a)), repr(float(b)), repr(s["y_log"]), repr(s["yhat_log"])]
                   for d, a, b, s in zip(dates, y_true, yhat, splits)])
        if "qrs" in cfg.tasks:
            surf_log = qrs_surface(yhat_log, _qrs_stores(cfg, splits))
            surf = back_transform(surf_log)
            rep = ev.evaluate_run(ev.ForecastRun(dates, y_true, yhat, surf, "qrs"),
                                  winkler_alpha_as_paper=cfg.winkler_alpha_as_paper)
            rep.metrics["crossing_rows"] = crossing_audit(surf)["rows_with_crossing"]
            reports.append(rep)
            files.update(_prob_files("qrs", rep, surf, dates, y_true))
        if cfg.importance and "gfi_raw" in splits[0]:
            names = splits[0]["feature_names"]
            gfi, pfi = [], []
            for s in splits:
                raw = np.asarray(s["gfi_raw"])
                tot = raw.sum()
                sc = 100.0 * raw / tot if tot > 0 else np.zeros_like(raw)
                gfi.append(ImportanceVector(tuple(names), sc, raw, "gfi", split=s["tau"]))
                praw = np.asarray(s["pfi_raw"])
                clamp = np.maximum(praw, 0.0)
                ptot = clamp.sum()
                psc = 100.0 * clamp / ptot if ptot > 0 else np.zeros_like(praw)
                pfi.append(ImportanceVector(tuple(names), psc, praw, "pfi", split=s["tau"]))
            for tag, vecs in (("gfi", gfi), ("pfi", pfi)):
                files[f"reports/importance_{tag}.csv"] = _importance_text(vecs, dates)
                M, sm = importance_timeseries(vecs, window=20)
                files[f"reports/importance_{tag}_smoothed.csv"] = _csv(
                    [["split_date"] + names]
                    + [[d] + [repr(float(v)) for v in row] for d, row in zip(dates, sm)])
    if "pinball" in cfg.tasks:
        surf_log = QuantileSurface(np.array([s["pinball_log"] for s in splits]), LEVELS, "log")
        surf = back_transform(surf_log)
        yhat_pin = surf.column(0.5)
        rep = ev.evaluate_run(ev.ForecastRun(dates, y_true, yhat_pin, surf, "pinball"),
                              winkler_alpha_as_paper=cfg.winkler_alpha_as_paper)
        rep.metrics["crossing_rows"] = crossing_audit(surf)["rows_with_crossing"]
        reports.append(rep)
        files.update(_prob_files("pinball", rep, surf, dates, y_true))

    if reports:
        rows = [["run", "below", "within", "above"]]
        for r in reports:
            if "PI_within" in r.metrics:
                m = r.metrics
                rows.append([r.name] + [repr(float(m[k])) for k in ("PI_below", "PI_within", "PI_above")])
        files["reports/coverage.csv"] = _csv(rows)

    if len(cfg.horizons) > 1:
        rows = [["h", "MAE", "MSE", "n"]]
        for h in cfg.horizons:
            sp = per_h[h]
            yt = np.array([s["y_true"] for s in sp])
            yp = np.array([_back(cfg, s["yhat_log"], s["residuals"]) for s in sp])
            m = ev.deterministic_metrics(yt, yp)
            rows.append([h, repr(float(m["MAE"])), repr(float(m["MSE"])), len(sp)])
        files["reports/multi_horizon.csv"] = _csv(rows)
    r = acf(np.asarray(table["target"]), cfg.acf_lags)
    files["reports/acf.csv"] = _csv([["lag", "acf"]] + [[k, repr(float(v))] for k, v in enumerate(r)])
    if check_models and mismatched:
        raise RuntimeError(f"stored models do not reproduce forecasts for splits {mismatched}")
    return files


def _importance_text(vecs, dates) -> str:
    rows = [["split_date", "feature", "method", "score", "raw_score"]]
    for d, v in zip(dates, vecs):
        for n, s, r in zip(v.feature_names, v.scores, v.raw):
            rows.append([d, n, v.method, repr(float(s)), repr(float(r))])
    return _csv(rows)


def _prob_files(name, rep, surf, dates, y_true) -> dict:
    head = ["date"] + [f"q{int(round(q * 100)):03d}" for q in surf.levels] + ["y_true"]
    body = [[d] + [repr(float(v)) for v in row] + [repr(float(y))]
            for d, row, y in zip(dates, surf.values, y_true)]
    calib = [["q", "refr"]] + [[repr(float(q)), repr(float(r))] for q, r in
                               zip(rep.calibration["levels"], rep.calibration["refr"])]
    return {
        f"reports/{name}.json": rep.to_json(),
        f"reports/{name}.txt": rep.to_text(),
        f"reports/{name}_surface.csv": f"# scale={surf.scale}\n" + _csv([head] + body),
        f"reports/{name}_calibration.csv": _csv(calib),
    }


# ------------------------------------------------------------------ entry points

def _write_manifest(cfg: ExperimentConfig, run_dir: Path) -> dict:
    entries = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            entries[str(p.relative_to(run_dir))] = sha256_bytes(p.read_bytes())
    manifest = {"config_sha256": cfg.digest(), "artifacts": entries}
    (run_dir / "manifest.json").write_text(canonical_json(manifest))
    return manifest


def run_experiment(cfg: ExperimentConfig, table: TimeTable | None = None) -> dict:
    """Fit every split for every horizon, write artifacts, reports and manifest."""
    table = table if table is not None else cfg.load_table()
    run_dir = cfg.output_path()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json())
    first = cfg.first_test_index(table)
    last = len(table) - 1 if cfg.test_end is None else table.index_of(cfg.test_end)
    d0, d1 = table.dates[first], table.dates[last]
    taus = {}
    primary = cfg.primary_horizon()
    for h in cfg.horizons:
        h = int(h)
        tasks = cfg.tasks if h == primary else ["deterministic"]
        res = _run_splits(cfg, horizon_table(table, h), h, tasks,
                          cfg.importance and h == primary, run_dir, d0, d1)
        taus[str(h)] = [r["tau"] for r in res]
    (run_dir / "table.json").write_text(canonical_json({
        "dates": [str(d) for d in table.dates], "target": table.target.tolist(),
        "raw_target": table.raw_target.tolist(), "feature_names": list(table.feature_names),
        "test_taus": taus}))
    files = build_reports(cfg, run_dir)
    for rel, text in files.items():
        p = run_dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    return _write_manifest(cfg, run_dir)


def run_deterministic(cfg: ExperimentConfig, table: TimeTable | None = None) -> dict:
    c = copy.copy(cfg)
    c.tasks = ["deterministic"]
    c.horizons = [1]
    return run_experiment(c, table)


def run_probabilistic(cfg: ExperimentConfig, method: str, table: TimeTable | None = None) -> dict:
    if method not in ("pinball", "qrs"):
        raise ValueError("method must be 'pinball' or 'qrs'")
    c = copy.copy(cfg)
    c.tasks = ["deterministic", "qrs"] if method == "qrs" else ["pinball"]
    c.horizons = [1]
    return run_experiment(c, table)


def run_multi_horizon(cfg: ExperimentConfig, horizons, table: TimeTable | None = None) -> dict:
    c = copy.copy(cfg)
    c.horizons = sorted(int(h) for h in horizons)
    c.__post_init__()
    return run_experiment(c, table)


def replay(run_dir) -> list:
    """Rebuild every report from artifacts and list the differences.

    Returns a list of human-readable difference lines; empty means the run
    reproduces byte for byte.
    """
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"missing artifacts:\n{cfg_path}")
    cfg = ExperimentConfig.from_dict(json.loads(cfg_path.read_text()), run_dir)
    diffs = []
    manifest_path = run_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else None
    if manifest is None:
        diffs.append("manifest.json missing")
    elif manifest["config_sha256"] != cfg.digest():
        diffs.append("config hash differs from manifest")
    files = build_reports(cfg, run_dir, check_models=True)
    for rel, text in sorted(files.items()):
        p = run_dir / rel
        if not p.exists():
            diffs.append(f"{rel}: missing on disk")
        elif p.read_bytes() != text.encode():
            diffs.append(f"{rel}: content differs")
    if manifest is not None:
        for rel, digest in sorted(manifest["artifacts"].items()):
            p = run_dir / rel
            if not p.exists():
                diffs.append(f"{rel}: listed in manifest but missing")
            elif sha256_bytes(p.read_bytes()) != digest:
                diffs.append(f"{rel}: hash differs from manifest")
    return diffs
