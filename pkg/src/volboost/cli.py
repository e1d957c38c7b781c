"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error
(unreadable or invalid input, missing artifacts), 4 runtime error.
Diagnostics go to stderr; results are written to files only.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import evaluation as ev
from . import pipeline as pl
from .data import DataError, apply_preprocess, fit_preprocess, load_csv, make_table, merge_frames
from .gbdt import fit_ensemble
from .hyperopt import (SEEDS, cv_objective, default_space, fanova_importance,
                       run_search, split_params)
from .probabilistic import QuantileSurface

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
log = logging.getLogger("volboost")


class UsageError(Exception):
    pass


def _seed_list(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")


def _out_dir(path: str | None, default: str) -> Path:
    p = Path(path or default)
    root = os.environ.get("VOLBOOST_OUTPUT_ROOT")
    if not p.is_absolute() and root:
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_config(args) -> pl.ExperimentConfig:
    try:
        cfg = pl.ExperimentConfig.load(args.config)
    except FileNotFoundError as exc:
        raise DataError(f"config not found: {args.config}") from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid config {args.config}: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    out = getattr(args, "out", None)
    if out:
        # a relative --out is taken from the working directory, like other commands
        keep = Path(out).is_absolute() or os.environ.get("VOLBOOST_OUTPUT_ROOT")
        cfg.output_dir = out if keep else str(Path(out).resolve())
    return cfg


# ------------------------------------------------------------------ commands

def cmd_prep(args) -> int:
    frames = [load_csv(p) for p in args.input]
    frame = merge_frames(*frames) if len(frames) > 1 else frames[0]
    table = make_table(frame, args.target, target_is_log=args.target_is_log, lag=args.lag,
                       rv_features=not args.no_rv_features)
    stop = len(table) if args.train_end is None else table.index_of(args.train_end) + 1
    params = fit_preprocess(table.rows(slice(0, stop)), args.lower_q, args.upper_q,
                            args.gamma, args.winsorize_target)
    out = _out_dir(args.out, "prep")
    (out / "preprocess.json").write_text(params.to_json() + "\n")
    processed = apply_preprocess(table, params, args.shocks)
    df = processed.to_frame()
    df["date"] = df["date"].dt.strftime("%Y-%m-%d")
    df.to_csv(out / "table.csv", index=False, float_format="%.17g")
    log.info("wrote %d rows x %d features to %s", len(processed), processed.n_features, out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    table = cfg.load_table()
    stop = cfg.first_test_index(table)
    train = table.rows(slice(0, stop))
    pp = fit_preprocess(train, gamma=cfg.gamma, winsorize_target=cfg.winsorize_target)
    tr = apply_preprocess(train, pp, cfg.shocks)
    params = cfg.point_params().with_(seed=pl.stream_seed(cfg.seed, pl.STAGE_POINT, 1, stop))
    models = fit_ensemble(tr.features, tr.target, params, cfg.loss_spec(), cfg.ensemble,
                          list(tr.feature_names))
    out = _out_dir(args.out, "model")
    (out / "preprocess.json").write_text(pp.to_json() + "\n")
    for k, m in enumerate(models):
        (out / f"model_{k:02d}.json").write_text(m.to_json() + "\n")
    return EXIT_OK


def cmd_forecast(args) -> int:
    cfg = _load_config(args)
    pl.run_deterministic(cfg)
    return EXIT_OK


def cmd_quantiles(args) -> int:
    cfg = _load_config(args)
    pl.run_probabilistic(cfg, args.method)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    pl.run_experiment(cfg)
    return EXIT_OK


def _need(paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise FileNotFoundError("missing artifacts:\n" + "\n".join(missing))


def cmd_importance(args) -> int:
    run = Path(args.run)
    src = run / "reports" / f"importance_{args.method}.csv"
    _need([run / "config.json", src])
    out = Path(args.out) if args.out else run / f"importance_{args.method}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(src.read_bytes())
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    table = cfg.load_table()
    train = table.rows(slice(0, cfg.first_test_index(table)))
    space = default_space(cfg.shocks)
    loss = cfg.loss_spec()
    base = cfg.point_params()
    rng = np.random.default_rng(cfg.seed)

    def objective(p):
        params, gamma = split_params(p, base)
        return cv_objective(params, train, args.folds, args.seeds, loss, cfg.shocks,
                            gamma if gamma is not None else cfg.gamma, args.shuffled)

    best, trials = run_search(space, objective, args.trials, rng, args.sampler,
                              n_startup=min(10, args.trials))
    out = _out_dir(args.out, "tune")
    (out / "trials.jsonl").write_text(trials.to_jsonl())
    (out / "best_params.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    if len(trials) >= args.fanova_min_trials:
        imp = fanova_importance(space, trials, np.random.default_rng(cfg.seed),
                                min_trials=args.fanova_min_trials)
        imp.to_csv(out / "fanova.csv")
        name, share = imp.dominant()
        log.info("dominant hyperparameter: %s (%.2f%%)", name, share)
    else:
        log.warning("fewer than %d trials; fanova.csv not written", args.fanova_min_trials)
    return EXIT_OK


def _forecast_run(path, surface_path=None, name=None) -> ev.ForecastRun:
    try:
        df = pd.read_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for col in ("date", "y_true", "y_pred"):
        if col not in df.columns:
            raise DataError(f"{path}: column {col!r} missing")
    surf = None
    if surface_path:
        surf, _, _ = QuantileSurface.from_csv(surface_path)
    return ev.ForecastRun(df["date"].astype(str).tolist(), df["y_true"].to_numpy(float),
                          df["y_pred"].to_numpy(float), surf, name or Path(path).stem)


def _write_report(out: Path, rep: ev.EvaluationReport) -> None:
    (out / f"{rep.name}.json").write_text(rep.to_json() + "\n")
    (out / f"{rep.name}.txt").write_text(rep.to_text())
    if rep.calibration:
        ev.write_calibration_csv(out / f"{rep.name}_calibration.csv", rep)


def cmd_evaluate(args) -> int:
    out = _out_dir(args.out, "evaluation")
    if args.run:
        run = Path(args.run)
        _need([run / "config.json", run / "table.json"])
        cfg = pl.ExperimentConfig.from_dict(json.loads((run / "config.json").read_text()), run)
        files = pl.build_reports(cfg, run)
        for rel, text in files.items():
            p = out / Path(rel).name
            p.write_text(text)
        return EXIT_OK
    run = _forecast_run(args.forecasts, args.surface)
    rep = ev.evaluate_run(run, winkler_alpha_as_paper=args.winkler_alpha_as_paper)
    _write_report(out, rep)
    ev.write_coverage_csv(out / "coverage.csv", [rep])
    return EXIT_OK


def _collect_runs(run_dirs) -> dict:
    """``{label: (ForecastRun, report dict)}`` for every report found in the runs."""
    found = {}
    for rd in run_dirs:
        rd = Path(rd)
        _need([rd / "reports"])
        tag = rd.name
        fc = rd / "reports" / "forecasts.csv"
        for kind in ("deterministic", "qrs", "pinball"):
            rep_path = rd / "reports" / f"{kind}.json"
            if not rep_path.exists():
                continue
            rep = json.loads(rep_path.read_text())
            if kind == "pinball":
                surf, dates, y = QuantileSurface.from_csv(rd / "reports" / "pinball_surface.csv")
                run = ev.ForecastRun(dates, y, surf.column(0.5), surf)
            else:
                run = _forecast_run(fc)
            found[f"{tag}:{kind}"] = (run, rep)
    if not found:
        raise FileNotFoundError("missing artifacts: no reports found in " + ", ".join(map(str, run_dirs)))
    return found


def cmd_report(args) -> int:
    runs = _collect_runs(args.runs)
    out = _out_dir(args.out, "report")
    keys = sorted({k for _, rep in runs.values() for k in rep["metrics"]})
    rows = [["run"] + keys]
    for label, (_, rep) in runs.items():
        rows.append([label] + [repr(rep["metrics"].get(k, "")) if k in rep["metrics"] else ""
                               for k in keys])
    (out / "metrics.csv").write_text(pl._csv(rows))
    point = {label: r.errors for label, (r, _) in runs.items()}
    lengths = {len(e) for e in point.values()}
    if len(lengths) > 1:
        raise DataError("runs cover different test windows; cannot pair errors")
    if min(lengths) < 10:
        raise DataError(f"pairwise tests need at least 10 test points, runs have {min(lengths)}")
    tests = ev.pairwise_tests(point, args.dm_loss)
    names = tests["order"]
    for key, fname in (("dm", "dm_matrix.csv"), ("wilcoxon", "wilcoxon_matrix.csv")):
        mat = [["row_vs_col"] + names]
        for a in names:
            mat.append([a] + ["" if tests[key][a][b] is None else repr(tests[key][a][b])
                              for b in names])
        (out / fname).write_text(pl._csv(mat))
    return EXIT_OK


def cmd_replay(args) -> int:
    diffs = pl.replay(args.run)
    if diffs:
        for d in diffs:
            print(d, file=sys.stderr)
        return EXIT_RUNTIME
    log.info("replay identical: %s", args.run)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volboost", description="Boosted-tree volatility forecasting.",
                                allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        sp.set_defaults(func=func)
        return sp

    def config_flags(sp):
        sp.add_argument("--config", required=True, help="experiment JSON file")
        sp.add_argument("--seed", type=int, help="master seed overriding the config")
        sp.add_argument("--out", help="run directory overriding the config output_dir")

    sp = add("prep", cmd_prep, "build the feature table and fit preprocessing")
    sp.add_argument("--input", required=True, nargs="+", help="dated CSV file(s), inner-joined")
    sp.add_argument("--target", required=True, help="realized-variance column")
    sp.add_argument("--target-is-log", action="store_true", help="target column already in logs")
    sp.add_argument("--lag", type=int, default=1, help="rows to lag exogenous predictors (1)")
    sp.add_argument("--no-rv-features", action="store_true",
                    help="skip daily/weekly/monthly log-RV lags")
    sp.add_argument("--shocks", action="store_true", help="append shock indicator columns")
    sp.add_argument("--gamma", type=float, default=2.5, help="shock threshold in sigmas (2.5)")
    sp.add_argument("--lower-q", type=float, default=0.01, help="lower winsorization quantile")
    sp.add_argument("--upper-q", type=float, default=0.99, help="upper winsorization quantile")
    sp.add_argument("--winsorize-target", action="store_true", help="also cap the log target")
    sp.add_argument("--train-end", help="last date used to fit preprocessing (default: all)")
    sp.add_argument("--out", help="output directory")

    sp = add("train", cmd_train, "fit the point model on rows before the test window")
    config_flags(sp)
    sp = add("forecast", cmd_forecast, "rolling-origin point forecasts")
    config_flags(sp)
    sp = add("quantiles", cmd_quantiles, "rolling-origin quantile surfaces")
    config_flags(sp)
    sp.add_argument("--method", choices=("pinball", "qrs"), required=True,
                    help="per-level pinball models or residual simulation")
    sp = add("run", cmd_run, "every task and horizon listed in the config")
    config_flags(sp)

    sp = add("importance", cmd_importance, "export feature importance of a run")
    sp.add_argument("--run", required=True, help="run directory")
    sp.add_argument("--method", choices=("gfi", "pfi"), required=True,
                    help="gain or permutation importance")
    sp.add_argument("--out", help="output CSV path")

    sp = add("tune", cmd_tune, "hyperparameter search on rows before the test window")
    config_flags(sp)
    sp.add_argument("--trials", type=int, default=300, help="number of trials (300)")
    sp.add_argument("--folds", type=int, default=3, help="cross-validation folds (3)")
    sp.add_argument("--seeds", type=_seed_list, default=list(SEEDS),
                    help="comma-separated seeds (42,2023,999)")
    sp.add_argument("--sampler", choices=("tpe", "random"), default="tpe", help="search sampler")
    sp.add_argument("--shuffled", action="store_true", help="shuffled instead of expanding folds")
    sp.add_argument("--fanova-min-trials", type=int, default=50,
                    help="minimum trials for the importance analysis (50)")

    sp = add("evaluate", cmd_evaluate, "score forecasts and write report files")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", help="run directory to re-score")
    src.add_argument("--forecasts", help="CSV with date,y_true,y_pred")
    sp.add_argument("--surface", help="quantile surface CSV (with --forecasts)")
    sp.add_argument("--winkler-alpha-as-paper", action="store_true",
                    help="use the nominal coverage as Winkler alpha")
    sp.add_argument("--out", help="output directory")

    sp = add("report", cmd_report, "comparison tables and pairwise tests across runs")
    sp.add_argument("--runs", required=True, nargs="+", help="run directories")
    sp.add_argument("--dm-loss", choices=("squared", "absolute"), default="squared",
                    help="loss differential for the Diebold-Mariano test")
    sp.add_argument("--out", help="output directory")

    sp = add("replay", cmd_replay, "rebuild reports from artifacts and diff")
    sp.add_argument("--run", required=True, help="run directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="volboost: %(message)s", stream=sys.stderr)
    if getattr(args, "command", None) == "evaluate" and args.surface and not args.forecasts:
        print("volboost: --surface requires --forecasts", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"volboost: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"volboost: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"volboost: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
