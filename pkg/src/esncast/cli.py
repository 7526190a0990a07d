"""Command-line pipeline: fetch, stationarity, features, tune, backtest, chaos, report.

Every command validates its configuration before doing work, keeps volatile
fields (timestamps) out of result bodies so reruns are byte-identical, and
removes partially written outputs on failure.  Exit codes: 0 ok, 2 usage,
3 I/O or network, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import (ALL_MODELS, STANDARD_TRAIN_SIZES, BacktestReport, WindowResult,
                       chaos_stratified_test, family_objective, run_backtest,
                       write_plot_data, write_report_csv, write_summary_json)
from .baselines import DEFAULT_N_LAGS, GbdtParams
from .chaos import DEFAULT_MAX_STEPS, EmbeddingParams
from .data import (DEFAULT_ENDPOINT, OhlcSeries, fetch_klines, interpolate_missing,
                   parse_csv, write_csv)
from .errors import DataError, NumericError
from .esn import EsnHyperParams
from .features import build_feature_matrix
from .hpo import esn_search_space, gbdt_search_space, optimize
from .stationarity import (DEFAULT_WEIGHT_THRESHOLD, adf_test, fracdiff,
                           min_stationary_order)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_FAST_BUDGET = 20
_FAST_STRIDE = 10
_FULL_BUDGET = 100
_SEARCH_SPACES = {"esn": esn_search_space, "gbdt": gbdt_search_space}
_PARAM_TYPES = {"esn": EsnHyperParams, "gbdt": GbdtParams}


def _parse_date(raw: str) -> date:
    try:
        return date.fromisoformat(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {raw!r}") from None


def _parse_list(raw, cast, label: str) -> tuple:
    if isinstance(raw, (list, tuple)):
        return tuple(cast(v) for v in raw)
    try:
        return tuple(cast(part.strip()) for part in str(raw).split(",") if part.strip())
    except ValueError:
        raise ValueError(f"cannot parse {label} list from {raw!r}") from None


def _add_data_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--csv", help="load the series from a CSV file")
    sub.add_argument("--symbol", help="fetch this ticker instead of reading a CSV")
    sub.add_argument("--start", type=_parse_date, help="fetch range start (ISO date)")
    sub.add_argument("--end", type=_parse_date, help="fetch range end (ISO date)")
    sub.add_argument("--endpoint", help=f"klines endpoint (default {DEFAULT_ENDPOINT} "
                     "or ESNCAST_KLINES_ENDPOINT)")
    sub.add_argument("--cache-dir", help="raw-response cache directory "
                     "(or ESNCAST_CACHE_DIR)")
    sub.add_argument("--no-repair", action="store_true",
                     help="skip linear interpolation of calendar gaps")


def _add_embedding_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--embed-dim", type=int, default=3, help="delay-embedding dimension")
    sub.add_argument("--embed-delay", type=int, default=1, help="delay-embedding lag")
    sub.add_argument("--min-separation", type=int, default=None,
                     help="neighbor temporal exclusion (default: mean period)")
    sub.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS,
                     help="divergence-curve length")


def _load_series(args) -> OhlcSeries:
    if args.csv and args.symbol:
        raise ValueError("give either --csv or --symbol, not both")
    if args.csv:
        series = parse_csv(args.csv)
    elif args.symbol:
        if args.start is None or args.end is None:
            raise ValueError("--symbol requires --start and --end")
        series = fetch_klines(args.symbol, args.start, args.end,
                              endpoint=args.endpoint, cache_dir=args.cache_dir)
    else:
        raise ValueError("no data source: give --csv or --symbol/--start/--end")
    if not args.no_repair and len(series) >= 2:
        repaired = interpolate_missing(series)
        if repaired.interpolated:
            log.info("interpolated %d missing days", len(repaired.interpolated))
        return repaired
    return series


def _embedding(args) -> EmbeddingParams:
    return EmbeddingParams(dimension=args.embed_dim, delay=args.embed_delay,
                           min_temporal_separation=args.min_separation)


def _load_tuned(path: str | None, key: str) -> dict:
    """Tuned-parameter file: {"<mode>:<size>": {"esn": {...}, "gbdt": {...}}}
    with optional "default" fallback key."""
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text())
    section = raw.get(key, raw.get("default", {}))
    tuned = {}
    for model, cls in _PARAM_TYPES.items():
        if model in section:
            tuned[model] = cls(**section[model])
    return tuned


def _grid_text(cells: dict[tuple[str, int], dict], models) -> str:
    """Mean-RMSE grid, models as rows, (mode, train size) as columns."""
    keys = sorted(cells, key=lambda k: (k[0] != "uni", k[1]))
    header = ["model"] + [f"{mode}-{size}" for mode, size in keys]
    rows = [header]
    for model in models:
        row = [model]
        for key in keys:
            value = cells[key].get(model)
            row.append("-" if value is None else f"{value:.2f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows)


# ---------------------------------------------------------------------------
# command handlers (each returns an exit code; outputs registered in `staged`)


def cmd_fetch(args, staged: list[Path]) -> int:
    series = fetch_klines(args.symbol, args.start, args.end,
                          endpoint=args.endpoint, cache_dir=args.cache_dir,
                          limit=args.limit)
    if args.repair:
        series = interpolate_missing(series)
    out = Path(args.out)
    staged.append(out)
    write_csv(series, out)
    print(f"wrote {len(series)} bars ({series.bars[0].timestamp} .. "
          f"{series.bars[-1].timestamp}) to {out}")
    return EXIT_OK


def cmd_stationarity(args, staged: list[Path]) -> int:
    series = _load_series(args)
    closes = series.closes
    grid = [round(i * args.grid_step, 10)
            for i in range(round(1.0 / args.grid_step) + 1)]

    lines = ["d,n_weights,t_statistic,lag_order,reject_unit_root"]
    for d in grid:
        try:
            result = fracdiff(closes, d, args.threshold)
            report = adf_test(result.values, args.max_lag)
        except (NumericError, ValueError):
            lines.append(f"{d},,,,")
            continue
        lines.append(f"{d},{len(result.weights)},{report.t_statistic!r},"
                     f"{report.lag_order},{int(report.reject_unit_root)}")
    if args.out:
        out = Path(args.out)
        staged.append(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n")

    order = min_stationary_order(closes, grid_step=args.grid_step,
                                 threshold=args.threshold, max_lag=args.max_lag)
    print(f"minimum stationary differentiation order: {order}")
    return EXIT_OK


def cmd_features(args, staged: list[Path]) -> int:
    series = _load_series(args)
    matrix = build_feature_matrix(series, args.mode)
    out = Path(args.out)
    staged.append(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["timestamp," + ",".join(matrix.column_names) + ",target"]
    for i, stamp in enumerate(matrix.timestamps):
        cells = ",".join(repr(float(v)) for v in matrix.rows[i])
        lines.append(f"{stamp.isoformat()},{cells},{float(matrix.target[i])!r}")
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(matrix)} rows x {len(matrix.column_names)} features to {out}")
    return EXIT_OK


def _tune_family(series, mode: str, size: int, model: str, budget: int,
                 seed: int, stride: int, outdir: Path, staged: list[Path],
                 align_models=None):
    objective, tuning_ids = family_objective(series, mode, size, model,
                                             window_stride=stride,
                                             align_models=align_models)
    trials_path = outdir / f"trials_{mode}_{size}_{model}.jsonl"
    staged.append(trials_path)
    best = optimize(objective, _SEARCH_SPACES[model](), budget, seed,
                    history_path=trials_path)
    log.info("tuned %s %s-%d: loss %.4f", model, mode, size, best.loss)
    return _PARAM_TYPES[model](**best.params), best, tuning_ids


def cmd_tune(args, staged: list[Path]) -> int:
    _check_family_args(args)
    series = _load_series(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    budget = args.budget or (_FAST_BUDGET if args.fast else _FULL_BUDGET)
    stride = args.stride or (_FAST_STRIDE if args.fast else 1)

    params, best, _ = _tune_family(series, args.mode, args.train_size, args.model,
                                   budget, args.seed, stride, outdir, staged)
    out = outdir / f"tuned_{args.mode}_{args.train_size}.json"
    staged.append(out)
    payload = {f"{args.mode}:{args.train_size}": {args.model: asdict(params)}}
    out.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"best {args.model} loss {best.loss:.4f}; params written to {out}")
    return EXIT_OK


def cmd_backtest(args, staged: list[Path]) -> int:
    modes = ("uni", "multi") if args.mode == "both" else (args.mode,)
    sizes = _parse_list(args.train_sizes, int, "train size")
    models = _parse_list(args.models, str, "model")
    unknown = set(models) - set(ALL_MODELS)
    if unknown:
        raise ValueError(f"unknown models: {sorted(unknown)}")
    budget = args.budget or (_FAST_BUDGET if args.fast else _FULL_BUDGET)
    stride = args.stride or (_FAST_STRIDE if args.fast else 1)
    jobs = args.jobs or os.cpu_count() or 1
    embedding = _embedding(args)

    series = _load_series(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    grid: dict[tuple[str, int], dict] = {}

    for mode in modes:
        for size in sizes:
            key = f"{mode}:{size}"
            tuned = _load_tuned(args.params, key)
            tuning_ids = ()
            if args.tune:
                tuned_out = {}
                for model in [m for m in models if m in _PARAM_TYPES]:
                    params, _, tuning_ids = _tune_family(
                        series, mode, size, model, budget, args.seed, stride,
                        outdir, staged, align_models=models)
                    tuned[model] = params
                    tuned_out[model] = asdict(params)
                if tuned_out:
                    tuned_path = outdir / f"tuned_{mode}_{size}.json"
                    staged.append(tuned_path)
                    tuned_path.write_text(json.dumps(
                        {key: tuned_out}, sort_keys=True, indent=2) + "\n")

            report = run_backtest(
                series, mode, size, models, tuned,
                n_lags=args.n_lags, window_stride=stride,
                tuning_window_ids=tuning_ids, embedding=embedding,
                max_steps=args.max_steps, n_jobs=jobs)
            staged.append(write_report_csv(report, outdir / f"report_{mode}_{size}.csv"))
            staged.append(write_summary_json(
                report, outdir / f"summary_{mode}_{size}.json",
                header_extra={"source": series.source}))
            staged.extend(write_plot_data(report, outdir / "plots", args.period))
            grid[(mode, size)] = report.aggregates["mean_rmse"]
            log.info("%s-%d: %d windows, %d excluded", mode, size,
                     len(report.window_results), report.excluded)

    print(_grid_text(grid, models))
    return EXIT_OK


def _report_from_summary(path: Path) -> BacktestReport:
    body = json.loads(path.read_text())["body"]
    rows = tuple(WindowResult(
        window_id=w["window_id"],
        start_date=date.fromisoformat(w["start_date"]),
        rmse=w["rmse"],
        model_hash=w["model_hash"],
        lambda_max=w["lambda_max"],
        lambda_skips=w["lambda_skips"],
        exratio=w["exratio"],
        mean_close=w["mean_close"],
        in_tuning_set=w["in_tuning_set"],
        errors=w["errors"],
    ) for w in body["windows"])
    config = body["config"]
    return BacktestReport(
        mode=config["mode"],
        train_size=config["train_size"],
        models=tuple(config["models"]),
        window_results=rows,
        excluded=body["excluded"],
        tuning_window_ids=tuple(body["tuning_window_ids"]),
        aggregates=body["aggregates"],
        config=config,
    )


def cmd_chaos(args, staged: list[Path]) -> int:
    if args.summary is None and args.train_size <= 15:
        print("warning: train window <= 15 points; lyapunov estimates unreliable",
              file=sys.stderr)
    if args.summary:
        report = _report_from_summary(Path(args.summary))
    else:
        _check_family_args(args, model_flag=False)
        models = _parse_list(args.models, str, "model")
        if not {"esn", "gbdt"} <= set(models):
            raise ValueError("chaos stratification needs both esn and gbdt")
        series = _load_series(args)
        tuned = _load_tuned(args.params, f"{args.mode}:{args.train_size}")
        report = run_backtest(
            series, args.mode, args.train_size, models, tuned,
            n_lags=args.n_lags, window_stride=args.stride or 1,
            embedding=_embedding(args), max_steps=args.max_steps,
            n_jobs=args.jobs or os.cpu_count() or 1)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tag = f"{report.mode}_{report.train_size}"

    lambda_path = outdir / f"chaos_{tag}.csv"
    staged.append(lambda_path)
    lines = ["window_id,start_date,lambda_max,lambda_skips"]
    for r in report.window_results:
        lam = "" if r.lambda_max is None else repr(r.lambda_max)
        lines.append(f"{r.window_id},{r.start_date.isoformat()},{lam},{r.lambda_skips}")
    lambda_path.write_text("\n".join(lines) + "\n")

    summary = chaos_stratified_test(report)
    payload = {
        "mode": report.mode,
        "train_size": report.train_size,
        "stratified_test": asdict(summary),
        # short windows make the divergence-curve fit unreliable
        "short_window_warning": report.train_size <= 15,
    }
    test_path = outdir / f"chaos_test_{tag}.json"
    staged.append(test_path)
    test_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

    decision = "reject" if summary.reject_at_5pct else "fail to reject"
    print(f"U = {summary.u_statistic:.1f}, p = {summary.p_value:.4f} -> {decision} "
          f"equal-EXratio-medians at 5% "
          f"(low-chaos median {summary.exratio_median_low:.3f}, "
          f"high-chaos median {summary.exratio_median_high:.3f})")
    return EXIT_OK


def cmd_report(args, staged: list[Path]) -> int:
    outdir = Path(args.outdir)
    summaries = sorted(outdir.glob("summary_*_*.json"))
    if not summaries:
        raise DataError(f"no summary_*.json files under {outdir}")
    grid: dict[tuple[str, int], dict] = {}
    models: list[str] = []
    for path in summaries:
        report = _report_from_summary(path)
        grid[(report.mode, report.train_size)] = report.aggregates["mean_rmse"]
        for m in report.models:
            if m not in models:
                models.append(m)
    print(_grid_text(grid, models))
    return EXIT_OK


def _check_family_args(args, model_flag: bool = True) -> None:
    if args.mode not in ("uni", "multi"):
        raise ValueError(f"mode must be uni or multi, got {args.mode!r}")
    if args.train_size < 1:
        raise ValueError(f"train size must be positive, got {args.train_size}")
    if args.train_size not in STANDARD_TRAIN_SIZES:
        log.warning("train size %d is outside the standard grid %s",
                    args.train_size, STANDARD_TRAIN_SIZES)
    if model_flag and args.model not in _PARAM_TYPES:
        raise ValueError(f"model must be esn or gbdt, got {args.model!r}")


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="esncast",
        description="Echo state network forecasting pipeline with rolling-window "
                    "backtesting, boosted-tree baselines, and chaos analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    parser.add_argument("--config", help="JSON config file; sections keyed by "
                        "command, values override flag defaults")
    subparsers = parser.add_subparsers(dest="command")
    subs: dict[str, argparse.ArgumentParser] = {}

    sub = subs["fetch"] = subparsers.add_parser(
        "fetch", help="download daily klines to a CSV")
    sub.add_argument("--symbol", required=True)
    sub.add_argument("--start", type=_parse_date, required=True)
    sub.add_argument("--end", type=_parse_date, required=True)
    sub.add_argument("--out", required=True, help="output CSV path")
    sub.add_argument("--endpoint")
    sub.add_argument("--cache-dir")
    sub.add_argument("--limit", type=int, default=1000, help="rows per request page")
    sub.add_argument("--repair", action="store_true",
                     help="interpolate calendar gaps before writing")
    sub.set_defaults(handler=cmd_fetch)

    sub = subs["stationarity"] = subparsers.add_parser(
        "stationarity", help="fractional differentiation + unit-root analysis")
    _add_data_flags(sub)
    sub.add_argument("--grid-step", type=float, default=0.1)
    sub.add_argument("--threshold", type=float, default=DEFAULT_WEIGHT_THRESHOLD,
                     help="weight truncation threshold")
    sub.add_argument("--max-lag", type=int, default=None)
    sub.add_argument("--out", help="write the d-vs-t-statistic curve CSV here")
    sub.set_defaults(handler=cmd_stationarity)

    sub = subs["features"] = subparsers.add_parser(
        "features", help="dump the model-ready feature matrix to CSV")
    _add_data_flags(sub)
    sub.add_argument("--mode", choices=("uni", "multi"), default="multi")
    sub.add_argument("--out", required=True)
    sub.set_defaults(handler=cmd_features)

    sub = subs["tune"] = subparsers.add_parser(
        "tune", help="TPE-tune one model for one window family")
    _add_data_flags(sub)
    sub.add_argument("--mode", choices=("uni", "multi"), required=True)
    sub.add_argument("--train-size", type=int, required=True)
    sub.add_argument("--model", choices=("esn", "gbdt"), required=True)
    sub.add_argument("--budget", type=int, default=None,
                     help=f"trials (default {_FULL_BUDGET}, fast {_FAST_BUDGET})")
    sub.add_argument("--seed", type=int, default=EsnHyperParams().seed)
    sub.add_argument("--stride", type=int, default=None,
                     help="evaluate every k-th window")
    sub.add_argument("--fast", action="store_true",
                     help=f"profile: budget {_FAST_BUDGET}, stride {_FAST_STRIDE}")
    sub.add_argument("--outdir", default="out")
    sub.set_defaults(handler=cmd_tune)

    sub = subs["backtest"] = subparsers.add_parser(
        "backtest", help="rolling-window evaluation; emits reports and plot data")
    _add_data_flags(sub)
    _add_embedding_flags(sub)
    sub.add_argument("--mode", choices=("uni", "multi", "both"), default="both")
    sub.add_argument("--train-sizes", default="15,30,60")
    sub.add_argument("--models", default=",".join(ALL_MODELS))
    sub.add_argument("--params", help="tuned-parameter JSON file")
    sub.add_argument("--tune", action="store_true",
                     help="tune esn/gbdt before evaluating")
    sub.add_argument("--budget", type=int, default=None)
    sub.add_argument("--seed", type=int, default=EsnHyperParams().seed)
    sub.add_argument("--stride", type=int, default=None)
    sub.add_argument("--fast", action="store_true",
                     help=f"profile: budget {_FAST_BUDGET}, stride {_FAST_STRIDE}")
    sub.add_argument("--n-lags", type=int, default=DEFAULT_N_LAGS)
    sub.add_argument("--jobs", type=int, default=None,
                     help="parallel windows (default: cpu count)")
    sub.add_argument("--period", choices=("monthly", "yearly"), default="monthly")
    sub.add_argument("--outdir", default="out")
    sub.set_defaults(handler=cmd_backtest)

    sub = subs["chaos"] = subparsers.add_parser(
        "chaos", help="chaos-stratified EXratio comparison")
    _add_data_flags(sub)
    _add_embedding_flags(sub)
    sub.add_argument("--summary", help="reuse a backtest summary JSON")
    sub.add_argument("--mode", choices=("uni", "multi"), default="uni")
    sub.add_argument("--train-size", type=int, default=60)
    sub.add_argument("--models", default="esn,gbdt,naive")
    sub.add_argument("--params", help="tuned-parameter JSON file")
    sub.add_argument("--stride", type=int, default=None)
    sub.add_argument("--n-lags", type=int, default=DEFAULT_N_LAGS)
    sub.add_argument("--jobs", type=int, default=None)
    sub.add_argument("--outdir", default="out")
    sub.set_defaults(handler=cmd_chaos)

    sub = subs["report"] = subparsers.add_parser(
        "report", help="print the mean-RMSE grid from saved summaries")
    sub.add_argument("--outdir", default="out")
    sub.set_defaults(handler=cmd_report)

    return parser, subs


def _apply_config(parser, subs, args, argv):
    """Merge a JSON config file under the parsed command, then reparse.

    Section keys are argparse dests; explicit flags still win because the
    config only replaces defaults.
    """
    config = json.loads(Path(args.config).read_text())
    section = config.get(args.command, {})
    if not isinstance(section, dict):
        raise ValueError(f"config section {args.command!r} must be an object")
    known = set(vars(args))
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    subs[args.command].set_defaults(**section)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE

    staged: list[Path] = []
    try:
        if args.config:
            args = _apply_config(parser, subs, args, argv)
        return args.handler(args, staged)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _discard(staged)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _discard(staged)
        return EXIT_IO
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _discard(staged)
        return EXIT_NUMERIC


def _discard(staged: list[Path]) -> None:
    for path in staged:
        try:
            path.unlink(missing_ok=True)
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
