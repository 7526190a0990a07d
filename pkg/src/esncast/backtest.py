"""Rolling-window backtest harness, RMSE scoring, and rank statistics.

Windows of fixed training length slide forward one row at a time, each
followed by a 10-row test slice.  Every model retrains per window and issues
10 one-step-ahead forecasts that consume the true feature history step by
step.  Per window the harness also estimates the maximal Lyapunov exponent
(averaged over the 10 sliding sub-splits) and the ESN/boosting RMSE ratio,
feeding the chaos-stratified Mann-Whitney comparison.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import date
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (DEFAULT_N_LAGS, GbdtParams, add_lag_features,
                        ensemble_to_json, fit_gbdt_arrays, naive_forecast)
from .chaos import DEFAULT_MAX_STEPS, EmbeddingParams, window_mle
from .data import OhlcSeries
from .errors import ChaosError, EsnError, NumericError
from .esn import EsnHyperParams, fit_series, init_reservoir, predict_one_step
from .features import FeatureMatrix, build_feature_matrix

log = logging.getLogger(__name__)

TEST_SIZE = 10
STANDARD_TRAIN_SIZES = (15, 30, 60)
ALL_MODELS = ("esn", "gbdt", "naive")
TUNING_FRACTION = 0.2  # leading share of windows reserved for hyperparameter tuning
_EXACT_MW_LIMIT = 8


@dataclass(frozen=True, slots=True)
class CvSlice:
    """One sliding sub-split inside a window: train range plus the next row."""

    train_start: int
    train_stop: int
    test_index: int


@dataclass(frozen=True)
class WindowSplit:
    window_id: int
    train_start: int
    train_stop: int
    test_start: int
    test_stop: int
    cv_slices: tuple[CvSlice, ...]


@dataclass(frozen=True)
class WindowResult:
    """Scores for one window.  ``errors`` non-empty flags a failed window;
    ``start_date`` is the first test-row day."""

    window_id: int
    start_date: date | None
    rmse: dict[str, float]
    model_hash: dict[str, str]
    lambda_max: float | None
    lambda_skips: int
    exratio: float | None
    mean_close: float
    in_tuning_set: bool
    errors: dict[str, str]


@dataclass(frozen=True)
class BacktestReport:
    mode: str
    train_size: int
    models: tuple[str, ...]
    window_results: tuple[WindowResult, ...]
    excluded: int
    tuning_window_ids: tuple[int, ...]
    aggregates: dict
    config: dict


def make_windows(series_length: int, train_size: int) -> list[WindowSplit]:
    """All stride-1 windows: count = series_length - train_size - 10 + 1."""
    if train_size < 1:
        raise ValueError(f"train_size must be >= 1, got {train_size}")
    count = series_length - train_size - TEST_SIZE + 1
    if count < 1:
        raise ValueError(
            f"series of length {series_length} too short for train {train_size} "
            f"+ test {TEST_SIZE}")
    windows = []
    for i in range(count):
        cv = tuple(
            CvSlice(train_start=i + j, train_stop=i + train_size + j,
                    test_index=i + train_size + j)
            for j in range(TEST_SIZE))
        windows.append(WindowSplit(
            window_id=i,
            train_start=i, train_stop=i + train_size,
            test_start=i + train_size, test_stop=i + train_size + TEST_SIZE,
            cv_slices=cv))
    return windows


def rmse(actual, predicted) -> float:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1 or len(a) == 0:
        raise ValueError(f"need equal-length 1-d sequences, got {a.shape} vs {p.shape}")
    return float(np.sqrt(np.mean((a - p) ** 2)))


# ---------------------------------------------------------------------------
# per-window model runs

def _run_esn(window: WindowSplit, base: FeatureMatrix,
             params: EsnHyperParams) -> tuple[np.ndarray, str]:
    x = base.rows[window.train_start:window.train_stop]
    y = base.target[window.train_start:window.train_stop]
    model = init_reservoir(params, x.shape[1])
    fit_series(model, x, y)
    digest = hashlib.sha256()
    digest.update(model.w_out.tobytes())
    digest.update(model.state.tobytes())
    digest.update(repr(model.last_output).encode())
    preds = np.array([predict_one_step(model, base.rows[t])
                      for t in range(window.test_start, window.test_stop)])
    if not np.all(np.isfinite(preds)):
        raise EsnError("non-finite forecast from readout")
    return preds, digest.hexdigest()


def _run_gbdt(window: WindowSplit, matrix: FeatureMatrix,
              params: GbdtParams) -> tuple[np.ndarray, str]:
    ensemble = fit_gbdt_arrays(
        matrix.rows[window.train_start:window.train_stop],
        matrix.target[window.train_start:window.train_stop], params)
    digest = hashlib.sha256(ensemble_to_json(ensemble).encode()).hexdigest()
    preds = ensemble.predict_many(matrix.rows[window.test_start:window.test_stop])
    return preds, digest


def _run_naive(window: WindowSplit, base: FeatureMatrix) -> tuple[np.ndarray, str]:
    closes = base.column("close")
    preds = np.array([
        naive_forecast(closes[window.train_start:t + 1])
        for t in range(window.test_start, window.test_stop)])
    digest = hashlib.sha256(
        repr(float(closes[window.train_stop - 1])).encode()).hexdigest()
    return preds, digest


@dataclass(frozen=True)
class _Prepared:
    """Feature matrices aligned so every model scores identical test days."""

    base: FeatureMatrix
    gbdt_matrix: FeatureMatrix | None


def _prepare(series: OhlcSeries, mode: str, models, n_lags: int) -> _Prepared:
    base = build_feature_matrix(series, mode)
    if "gbdt" not in models:
        return _Prepared(base=base, gbdt_matrix=None)
    gbdt_matrix = add_lag_features(base, n_lags)
    return _Prepared(base=base.row_slice(n_lags, len(base)), gbdt_matrix=gbdt_matrix)


def _evaluate_window(window: WindowSplit, prep: _Prepared, models,
                     esn_params: EsnHyperParams, gbdt_params: GbdtParams,
                     embedding: EmbeddingParams | None, max_steps: int,
                     tuning_ids: frozenset[int]) -> WindowResult:
    y_true = prep.base.target[window.test_start:window.test_stop]
    rmses: dict[str, float] = {}
    hashes: dict[str, str] = {}
    errors: dict[str, str] = {}
    for model in models:
        try:
            if model == "esn":
                preds, digest = _run_esn(window, prep.base, esn_params)
            elif model == "gbdt":
                preds, digest = _run_gbdt(window, prep.gbdt_matrix, gbdt_params)
            else:
                preds, digest = _run_naive(window, prep.base)
            rmses[model] = rmse(y_true, preds)
            hashes[model] = digest
        except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
            errors[model] = f"{type(exc).__name__}: {exc}"

    lambda_max, skips = None, len(window.cv_slices)
    try:
        lambda_max, skips = window_mle(
            prep.base.column("close"),
            [(s.train_start, s.train_stop) for s in window.cv_slices],
            embedding, max_steps)
    except ChaosError:
        pass

    exratio = None
    if "esn" in rmses and rmses.get("gbdt", 0.0) > 0.0:
        exratio = rmses["esn"] / rmses["gbdt"]

    return WindowResult(
        window_id=window.window_id,
        start_date=prep.base.timestamps[window.test_start],
        rmse=rmses,
        model_hash=hashes,
        lambda_max=lambda_max,
        lambda_skips=skips,
        exratio=exratio,
        mean_close=float(np.mean(y_true)),
        in_tuning_set=window.window_id in tuning_ids,
        errors=errors,
    )


def _aggregate(results: tuple[WindowResult, ...], models) -> dict:
    usable = [r for r in results if not r.errors]
    holdout = [r for r in usable if not r.in_tuning_set] or usable

    def mean_rmse(rows):
        return {m: float(np.mean([r.rmse[m] for r in rows])) if rows else None
                for m in models}

    yearly: dict[str, dict[int, float]] = {}
    for m in models:
        per_year: dict[int, list[float]] = {}
        for r in usable:
            per_year.setdefault(r.start_date.year, []).append(
                100.0 * r.rmse[m] / r.mean_close)
        yearly[m] = {year: float(np.mean(vals))
                     for year, vals in sorted(per_year.items())}

    return {
        "windows_total": len(results),
        "windows_usable": len(usable),
        "windows_holdout": len(holdout),
        "mean_rmse": mean_rmse(holdout),
        "mean_rmse_all": mean_rmse(usable),
        "yearly_rmse_close_pct": yearly,
    }


def run_backtest(series: OhlcSeries, mode: str, train_size: int,
                 models=ALL_MODELS, tuned_params: dict | None = None, *,
                 n_lags: int = DEFAULT_N_LAGS, window_stride: int = 1,
                 tuning_window_ids=(), embedding: EmbeddingParams | None = None,
                 max_steps: int = DEFAULT_MAX_STEPS,
                 n_jobs: int = 1) -> BacktestReport:
    """Evaluate ``models`` over every (stride-selected) rolling window.

    ``tuned_params`` maps "esn"/"gbdt" to their hyperparameter objects
    (defaults otherwise).  A model failure flags its window; flagged windows
    stay in the report but leave the aggregates.  ``tuning_window_ids`` marks
    rows whose windows served as the tuning objective, so headline aggregates
    (``mean_rmse``) can exclude them; ``mean_rmse_all`` keeps everything.
    """
    models = tuple(models)
    unknown = set(models) - set(ALL_MODELS)
    if unknown:
        raise ValueError(f"unknown models: {sorted(unknown)}")
    if not models:
        raise ValueError("need at least one model")
    if window_stride < 1:
        raise ValueError(f"window_stride must be >= 1, got {window_stride}")
    tuned_params = tuned_params or {}
    esn_params = tuned_params.get("esn", EsnHyperParams())
    gbdt_params = tuned_params.get("gbdt", GbdtParams())

    prep = _prepare(series, mode, models, n_lags)
    windows = make_windows(len(prep.base), train_size)[::window_stride]
    tuning_ids = frozenset(tuning_window_ids)

    def work(window: WindowSplit) -> WindowResult:
        return _evaluate_window(window, prep, models, esn_params, gbdt_params,
                                embedding, max_steps, tuning_ids)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = tuple(pool.map(work, windows))
    else:
        results = tuple(work(w) for w in windows)

    excluded = sum(1 for r in results if r.errors)
    if excluded:
        log.warning("%d/%d windows excluded from aggregates", excluded, len(results))

    config = {
        "mode": mode,
        "train_size": train_size,
        "models": list(models),
        "n_lags": n_lags if "gbdt" in models else None,
        "window_stride": window_stride,
        "max_steps": max_steps,
        "embedding": asdict(embedding) if embedding is not None else None,
        "esn": asdict(esn_params) if "esn" in models else None,
        "gbdt": asdict(gbdt_params) if "gbdt" in models else None,
    }
    return BacktestReport(
        mode=mode,
        train_size=train_size,
        models=models,
        window_results=results,
        excluded=excluded,
        tuning_window_ids=tuple(sorted(tuning_ids)),
        aggregates=_aggregate(results, models),
        config=config,
    )


def tuning_window_count(n_windows: int, fraction: float = TUNING_FRACTION) -> int:
    """Leading windows handed to the tuner: floor(fraction * n), at least 1."""
    if n_windows < 1:
        raise ValueError("no windows")
    return max(1, int(fraction * n_windows))


def family_objective(series: OhlcSeries, mode: str, train_size: int, model: str, *,
                     n_lags: int = DEFAULT_N_LAGS, window_stride: int = 1,
                     align_models=None):
    """Tuning objective for one (model, train size, mode) family.

    Returns (objective, tuning window ids).  The objective maps a parameter
    dict to the mean test RMSE over the leading tuning share of windows;
    reported test windows stay out of it.  Failures bubble up for the
    optimizer to record as infinite loss.  ``align_models`` is the model set
    of the eventual run, so window ids line up when lag features shift the
    feature rows; default: just this model.
    """
    if model not in ("esn", "gbdt"):
        raise ValueError(f"model must be tunable (esn/gbdt), got {model!r}")
    prep = _prepare(series, mode, tuple(align_models or ()) + (model,), n_lags)
    windows = make_windows(len(prep.base), train_size)[::window_stride]
    subset = windows[:tuning_window_count(len(windows))]

    def objective(params: dict) -> float:
        losses = []
        for window in subset:
            y_true = prep.base.target[window.test_start:window.test_stop]
            if model == "esn":
                preds, _ = _run_esn(window, prep.base, EsnHyperParams(**params))
            else:
                preds, _ = _run_gbdt(window, prep.gbdt_matrix, GbdtParams(**params))
            losses.append(rmse(y_true, preds))
        return float(np.mean(losses))

    return objective, tuple(w.window_id for w in subset)


# ---------------------------------------------------------------------------
# rank statistics

def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j < len(values) and values[order[j]] == values[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # 1-based average rank
        i = j
    return ranks


def mann_whitney_u(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U: (U of sample_a, p).

    Exact enumeration of all rank assignments when both samples have at most
    8 values; otherwise normal approximation with tie-corrected variance and
    a 0.5 continuity correction.  Identical pooled values give p = 1.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 1 or len(b) < 1:
        raise ValueError("both samples must be non-empty")
    n_a, n_b = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_obs = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)

    if n_a <= _EXACT_MW_LIMIT and n_b <= _EXACT_MW_LIMIT:
        at_most = at_least = total = 0
        offset = n_a * (n_a + 1) / 2.0
        for subset in combinations(range(n_a + n_b), n_a):
            u = ranks[list(subset)].sum() - offset
            total += 1
            if u <= u_obs + 1e-9:
                at_most += 1
            if u >= u_obs - 1e-9:
                at_least += 1
        p = min(1.0, 2.0 * min(at_most, at_least) / total)
        return u_obs, p

    mu = n_a * n_b / 2.0
    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return u_obs, 1.0
    shift = u_obs - mu
    z = (shift - 0.5 * np.sign(shift)) / math.sqrt(var) if shift else 0.0
    return u_obs, min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def normality_check(sample) -> tuple[float, float]:
    """Jarque-Bera statistic and its chi-squared(2) p-value."""
    x = np.asarray(sample, dtype=float)
    if len(x) < 8:
        raise ValueError(f"need at least 8 values, got {len(x)}")
    centered = x - x.mean()
    m2 = float(np.mean(centered ** 2))
    if m2 == 0:
        raise NumericError("zero-variance sample: normality is undefined")
    skew = float(np.mean(centered ** 3)) / m2 ** 1.5
    kurt = float(np.mean(centered ** 4)) / m2 ** 2 - 3.0
    jb = len(x) / 6.0 * (skew ** 2 + kurt ** 2 / 4.0)
    return jb, math.exp(-jb / 2.0)


@dataclass(frozen=True)
class StratifiedTestSummary:
    n_low: int
    n_high: int
    lambda_median: float
    exratio_median_low: float
    exratio_median_high: float
    u_statistic: float
    p_value: float
    reject_at_5pct: bool
    normality_p_low: float | None
    normality_p_high: float | None


def chaos_stratified_test(report: BacktestReport) -> StratifiedTestSummary:
    """Median-split windows on lambda_max, then Mann-Whitney on EXratio.

    Ties on lambda go to the low-chaos group.  Needs at least 4 usable
    windows carrying both quantities; all-equal lambdas are degenerate.
    """
    rows = [r for r in report.window_results
            if not r.errors and r.lambda_max is not None and r.exratio is not None]
    if len(rows) < 4:
        raise ValueError(
            f"need at least 4 windows with lambda and EXratio, got {len(rows)}")
    lambdas = np.array([r.lambda_max for r in rows])
    exratios = np.array([r.exratio for r in rows])
    if np.ptp(lambdas) == 0:
        raise NumericError("all lambda estimates equal: chaos split is degenerate")
    med = float(np.median(lambdas))
    low = exratios[lambdas <= med]
    high = exratios[lambdas > med]
    if len(low) == 0 or len(high) == 0:
        raise NumericError("degenerate chaos split: one group is empty")
    u, p = mann_whitney_u(low, high)

    def _norm_p(sample) -> float | None:
        if len(sample) < 8 or np.ptp(sample) == 0:
            return None
        return normality_check(sample)[1]

    return StratifiedTestSummary(
        n_low=len(low),
        n_high=len(high),
        lambda_median=med,
        exratio_median_low=float(np.median(low)),
        exratio_median_high=float(np.median(high)),
        u_statistic=u,
        p_value=p,
        reject_at_5pct=p < 0.05,
        normality_p_low=_norm_p(low),
        normality_p_high=_norm_p(high),
    )


# ---------------------------------------------------------------------------
# report emission

CSV_COLUMNS = ("window_id", "start_date", "rmse_esn", "rmse_gbdt", "rmse_naive",
               "lambda_max", "lambda_skips", "exratio", "mean_close",
               "in_tuning_set", "failed")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))  # normalize numpy scalars
    return str(value)


def write_report_csv(report: BacktestReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(CSV_COLUMNS)]
    for r in report.window_results:
        lines.append(",".join(_fmt(v) for v in (
            r.window_id, r.start_date.isoformat(), r.rmse.get("esn"),
            r.rmse.get("gbdt"), r.rmse.get("naive"), r.lambda_max,
            r.lambda_skips, r.exratio, r.mean_close, r.in_tuning_set,
            bool(r.errors))))
    path.write_text("\n".join(lines) + "\n")
    return path


def summary_body(report: BacktestReport) -> dict:
    """Deterministic summary payload (no timestamps; reruns byte-identical)."""
    return {
        "config": report.config,
        "aggregates": report.aggregates,
        "excluded": report.excluded,
        "tuning_window_ids": list(report.tuning_window_ids),
        "windows": [{
            "window_id": r.window_id,
            "start_date": r.start_date.isoformat(),
            "rmse": r.rmse,
            "model_hash": r.model_hash,
            "lambda_max": r.lambda_max,
            "lambda_skips": r.lambda_skips,
            "exratio": r.exratio,
            "mean_close": r.mean_close,
            "in_tuning_set": r.in_tuning_set,
            "errors": r.errors,
        } for r in report.window_results],
    }


def write_summary_json(report: BacktestReport, path: str | Path,
                       header_extra: dict | None = None) -> Path:
    """Summary with volatile fields (timestamps) confined to the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "header": {
            "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "version": __version__,
            **(header_extra or {}),
        },
        "body": summary_body(report),
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def write_plot_data(report: BacktestReport, outdir: str | Path,
                    period: str = "monthly") -> list[Path]:
    """Figure-backing CSVs: per-period RMSE strips, the per-window chaos strip,
    and yearly RMSE/close percentages."""
    if period not in ("monthly", "yearly"):
        raise ValueError(f"period must be monthly or yearly, got {period!r}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tag = f"{report.mode}_{report.train_size}"
    usable = [r for r in report.window_results if not r.errors]
    paths = []

    def key(r: WindowResult) -> str:
        return (r.start_date.strftime("%Y-%m") if period == "monthly"
                else str(r.start_date.year))

    groups: dict[str, list[WindowResult]] = {}
    for r in usable:
        groups.setdefault(key(r), []).append(r)
    lines = ["period," + ",".join(f"rmse_{m}" for m in report.models)]
    for bucket in sorted(groups):
        means = (repr(float(np.mean([r.rmse[m] for r in groups[bucket]])))
                 for m in report.models)
        lines.append(f"{bucket}," + ",".join(means))
    rmse_path = outdir / f"rmse_{period}_{tag}.csv"
    rmse_path.write_text("\n".join(lines) + "\n")
    paths.append(rmse_path)

    lines = ["window_id,start_date,lambda_max"]
    for r in report.window_results:
        lines.append(f"{r.window_id},{r.start_date.isoformat()},{_fmt(r.lambda_max)}")
    chaos_path = outdir / f"chaos_strip_{tag}.csv"
    chaos_path.write_text("\n".join(lines) + "\n")
    paths.append(chaos_path)

    yearly = report.aggregates["yearly_rmse_close_pct"]
    years = sorted({y for per_model in yearly.values() for y in per_model})
    lines = ["year," + ",".join(f"pct_{m}" for m in report.models)]
    for year in years:
        cells = (_fmt(yearly[m].get(year)) for m in report.models)
        lines.append(f"{year}," + ",".join(cells))
    pct_path = outdir / f"rmse_close_pct_{tag}.csv"
    pct_path.write_text("\n".join(lines) + "\n")
    paths.append(pct_path)
    return paths
