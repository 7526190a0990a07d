"""Fractional differentiation and augmented Dickey-Fuller stationarity tests.

Fractional differencing uses the binomial weight recurrence with a
fixed-width window truncated where weights drop below a threshold, so each
output point is a dot product over the same number of lags.  The ADF test is
the constant-only regression with AIC lag selection; critical values are the
standard large-sample constants for that regression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

ADF_CRITICAL_VALUES = {"1%": -3.43, "5%": -2.86, "10%": -2.57}
_MIN_ADF_LENGTH = 20
DEFAULT_WEIGHT_THRESHOLD = 1e-5


@dataclass(frozen=True, slots=True)
class FracDiffResult:
    """Differentiated values plus the window bookkeeping that produced them."""

    values: np.ndarray
    order: float
    weights: np.ndarray
    dropped_prefix: int


@dataclass(frozen=True, slots=True)
class AdfReport:
    t_statistic: float
    lag_order: int
    critical_values: dict[str, float]
    reject_unit_root: bool


def fracdiff_weights(d: float, threshold: float = DEFAULT_WEIGHT_THRESHOLD) -> np.ndarray:
    """Binomial weights w_0=1, w_k = -w_{k-1} (d-k+1)/k, truncated at |w_k| < threshold."""
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"order d must be in [0, 1], got {d}")
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    weights = [1.0]
    k = 1
    while True:
        w = -weights[-1] * (d - k + 1) / k
        if abs(w) < threshold:
            break
        weights.append(w)
        k += 1
    return np.asarray(weights)


def fracdiff(series: np.ndarray, d: float,
             threshold: float = DEFAULT_WEIGHT_THRESHOLD) -> FracDiffResult:
    """Fixed-window fractional difference; drops len(weights)-1 leading points."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    weights = fracdiff_weights(d, threshold)
    if len(weights) > len(x):
        raise NumericError(
            f"series of length {len(x)} is shorter than the d={d} weight "
            f"window ({len(weights)} lags at threshold {threshold})")
    # convolve flips the kernel, giving out[t] = sum_k w_k * x[t-k]
    values = np.convolve(x, weights, mode="valid")
    return FracDiffResult(values=values, order=float(d), weights=weights,
                          dropped_prefix=len(weights) - 1)


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    """Least squares returning (coefficients, SSR, coefficient standard errors).

    Solves via SVD of the design itself; forming X'X would square the
    condition number and break on strongly shifted level series.
    """
    n, k = x.shape
    if n <= k:
        raise NumericError(f"ADF regression needs more rows ({n}) than columns ({k})")
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    if s[-1] <= s[0] * max(x.shape) * np.finfo(float).eps:
        raise NumericError("degenerate ADF regression (collinear columns)")
    coef = vt.T @ ((u.T @ y) / s)
    resid = y - x @ coef
    ssr = float(resid @ resid)
    sigma2 = ssr / (n - k)
    xtx_inv = (vt.T / s ** 2) @ vt
    se = np.sqrt(sigma2 * np.diag(xtx_inv))
    return coef, ssr, se


def _design(y: np.ndarray, lag: int, rows: int) -> tuple[np.ndarray, np.ndarray]:
    """Build [const, y_{t-1}, dy_{t-1}..dy_{t-lag}] using the last ``rows`` rows.

    The level column is centered: the constant absorbs the shift, the level
    coefficient and its t-statistic are untouched, and the design stays well
    conditioned for series living far from zero.
    """
    dy = np.diff(y)
    t_end = len(dy)
    t_start = t_end - rows
    level = y[t_start:t_end]
    cols = [np.ones(rows), level - level.mean()]
    for j in range(1, lag + 1):
        cols.append(dy[t_start - j:t_end - j])
    return np.column_stack(cols), dy[t_start:t_end]


def adf_test(series: np.ndarray, max_lag: int | None = None) -> AdfReport:
    """Constant-only ADF regression with AIC lag selection.

    Candidate lags 0..max_lag are compared on the common sample trimmed to
    the largest lag, then the winner is refit on its own full sample.  The
    null (unit root) is rejected when the t-statistic on the level term is
    below the 5% critical value.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("series must be one-dimensional")
    n = len(y)
    if n < _MIN_ADF_LENGTH:
        raise ValueError(f"series too short for ADF ({n} < {_MIN_ADF_LENGTH})")
    if np.ptp(y) == 0:
        raise NumericError("constant series: ADF regression is degenerate")
    if max_lag is None:
        max_lag = int(np.ceil(12.0 * (n / 100.0) ** 0.25))
        max_lag = min(max_lag, (n - 1) // 2 - 2, n // 4 - 1)
    if not 0 <= max_lag < n // 4:
        raise ValueError(f"max_lag must be in [0, {n // 4})")

    common_rows = len(y) - 1 - max_lag
    best_lag, best_aic = 0, np.inf
    for lag in range(max_lag + 1):
        x, dy = _design(y, lag, common_rows)
        _, ssr, _ = _ols(x, dy)
        k = x.shape[1]
        aic = common_rows * np.log(ssr / common_rows) + 2 * k
        if aic < best_aic:
            best_lag, best_aic = lag, aic

    x, dy = _design(y, best_lag, len(y) - 1 - best_lag)
    coef, _, se = _ols(x, dy)
    t_stat = float(coef[1] / se[1])
    return AdfReport(
        t_statistic=t_stat,
        lag_order=best_lag,
        critical_values=dict(ADF_CRITICAL_VALUES),
        reject_unit_root=t_stat < ADF_CRITICAL_VALUES["5%"],
    )


def min_stationary_order(series: np.ndarray, *, grid_step: float = 0.1,
                         threshold: float = DEFAULT_WEIGHT_THRESHOLD,
                         max_lag: int | None = None) -> float:
    """Smallest d on the grid {0, step, ..., 1} whose fracdiff output rejects a unit root.

    Grid points whose truncated weight window exceeds the series length (small
    d keeps a very long memory) or whose output is too short to test are
    skipped: they are not evaluable at this threshold, not failures.
    """
    x = np.asarray(series, dtype=float)
    if len(x) < 100:
        raise ValueError(f"series too short ({len(x)} < 100)")
    if not 0 < grid_step <= 1:
        raise ValueError(f"grid_step must be in (0, 1], got {grid_step}")
    n_steps = round(1.0 / grid_step)
    if abs(n_steps * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step must divide 1 evenly, got {grid_step}")
    grid = [round(i * grid_step, 10) for i in range(n_steps + 1)]

    for d in grid:
        try:
            result = fracdiff(x, d, threshold)
        except NumericError:
            continue
        if len(result.values) < _MIN_ADF_LENGTH:
            continue
        try:
            report = adf_test(result.values, max_lag)
        except NumericError:
            continue
        if report.reject_unit_root:
            return float(d)
    raise NumericError(
        "no differencing order d <= 1 on the grid rejects the unit root")
