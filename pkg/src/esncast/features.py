"""Technical indicators and the model-ready feature matrix.

All indicators operate on plain 1-d float arrays.  Trailing-window outputs
(sma, rolling_std, trend_slope) are shorter than the input by window-1;
recursive outputs (ema, macd) keep full length; rsi consumes one extra point
for the first delta.  ``build_feature_matrix`` aligns everything to a shared
valid range and pairs each row with the next day's close as target.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import OhlcSeries

MULTI_COLUMNS = (
    "close", "sma3", "sma7", "std7", "hl_range", "co_change",
    "close_sma7_ratio", "slope7", "slope14", "rsi7", "macd_7_21",
)
UNI_COLUMNS = ("close",)
MULTI_WARMUP = 20  # slow ema span 21 dominates every other lookback


def _check_window(x: np.ndarray, n: int, smallest: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("input must be one-dimensional")
    if not smallest <= n <= len(x):
        raise ValueError(f"window must be in [{smallest}, {len(x)}], got {n}")
    return x


def sma(x: np.ndarray, n: int) -> np.ndarray:
    """Trailing simple moving average; output length len(x)-n+1."""
    x = _check_window(x, n)
    return np.convolve(x, np.full(n, 1.0 / n), mode="valid")


def ema(x: np.ndarray, n: int) -> np.ndarray:
    """Exponential moving average, factor 2/(n+1), seeded with the first value.

    The span may exceed the series length: smoothing is recursive, not
    windowed, so any non-empty series works.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("input must be one-dimensional")
    if len(x) == 0:
        raise ValueError("series is empty")
    if n < 1:
        raise ValueError(f"span must be >= 1, got {n}")
    alpha = 2.0 / (n + 1)
    out = np.empty_like(x)
    out[0] = x[0]
    for i in range(1, len(x)):
        out[i] = alpha * x[i] + (1 - alpha) * out[i - 1]
    return out


def rolling_std(x: np.ndarray, n: int) -> np.ndarray:
    """Trailing sample standard deviation (ddof=1); output length len(x)-n+1."""
    x = _check_window(x, n, smallest=2)
    return sliding_window_view(x, n).std(axis=1, ddof=1)


def rsi(x: np.ndarray, n: int) -> np.ndarray:
    """Relative strength index over simple means of gains/losses.

    Value at position i covers deltas i+1..i+n of the input, so the output
    has length len(x)-n.  All-gain windows read 100, all-loss 0, flat 50.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("input must be one-dimensional")
    if not 1 <= n <= len(x) - 1:
        raise ValueError(f"window must be in [1, {len(x) - 1}], got {n}")
    deltas = np.diff(x)
    gain = sliding_window_view(np.maximum(deltas, 0.0), n).mean(axis=1)
    loss = sliding_window_view(np.maximum(-deltas, 0.0), n).mean(axis=1)
    out = np.full(len(gain), 50.0)
    active = (gain > 0) | (loss > 0)
    with np.errstate(divide="ignore"):
        ratio = np.divide(gain, loss, out=np.full_like(gain, np.inf),
                          where=loss > 0)
    out[active] = 100.0 - 100.0 / (1.0 + ratio[active])
    return out


def macd(x: np.ndarray, fast: int, slow: int) -> np.ndarray:
    """ema(fast) - ema(slow); full length, zero until the averages separate."""
    if fast >= slow:
        raise ValueError(f"fast span must be below slow span ({fast} >= {slow})")
    return ema(x, fast) - ema(x, slow)


def trend_slope(x: np.ndarray, n: int) -> np.ndarray:
    """Least-squares slope of each trailing n-point window against 0..n-1."""
    x = _check_window(x, n, smallest=2)
    t = np.arange(n, dtype=float)
    t -= t.mean()
    return sliding_window_view(x, n) @ t / (t @ t)


@dataclass(frozen=True)
class FeatureMatrix:
    """Aligned rows, their timestamps, and the next-day close target.

    ``first_valid_index`` locates row 0 inside the source series, so rows can
    be traced back to calendar days after slicing.
    """

    rows: np.ndarray
    column_names: tuple[str, ...]
    target: np.ndarray
    first_valid_index: int
    timestamps: tuple[date, ...]

    def __post_init__(self) -> None:
        if self.rows.ndim != 2:
            raise ValueError("rows must be a 2-d array")
        n = len(self.rows)
        if not (len(self.target) == n and len(self.timestamps) == n):
            raise ValueError("rows, target, and timestamps must align")
        if self.rows.shape[1] != len(self.column_names):
            raise ValueError("column_names must match row width")
        if not np.all(np.isfinite(self.rows)) or not np.all(np.isfinite(self.target)):
            raise ValueError("feature matrix contains non-finite values")

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.column_names.index(name)]

    def row_slice(self, start: int, stop: int) -> FeatureMatrix:
        return replace(
            self,
            rows=self.rows[start:stop],
            target=self.target[start:stop],
            first_valid_index=self.first_valid_index + start,
            timestamps=self.timestamps[start:stop],
        )


def build_feature_matrix(series: OhlcSeries, mode: str) -> FeatureMatrix:
    """Assemble the forecasting design matrix for ``mode`` in {"uni", "multi"}.

    uni: single close column, target next-day close, rows len(series)-1.
    multi: the indicator block in MULTI_COLUMNS order; the slow-ema warmup
    discards the first 20 days, leaving len(series)-21 rows.
    """
    if mode not in ("uni", "multi"):
        raise ValueError(f"mode must be 'uni' or 'multi', got {mode!r}")
    close = series.closes
    n = len(close)
    stamps = series.timestamps

    if mode == "uni":
        return FeatureMatrix(
            rows=close[:-1, None].copy(),
            column_names=UNI_COLUMNS,
            target=close[1:].copy(),
            first_valid_index=0,
            timestamps=stamps[:-1],
        )

    if n < MULTI_WARMUP + 1:
        raise ValueError(
            f"need at least {MULTI_WARMUP + 1} bars to fill every indicator "
            f"window, got {n}")

    high, low = series.column("high"), series.column("low")
    opens = series.column("open")

    def aligned(values: np.ndarray, offset: int) -> np.ndarray:
        # values[i] describes day i+offset; pad so column[t] describes day t
        full = np.full(n, np.nan)
        full[offset:offset + len(values)] = values
        return full

    sma7 = aligned(sma(close, 7), 6)
    columns = {
        "close": close,
        "sma3": aligned(sma(close, 3), 2),
        "sma7": sma7,
        "std7": aligned(rolling_std(close, 7), 6),
        "hl_range": high - low,
        "co_change": close - opens,
        "close_sma7_ratio": close / sma7,
        "slope7": aligned(trend_slope(close, 7), 6),
        "slope14": aligned(trend_slope(close, 14), 13),
        "rsi7": aligned(rsi(close, 7), 7),
        "macd_7_21": macd(close, 7, 21),
    }
    valid = slice(MULTI_WARMUP, n - 1)
    rows = np.column_stack([columns[name][valid] for name in MULTI_COLUMNS])
    return FeatureMatrix(
        rows=rows,
        column_names=MULTI_COLUMNS,
        target=close[MULTI_WARMUP + 1:].copy(),
        first_valid_index=MULTI_WARMUP,
        timestamps=stamps[valid],
    )
