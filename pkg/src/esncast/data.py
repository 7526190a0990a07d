"""Daily OHLCV acquisition: exchange klines REST fetch, CSV round-trip, gap repair.

The fetch side talks to a Binance-convention klines endpoint (interval 1d,
epoch-millisecond start/end, JSON array-of-arrays) and keeps a raw-response
cache on disk so any successfully fetched range replays offline and
byte-identically.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import requests

from .errors import DataError, FetchError

log = logging.getLogger(__name__)

DAY_MS = 86_400_000
DEFAULT_ENDPOINT = "https://api.binance.com/api/v3/klines"
DEFAULT_CACHE_DIR = Path("~/.cache/esncast/klines")
ENDPOINT_ENV = "ESNCAST_KLINES_ENDPOINT"
CACHE_ENV = "ESNCAST_CACHE_DIR"
CSV_HEADER = ("timestamp", "open", "high", "low", "close", "volume")

_MAX_ATTEMPTS = 4
_BACKOFF_BASE = 0.5  # seconds; doubles per retry
_FETCH_LOCKS: dict[str, threading.Lock] = {}
_FETCH_LOCKS_GUARD = threading.Lock()


@dataclass(frozen=True, slots=True)
class OhlcBar:
    """One daily candle.  high/low must bracket open and close."""

    timestamp: date
    open: float
    high: float
    low: float
    close: float
    volume: float | None = None

    def __post_init__(self) -> None:
        for name in ("open", "high", "low", "close"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise DataError(f"{self.timestamp}: {name} must be a positive "
                                f"finite price, got {value!r}")
        if not (self.low <= min(self.open, self.close) and
                self.high >= max(self.open, self.close)):
            raise DataError(
                f"{self.timestamp}: high/low do not bracket open/close "
                f"(o={self.open} h={self.high} l={self.low} c={self.close})")
        if self.volume is not None and (not np.isfinite(self.volume) or self.volume < 0):
            raise DataError(f"{self.timestamp}: bad volume {self.volume!r}")


@dataclass(frozen=True)
class OhlcSeries:
    """Immutable daily series, strictly increasing timestamps.

    ``interpolated`` flags bars synthesized by gap repair; ``source`` records
    where the bars came from (file path or endpoint#symbol).
    """

    bars: tuple[OhlcBar, ...]
    source: str = ""
    interpolated: frozenset[date] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not self.bars:
            raise DataError("series must contain at least one bar")
        stamps = [b.timestamp for b in self.bars]
        for prev, cur in zip(stamps, stamps[1:]):
            if cur <= prev:
                raise DataError(f"timestamps not strictly increasing at {cur}")

    def __len__(self) -> int:
        return len(self.bars)

    @property
    def timestamps(self) -> tuple[date, ...]:
        return tuple(b.timestamp for b in self.bars)

    @property
    def is_contiguous(self) -> bool:
        first, last = self.bars[0].timestamp, self.bars[-1].timestamp
        return (last - first).days + 1 == len(self.bars)

    def column(self, name: str) -> np.ndarray:
        if name not in ("open", "high", "low", "close", "volume"):
            raise ValueError(f"unknown column {name!r}")
        vals = [getattr(b, name) for b in self.bars]
        if name == "volume" and any(v is None for v in vals):
            raise DataError("volume requested but some bars have no volume")
        return np.asarray(vals, dtype=float)

    @property
    def closes(self) -> np.ndarray:
        return self.column("close")


def parse_csv(path: str | Path, column_map: dict[str, str] | None = None) -> OhlcSeries:
    """Read a daily OHLCV CSV into a validated series, sorted ascending.

    ``column_map`` maps canonical names (timestamp/open/high/low/close/volume)
    to the file's header names when they differ.  Volume may be absent.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    mapping = {name: name for name in CSV_HEADER}
    mapping.update(column_map or {})

    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        for canonical in ("timestamp", "open", "high", "low", "close"):
            if mapping[canonical] not in reader.fieldnames:
                raise DataError(
                    f"{path}: missing required column {mapping[canonical]!r}")
        has_volume = mapping["volume"] in reader.fieldnames

        bars: list[OhlcBar] = []
        seen: set[date] = set()
        for lineno, row in enumerate(reader, start=2):
            try:
                stamp = _parse_timestamp(row[mapping["timestamp"]])
                fields = {k: float(row[mapping[k]])
                          for k in ("open", "high", "low", "close")}
                volume = None
                if has_volume and row[mapping["volume"]] not in ("", None):
                    volume = float(row[mapping["volume"]])
                bar = OhlcBar(timestamp=stamp, volume=volume, **fields)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: unparseable row ({exc})") from None
            if stamp in seen:
                raise DataError(f"{path}:{lineno}: duplicate timestamp {stamp}")
            seen.add(stamp)
            bars.append(bar)

    if not bars:
        raise DataError(f"{path}: empty series (header only, no data rows)")
    bars.sort(key=lambda b: b.timestamp)
    return OhlcSeries(bars=tuple(bars), source=str(path))


def write_csv(series: OhlcSeries, path: str | Path) -> Path:
    """Write the canonical header + ISO dates; round-trips through parse_csv."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for bar in series.bars:
            writer.writerow([
                bar.timestamp.isoformat(),
                repr(bar.open), repr(bar.high), repr(bar.low), repr(bar.close),
                "" if bar.volume is None else repr(bar.volume),
            ])
    return path


def interpolate_missing(series: OhlcSeries) -> OhlcSeries:
    """Fill calendar gaps by per-field linear interpolation between neighbors.

    Synthesized dates are flagged in ``interpolated``.  The endpoints always
    exist (a series is its own boundary), so no extrapolation happens here.
    """
    if len(series) < 2:
        raise DataError("need at least 2 bars to repair gaps")
    if series.is_contiguous:
        return series

    have_volume = all(b.volume is not None for b in series.bars)
    stamps = series.timestamps
    day0 = stamps[0]
    offsets = np.array([(t - day0).days for t in stamps], dtype=float)
    grid = np.arange(0.0, offsets[-1] + 1.0)

    columns = {}
    for name in ("open", "high", "low", "close") + (("volume",) if have_volume else ()):
        columns[name] = np.interp(grid, offsets, series.column(name))

    known = {b.timestamp: b for b in series.bars}
    bars: list[OhlcBar] = []
    filled: set[date] = set()
    for i, off in enumerate(grid):
        stamp = day0 + timedelta(days=int(off))
        original = known.get(stamp)
        if original is not None:  # keep real bars bit-exact
            bars.append(original)
            continue
        filled.add(stamp)
        bars.append(OhlcBar(
            timestamp=stamp,
            open=float(columns["open"][i]),
            high=float(columns["high"][i]),
            low=float(columns["low"][i]),
            close=float(columns["close"][i]),
            volume=float(columns["volume"][i]) if have_volume else None,
        ))
    return OhlcSeries(bars=tuple(bars), source=series.source,
                      interpolated=frozenset(filled))


def _parse_timestamp(raw: str) -> date:
    raw = (raw or "").strip()
    if not raw:
        raise ValueError("empty timestamp")
    if raw.isdigit() and len(raw) >= 12:  # epoch milliseconds
        return datetime.fromtimestamp(int(raw) / 1000, tz=timezone.utc).date()
    return date.fromisoformat(raw[:10])


def _paginate(start: date, end: date, limit: int) -> list[tuple[int, int]]:
    """Deterministic page plan: [startTime, endTime] ms pairs, <= limit days each."""
    plan = []
    cursor = start
    while cursor <= end:
        page_end = min(cursor + timedelta(days=limit - 1), end)
        plan.append((_day_ms(cursor), _day_ms(page_end) + DAY_MS - 1))
        cursor = page_end + timedelta(days=1)
    return plan


def _day_ms(day: date) -> int:
    return int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp() * 1000)


def _cache_path(cache_dir: Path, symbol: str, start_ms: int, end_ms: int, limit: int) -> Path:
    return cache_dir / f"{symbol}_1d_{start_ms}_{end_ms}_{limit}.json"


def _get_with_retries(session: requests.Session, endpoint: str, params: dict) -> str:
    last_error: Exception | None = None
    for attempt in range(_MAX_ATTEMPTS):
        if attempt:
            time.sleep(_BACKOFF_BASE * 2 ** (attempt - 1))
        try:
            resp = session.get(endpoint, params=params, timeout=30)
            resp.raise_for_status()
            return resp.text
        except requests.RequestException as exc:
            last_error = exc
            log.warning("klines request failed (attempt %d/%d): %s",
                        attempt + 1, _MAX_ATTEMPTS, exc)
    raise FetchError(f"klines request failed after {_MAX_ATTEMPTS} attempts: {last_error}")


def _parse_kline_rows(raw: str, source: str) -> list[OhlcBar]:
    try:
        rows = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DataError(f"{source}: response is not JSON ({exc})") from None
    if not isinstance(rows, list):
        raise DataError(f"{source}: expected a JSON array, got {type(rows).__name__}")
    bars = []
    for row in rows:
        if not isinstance(row, list) or len(row) < 6:
            raise DataError(f"{source}: malformed kline row {row!r}")
        open_ms = int(row[0])
        stamp = datetime.fromtimestamp(open_ms / 1000, tz=timezone.utc).date()
        try:
            bars.append(OhlcBar(
                timestamp=stamp,
                open=float(row[1]), high=float(row[2]),
                low=float(row[3]), close=float(row[4]),
                volume=float(row[5]),
            ))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{source}: unparseable kline at {open_ms} ({exc})") from None
    return bars


def fetch_klines(symbol: str, start: date, end: date, *,
                 endpoint: str | None = None,
                 cache_dir: str | Path | None = None,
                 limit: int = 1000,
                 session: requests.Session | None = None) -> OhlcSeries:
    """Fetch daily klines for [start, end], caching raw pages on disk.

    Pages are planned up front from the date range and ``limit``, so the
    request sequence (and therefore the cache layout) is a pure function of
    the arguments.  Each page's raw response body is stored verbatim; warm
    pages never touch the network.  Concurrent fetches of one symbol are
    serialized process-wide.
    """
    if start > end:
        raise ValueError(f"start {start} is after end {end}")
    if not 1 <= limit <= 1000:
        raise ValueError(f"limit must be in [1, 1000], got {limit}")
    endpoint = endpoint or os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT
    cache_root = Path(cache_dir or os.environ.get(CACHE_ENV) or
                      DEFAULT_CACHE_DIR).expanduser()
    cache_root.mkdir(parents=True, exist_ok=True)
    source = f"{endpoint}#{symbol}"

    with _FETCH_LOCKS_GUARD:
        lock = _FETCH_LOCKS.setdefault(symbol, threading.Lock())
    own_session = session is None
    session = session or requests.Session()
    bars: list[OhlcBar] = []
    try:
        with lock:
            for start_ms, end_ms in _paginate(start, end, limit):
                page = _cache_path(cache_root, symbol, start_ms, end_ms, limit)
                if page.exists():
                    raw = page.read_text()
                else:
                    raw = _get_with_retries(session, endpoint, {
                        "symbol": symbol, "interval": "1d",
                        "startTime": start_ms, "endTime": end_ms, "limit": limit,
                    })
                    _parse_kline_rows(raw, source)  # validate before persisting
                    page.write_text(raw)
                bars.extend(_parse_kline_rows(raw, source))
    finally:
        if own_session:
            session.close()

    if not bars:
        raise DataError(f"{source}: empty response for {start}..{end}")
    bars.sort(key=lambda b: b.timestamp)
    for prev, cur in zip(bars, bars[1:]):
        if cur.timestamp == prev.timestamp:
            raise DataError(f"{source}: duplicate bar {cur.timestamp} across pages")
    return OhlcSeries(bars=tuple(bars), source=source)
