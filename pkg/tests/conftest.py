from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from esncast.data import OhlcBar, OhlcSeries

settings.register_profile(
    "suite", derandomize=True, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow], deadline=None)
settings.load_profile("suite")


def make_series(closes, start=date(2020, 1, 1), spread=0.01, volume=1.0,
                source="fixture") -> OhlcSeries:
    """Series with the given closes; open = previous close, high/low bracket."""
    closes = [float(c) for c in closes]
    if any(c <= 0 for c in closes):
        raise ValueError("fixture closes must be positive")
    bars = []
    prev = closes[0]
    for i, c in enumerate(closes):
        bars.append(OhlcBar(
            timestamp=start + timedelta(days=i),
            open=prev,
            high=max(prev, c) * (1.0 + spread),
            low=min(prev, c) * (1.0 - spread),
            close=c,
            volume=volume,
        ))
        prev = c
    return OhlcSeries(bars=tuple(bars), source=source)


def random_walk_closes(n, seed=0, start=100.0, vol=0.02, drift=0.0):
    rng = np.random.default_rng(seed)
    return start * np.exp(np.cumsum(rng.normal(drift, vol, n)))


@pytest.fixture
def walk_series():
    return make_series(random_walk_closes(160, seed=7))
