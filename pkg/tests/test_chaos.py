import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from esncast.chaos import (EmbeddingParams, delay_embed, mean_period,
                           rosenstein_mle, window_mle)
from esncast.errors import ChaosError


def _logistic_orbit(n, x0=0.631, burn=200):
    x = x0
    out = []
    for t in range(n + burn):
        x = 4.0 * x * (1.0 - x)
        if t >= burn:
            out.append(x)
    return np.array(out)


def _henon_orbit(n, burn=200):
    x, y = 0.1, 0.1
    out = []
    for t in range(n + burn):
        x, y = 1.0 - 1.4 * x * x + y, 0.3 * x
        if t >= burn:
            out.append((x, y))
    return np.array(out)


def _two_tone(n=300):
    t = np.arange(n, dtype=float)
    return (np.sin(2 * np.pi * t / np.sqrt(800.0))
            + 0.3 * np.sin(2 * np.pi * t / 7.3 + 1.0))


def test_embed_two_dim_example():
    points = delay_embed([1.0, 2.0, 3.0], EmbeddingParams(dimension=2))
    assert points.tolist() == [[1.0, 2.0], [2.0, 3.0]]


def test_embed_three_dim_delay_two():
    points = delay_embed(np.arange(10.0), EmbeddingParams(dimension=3, delay=2))
    assert points.shape == (6, 3)
    assert points[0].tolist() == [0.0, 2.0, 4.0]
    assert points[-1].tolist() == [5.0, 7.0, 9.0]


def test_embedding_params_validation():
    with pytest.raises(ValueError):
        EmbeddingParams(dimension=1)
    with pytest.raises(ValueError):
        EmbeddingParams(delay=0)
    with pytest.raises(ValueError):
        EmbeddingParams(min_temporal_separation=0)


def test_embed_rejects_matrix_and_short_series():
    with pytest.raises(ValueError):
        delay_embed(np.zeros((4, 2)), EmbeddingParams())
    with pytest.raises(ChaosError):
        delay_embed(np.arange(4.0), EmbeddingParams(dimension=3, delay=2))


@given(n=st.integers(4, 60), m=st.integers(2, 5), tau=st.integers(1, 4))
def test_embed_point_count(n, m, tau):
    params = EmbeddingParams(dimension=m, delay=tau)
    expected = n - (m - 1) * tau
    if expected < 2:
        with pytest.raises(ChaosError):
            delay_embed(np.arange(float(n)), params)
    else:
        assert len(delay_embed(np.arange(float(n)), params)) == expected


def test_mean_period():
    t = np.arange(200)
    assert mean_period(np.sin(2 * np.pi * t / 20.0)) == 20
    assert mean_period(np.ones(50)) == 1
    # a trend concentrates power at the lowest bin
    assert mean_period(np.linspace(0.0, 1.0, 100)) == 100


def test_logistic_map_exponent():
    xs = _logistic_orbit(2000)
    # the exact exponent is ln 2; the orbit average of ln|f'(x)| is the
    # independent check that this trajectory has converged to it
    oracle = float(np.mean(np.log(np.abs(4.0 - 8.0 * xs))))
    assert abs(oracle - math.log(2.0)) < 0.01
    est = rosenstein_mle(xs, EmbeddingParams(dimension=3, delay=1))
    assert abs(est.lambda_max - math.log(2.0)) < 0.09
    assert abs(est.lambda_max - oracle) < 0.09


def test_henon_map_exponent():
    pts = _henon_orbit(5000)
    # benchmark exponent via QR-accumulated Jacobian products
    q = np.eye(2)
    acc = 0.0
    for xx, _ in pts:
        z = np.array([[-2.8 * xx, 1.0], [0.3, 0.0]]) @ q
        q, r = np.linalg.qr(z)
        acc += math.log(abs(r[0, 0]))
    oracle = acc / len(pts)
    assert abs(oracle - 0.419) < 0.02
    est = rosenstein_mle(pts[:, 0], EmbeddingParams(dimension=3, delay=1))
    assert abs(est.lambda_max - 0.419) < 0.05
    assert abs(est.lambda_max - oracle) < 0.05


def test_pure_sinusoid_no_divergence():
    # the period must not divide the sampling grid: at an exact recurrence
    # the nearest neighbor is a float-noise twin and the curve measures
    # rounding error growth instead of dynamics
    t = np.arange(2000, dtype=float)
    s = np.sin(2 * np.pi * t / math.sqrt(2000.0))
    est = rosenstein_mle(s, EmbeddingParams(dimension=3, delay=1))
    assert abs(est.lambda_max) <= 0.02


def test_scale_and_shift_invariance():
    s = _two_tone()
    params = EmbeddingParams(dimension=3, delay=1, min_temporal_separation=5)
    base = rosenstein_mle(s, params).lambda_max
    assert rosenstein_mle(3.7 * s, params).lambda_max == pytest.approx(
        base, abs=1e-6)
    assert rosenstein_mle(s + 100.0, params).lambda_max == pytest.approx(
        base, abs=1e-6)


def test_constant_series_raises():
    with pytest.raises(ChaosError):
        rosenstein_mle(np.ones(100), EmbeddingParams(3, 1, 1))


def test_trend_excludes_every_neighbor():
    # dominant bin 1 -> separation equals the series length, so the Theiler
    # window leaves no admissible pairs
    with pytest.raises(ChaosError, match="no admissible neighbor"):
        rosenstein_mle(np.linspace(0.0, 1.0, 100))


def test_max_steps_validation():
    with pytest.raises(ValueError):
        rosenstein_mle(_two_tone(), max_steps=2)


def test_curve_truncates_when_pairs_run_out():
    tiny = np.sin(2 * np.pi * np.arange(16) / math.sqrt(50.0))
    est = rosenstein_mle(tiny, EmbeddingParams(2, 1, 1), max_steps=40)
    assert len(est.divergence_curve) <= 41
    assert est.fit_range[0] == 1
    assert est.fit_range[1] <= 5
    assert np.isfinite(est.divergence_curve).all()


def test_every_point_paired_at_minimal_separation():
    s = _two_tone(120)
    est = rosenstein_mle(s, EmbeddingParams(3, 1, 1))
    assert est.n_pairs == 120 - 2


def test_window_mle_identical_slices():
    s = _two_tone()
    params = EmbeddingParams(3, 1, 5)
    single = rosenstein_mle(s, params).lambda_max
    mean, skipped = window_mle(np.concatenate([s, s]), [(0, 300), (0, 300)],
                               params)
    assert mean == pytest.approx(single)
    assert skipped == 0


def test_window_mle_skips_failing_slices():
    s = _two_tone()
    flat = np.concatenate([s[:150], np.full(150, 2.0)])
    params = EmbeddingParams(3, 1, 5)
    mean, skipped = window_mle(flat, [(0, 150), (150, 300)], params)
    assert skipped == 1
    assert mean == pytest.approx(rosenstein_mle(s[:150], params).lambda_max)
    with pytest.raises(ChaosError, match="all 1 slices"):
        window_mle(flat, [(150, 300)], params)
    with pytest.raises(ValueError):
        window_mle(flat, [], params)
