"""Maximal Lyapunov exponent estimation via Rosenstein divergence curves.

Pipeline: delay-embed the scalar series, find each point's nearest neighbor
outside a Theiler temporal-exclusion zone, then track the mean log distance
of the surviving pairs step by step.  The exponent is the least-squares slope
of that divergence curve over its initial (linear) region, in per-sample
units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ChaosError

DEFAULT_MAX_STEPS = 5
_FIT_CAP = 5
_CHUNK = 256


@dataclass(frozen=True, slots=True)
class EmbeddingParams:
    """Delay-embedding geometry; separation None means derive from mean period."""

    dimension: int = 3
    delay: int = 1
    min_temporal_separation: int | None = None

    def __post_init__(self) -> None:
        if self.dimension < 2:
            raise ValueError(f"dimension must be >= 2, got {self.dimension}")
        if self.delay < 1:
            raise ValueError(f"delay must be >= 1, got {self.delay}")
        if (self.min_temporal_separation is not None
                and self.min_temporal_separation < 1):
            raise ValueError("min_temporal_separation must be >= 1 when set")


@dataclass(frozen=True, slots=True)
class LyapunovEstimate:
    lambda_max: float
    divergence_curve: np.ndarray
    fit_range: tuple[int, int]
    n_pairs: int


def delay_embed(series: np.ndarray, params: EmbeddingParams) -> np.ndarray:
    """Points v_i = (x_i, x_{i+tau}, ..., x_{i+(m-1)tau}); count = len - (m-1)tau."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    m, tau = params.dimension, params.delay
    n_points = len(x) - (m - 1) * tau
    if n_points < 2:
        raise ChaosError(
            f"series of length {len(x)} too short to embed with m={m}, tau={tau}")
    return np.column_stack([x[k * tau:k * tau + n_points] for k in range(m)])


def mean_period(series: np.ndarray) -> int:
    """Length / dominant-frequency index of the mean-removed spectrum, floored at 1."""
    x = np.asarray(series, dtype=float)
    spectrum = np.abs(np.fft.rfft(x - x.mean()))
    if len(spectrum) < 2 or not spectrum[1:].any():
        return 1
    k_dom = 1 + int(np.argmax(spectrum[1:]))
    return max(1, len(x) // k_dom)


def _nearest_neighbors(points: np.ndarray, separation: int) -> np.ndarray:
    """Index of each point's nearest Euclidean neighbor with |i-j| > separation.

    -1 where no admissible neighbor exists.  Ties resolve to the smallest
    index (argmin convention), keeping the estimate deterministic.
    """
    n = len(points)
    neighbors = np.full(n, -1)
    idx = np.arange(n)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        block = points[start:stop]
        dist = np.linalg.norm(block[:, None, :] - points[None, :, :], axis=2)
        too_close = np.abs(idx[None, :] - idx[start:stop, None]) <= separation
        dist[too_close] = np.inf
        best = np.argmin(dist, axis=1)
        found = np.isfinite(dist[np.arange(stop - start), best])
        neighbors[start:stop] = np.where(found, best, -1)
    return neighbors


def rosenstein_mle(series: np.ndarray, params: EmbeddingParams | None = None,
                   max_steps: int = DEFAULT_MAX_STEPS) -> LyapunovEstimate:
    """Largest Lyapunov exponent of a scalar series, per-sample units.

    Pairs whose trajectory leaves the series are dropped from that step
    onward, as are pairs whose distance hits exactly zero (coincident orbits
    stay coincident), so per-step pair counts never increase.
    """
    params = params or EmbeddingParams()
    x = np.asarray(series, dtype=float)
    if max_steps < 3:
        raise ValueError(f"max_steps must be >= 3, got {max_steps}")
    points = delay_embed(x, params)
    n = len(points)
    if n < 10:
        raise ChaosError(f"only {n} embedded points; need at least 10")

    separation = params.min_temporal_separation
    if separation is None:
        separation = mean_period(x)
    neighbors = _nearest_neighbors(points, separation)
    alive = neighbors >= 0
    if not alive.any():
        raise ChaosError(
            f"no admissible neighbor for any point at temporal separation "
            f"{separation} (segment too short or too periodic)")

    i_idx = np.flatnonzero(alive)
    j_idx = neighbors[i_idx]
    curve = []
    for step in range(max_steps + 1):
        inside = np.maximum(i_idx, j_idx) + step < n
        i_idx, j_idx = i_idx[inside], j_idx[inside]
        if len(i_idx) == 0:
            break
        dist = np.linalg.norm(points[i_idx + step] - points[j_idx + step], axis=1)
        positive = dist > 0
        if step == 0 and not positive.any():
            raise ChaosError("all nearest-neighbor distances are zero "
                             "(constant or exactly repeating segment)")
        i_idx, j_idx, dist = i_idx[positive], j_idx[positive], dist[positive]
        if len(dist) == 0:
            break
        curve.append(float(np.mean(np.log(dist))))

    fit_lo, fit_hi = 1, min(max_steps, _FIT_CAP)
    fit_hi = min(fit_hi, len(curve) - 1)
    if fit_hi < fit_lo + 1:
        raise ChaosError(
            f"divergence curve has {len(curve)} usable steps; too short to fit")
    steps = np.arange(fit_lo, fit_hi + 1, dtype=float)
    values = np.asarray(curve[fit_lo:fit_hi + 1])
    slope = float(np.polyfit(steps, values, 1)[0])
    return LyapunovEstimate(
        lambda_max=slope,
        divergence_curve=np.asarray(curve),
        fit_range=(fit_lo, fit_hi),
        n_pairs=len(np.flatnonzero(alive)),
    )


def window_mle(series: np.ndarray, slices: list[tuple[int, int]],
               params: EmbeddingParams | None = None,
               max_steps: int = DEFAULT_MAX_STEPS) -> tuple[float, int]:
    """Mean exponent over segment slices, skipping ones where estimation fails.

    Returns (mean lambda over the successful slices, skip count).  Raises
    when every slice fails -- chaos is undefined for that window.
    """
    if not slices:
        raise ValueError("need at least one slice")
    estimates = []
    skipped = 0
    for start, stop in slices:
        try:
            estimates.append(
                rosenstein_mle(series[start:stop], params, max_steps).lambda_max)
        except ChaosError:
            skipped += 1
    if not estimates:
        raise ChaosError(
            f"chaos undefined: lyapunov estimation failed on all {len(slices)} slices")
    return float(np.mean(estimates)), skipped
