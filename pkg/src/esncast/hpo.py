"""Tree-structured Parzen Estimator search over mixed hyperparameter spaces.

TPE splits the trial history at the gamma-quantile of loss, fits one kernel
density per dimension to each side (good/bad), blends each with the uniform
prior as an extra mixture component, then draws candidates from the good
density and keeps the one maximizing l(x)/g(x).  Startup trials before the
history is large enough come straight from the prior.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp, ndtr

TPE_GAMMA = 0.25
N_STARTUP = 20
N_CANDIDATES = 24
_KINDS = ("quantized-uniform", "log-uniform", "uniform", "fixed")
_TRIAL_SEED_STRIDE = 7919  # distinct per-trial sampling seeds within a run


@dataclass(frozen=True, slots=True)
class Dimension:
    """One search dimension.  ``integer`` casts emitted values to int."""

    name: str
    kind: str
    low: float = 0.0
    high: float = 0.0
    step: float | None = None
    value: object = None
    integer: bool = False

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "fixed":
            if self.value is None:
                raise ValueError(f"{self.name}: fixed dimension needs a value")
            return
        if not (np.isfinite(self.low) and np.isfinite(self.high)
                and self.low < self.high):
            raise ValueError(f"{self.name}: bounds must be finite with low < high")
        if self.kind == "log-uniform" and self.low <= 0:
            raise ValueError(f"{self.name}: log-uniform bounds must be positive")
        if self.kind == "quantized-uniform":
            if self.step is None or self.step <= 0:
                raise ValueError(f"{self.name}: quantized dimension needs step > 0")

    def grid(self) -> np.ndarray:
        """Support of a quantized dimension: low, low+step, ... (floor count)."""
        if self.kind != "quantized-uniform":
            raise ValueError(f"{self.name} is not quantized")
        count = int(np.floor((self.high - self.low) / self.step + 1e-9)) + 1
        return self.low + self.step * np.arange(count)

    def snap(self, x: float) -> float:
        """Nearest grid point, clipped into bounds."""
        k = round((x - self.low) / self.step)
        k = min(max(k, 0), len(self.grid()) - 1)
        return float(self.low + self.step * k)

    def emit(self, x: float):
        if self.kind == "fixed":
            return self.value
        if self.kind == "quantized-uniform":
            x = self.snap(x)
        else:
            x = float(min(max(x, self.low), self.high))
        return int(round(x)) if self.integer else x


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self) -> None:
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")
        if not self.dimensions:
            raise ValueError("search space is empty")


@dataclass(frozen=True)
class Trial:
    params: dict
    loss: float
    seed: int


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_uniform_prior(space: SearchSpace, seed) -> dict:
    """Independent draw of every dimension from its prior."""
    rng = _as_rng(seed)
    params = {}
    for dim in space.dimensions:
        if dim.kind == "fixed":
            params[dim.name] = dim.value
        elif dim.kind == "uniform":
            params[dim.name] = dim.emit(rng.uniform(dim.low, dim.high))
        elif dim.kind == "log-uniform":
            params[dim.name] = dim.emit(
                math.exp(rng.uniform(math.log(dim.low), math.log(dim.high))))
        else:
            grid = dim.grid()
            params[dim.name] = dim.emit(grid[rng.integers(len(grid))])
    return params


class _Parzen:
    """Mixture of a uniform prior over [lo, hi] and truncated Gaussians.

    One Gaussian per observation, all components equally weighted; bandwidth
    of each kernel is its larger gap to the neighboring observation (bounds
    count as neighbors), clipped as in the adaptive-Parzen heuristic.
    """

    def __init__(self, observations: np.ndarray, lo: float, hi: float) -> None:
        self.lo, self.hi = lo, hi
        mus = np.sort(np.asarray(observations, dtype=float))
        span = hi - lo
        if len(mus):
            extended = np.concatenate(([lo], mus, [hi]))
            widths = np.maximum(mus - extended[:-2], extended[2:] - mus)
            min_bw = span / min(100.0, 1.0 + len(mus))
            self.mus = mus
            self.bws = np.clip(widths, min_bw, span)
        else:
            self.mus = mus
            self.bws = np.empty(0)
        self.log_weight = -math.log(len(mus) + 1)  # prior counts as one component

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size)
        component = rng.integers(len(self.mus) + 1, size=size)
        for i, c in enumerate(component):
            if c == len(self.mus):
                out[i] = rng.uniform(self.lo, self.hi)
                continue
            mu, bw = self.mus[c], self.bws[c]
            for _ in range(50):  # truncation by redraw; clip as last resort
                draw = rng.normal(mu, bw)
                if self.lo <= draw <= self.hi:
                    break
            out[i] = min(max(draw, self.lo), self.hi)
        return out

    def logpdf(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        parts = [np.full(len(xs), -math.log(self.hi - self.lo))]
        for mu, bw in zip(self.mus, self.bws):
            z = (xs - mu) / bw
            normalizer = max(ndtr((self.hi - mu) / bw) - ndtr((self.lo - mu) / bw),
                             1e-300)
            parts.append(-0.5 * z * z - math.log(bw * math.sqrt(2 * math.pi))
                         - math.log(normalizer))
        return self.log_weight + logsumexp(np.vstack(parts), axis=0)


def _split_history(history: list[Trial], gamma: float) -> tuple[list[Trial], list[Trial]]:
    # stable sort by loss: earlier trials win ties, ceil(gamma*n) go to good
    losses = [t.loss if math.isfinite(t.loss) else math.inf for t in history]
    order = sorted(range(len(history)), key=lambda i: (losses[i], i))
    n_good = math.ceil(gamma * len(history))
    good_idx = set(order[:n_good])
    good = [history[i] for i in order[:n_good]]
    bad = [history[i] for i in range(len(history)) if i not in good_idx]
    return good, bad


def suggest_tpe(history: list[Trial], space: SearchSpace, seed, *,
                gamma: float = TPE_GAMMA, n_startup: int = N_STARTUP,
                n_candidates: int = N_CANDIDATES) -> dict:
    """Propose parameters from the good/bad density ratio (prior before startup)."""
    rng = _as_rng(seed)
    if len(history) < n_startup:
        return sample_uniform_prior(space, rng)

    good, bad = _split_history(history, gamma)
    scores = np.zeros(n_candidates)
    staged: dict[str, np.ndarray] = {}
    for dim in space.dimensions:
        if dim.kind == "fixed":
            continue
        log_scale = dim.kind == "log-uniform"

        def transform(values):
            arr = np.asarray([float(v) for v in values])
            return np.log(arr) if log_scale else arr

        lo, hi = ((math.log(dim.low), math.log(dim.high)) if log_scale
                  else (dim.low, dim.high))
        density_good = _Parzen(transform(t.params[dim.name] for t in good), lo, hi)
        density_bad = _Parzen(transform(t.params[dim.name] for t in bad), lo, hi)

        xs = density_good.sample(rng, n_candidates)
        if dim.kind == "quantized-uniform":
            xs = np.asarray([dim.snap(v) for v in xs])
        scores += density_good.logpdf(xs) - density_bad.logpdf(xs)
        staged[dim.name] = np.exp(xs) if log_scale else xs

    best = int(np.argmax(scores))
    params = {}
    for dim in space.dimensions:
        if dim.kind == "fixed":
            params[dim.name] = dim.value
        else:
            params[dim.name] = dim.emit(float(staged[dim.name][best]))
    return params


def optimize(objective: Callable[[dict], float], space: SearchSpace,
             budget: int, seed: int, *, gamma: float = TPE_GAMMA,
             n_startup: int = N_STARTUP, n_candidates: int = N_CANDIDATES,
             history_path: str | Path | None = None) -> Trial:
    """Run the search and return the lowest-loss trial (first on ties).

    A failing objective records an infinite-loss trial and the search
    continues.  When ``history_path`` is set, every trial is appended there
    as a JSON line (infinite losses serialized as null).
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    sink = None
    if history_path is not None:
        path = Path(history_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        sink = path.open("a")

    history: list[Trial] = []
    try:
        for t in range(budget):
            trial_seed = seed + _TRIAL_SEED_STRIDE * t
            params = suggest_tpe(history, space, trial_seed, gamma=gamma,
                                 n_startup=n_startup, n_candidates=n_candidates)
            try:
                loss = float(objective(params))
            except Exception:
                loss = math.inf
            if math.isnan(loss):
                loss = math.inf
            trial = Trial(params=params, loss=loss, seed=trial_seed)
            history.append(trial)
            if sink is not None:
                sink.write(json.dumps({
                    "params": trial.params,
                    "loss": None if math.isinf(loss) else loss,
                    "seed": trial.seed,
                    "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                }, sort_keys=True) + "\n")
                sink.flush()
    finally:
        if sink is not None:
            sink.close()

    best = min(range(len(history)), key=lambda i: (history[i].loss, i))
    return history[best]


def esn_search_space() -> SearchSpace:
    """Reservoir tuning surface: quantized size, log-uniform dynamics/noise,
    uniform scalings, seed pinned."""
    return SearchSpace((
        Dimension("reservoir_size", "quantized-uniform", 50, 250, step=50, integer=True),
        Dimension("spectral_radius", "log-uniform", 1e-4, 1.0),
        Dimension("leaking_rate", "log-uniform", 1e-4, 1.0),
        Dimension("ridge", "log-uniform", 1e-7, 0.1),
        Dimension("input_scaling", "uniform", 0.05, 0.5),
        Dimension("bias_scaling", "uniform", 0.05, 0.5),
        Dimension("feedback_scaling", "uniform", 0.05, 0.5),
        Dimension("sparsity", "uniform", 0.8, 1.0),
        Dimension("reservoir_noise", "log-uniform", 1e-6, 10.0),
        Dimension("input_noise", "log-uniform", 1e-6, 10.0),
        Dimension("feedback_noise", "log-uniform", 1e-6, 10.0),
        Dimension("seed", "fixed", value=2023),
    ))


def gbdt_search_space() -> SearchSpace:
    """Boosted-tree tuning surface: every row step-quantized, seed pinned."""
    return SearchSpace((
        Dimension("n_estimators", "quantized-uniform", 100, 300, step=100, integer=True),
        Dimension("max_depth", "quantized-uniform", 3, 15, step=1, integer=True),
        Dimension("gamma", "quantized-uniform", 1e-4, 10.0, step=1e-3),
        Dimension("learning_rate", "quantized-uniform", 0.01, 0.3, step=0.01),
        Dimension("colsample_bytree", "quantized-uniform", 0.5, 1.0, step=0.1),
        Dimension("min_child_weight", "quantized-uniform", 0.0, 10.0, step=1.0),
        Dimension("subsample", "quantized-uniform", 0.8, 1.0, step=0.1),
        Dimension("seed", "fixed", value=2023),
    ))
