"""Leaky echo state network with trainable ridge readout.

Reservoir update: x~(k) = tanh(W_in [1; u(k)] + W_x x(k-1) + W_fb y(k-1) + noise),
x(k) = a x~(k) + (1-a) x(k-1), readout y(k) = W_out x(k).  Training runs
teacher-forced (y(k-1) is the true target); inference feeds the model's own
previous output back.  All randomness comes from seeded generator streams, so
a (hyperparameters, n_inputs) pair always yields the same weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import EsnError

_WEIGHT_STREAM = 0
_NOISE_STREAM = 1
DEFAULT_SEED = 2023


@dataclass(frozen=True, slots=True)
class EsnHyperParams:
    """Reservoir and readout knobs; frozen so models can be cached by value."""

    reservoir_size: int = 100
    spectral_radius: float = 0.9
    leaking_rate: float = 0.3
    ridge: float = 1e-6
    input_scaling: float = 0.1
    bias_scaling: float = 0.0
    feedback_scaling: float = 0.0
    sparsity: float = 0.9
    input_noise: float = 0.0
    reservoir_noise: float = 0.0
    feedback_noise: float = 0.0
    noise_type: str = "gaussian"
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.noise_type != "gaussian":
            raise ValueError(f"only gaussian noise is supported, got {self.noise_type!r}")
        if self.reservoir_size < 1:
            raise ValueError(f"reservoir_size must be >= 1, got {self.reservoir_size}")
        if self.spectral_radius <= 0:
            raise ValueError(f"spectral_radius must be > 0, got {self.spectral_radius}")
        if not 0 < self.leaking_rate <= 1:
            raise ValueError(f"leaking_rate must be in (0, 1], got {self.leaking_rate}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        if not 0 < self.sparsity <= 1:
            raise ValueError(f"sparsity must be in (0, 1], got {self.sparsity}")
        for name in ("input_noise", "reservoir_noise", "feedback_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True, slots=True)
class StateMatrix:
    """Collected reservoir states with the discarded warmup count."""

    states: np.ndarray
    warmup_discarded: int


class EsnModel:
    """Mutable model: fixed random weights plus running state and readout."""

    def __init__(self, hyper: EsnHyperParams, n_inputs: int,
                 w_in: np.ndarray, w_x: np.ndarray, w_fb: np.ndarray) -> None:
        self.hyper = hyper
        self.n_inputs = n_inputs
        self.w_in = w_in
        self.w_x = w_x
        self.w_fb = w_fb
        self.w_out: np.ndarray | None = None
        self.state = np.zeros(hyper.reservoir_size)
        self.last_output = 0.0
        self._noise_rng = np.random.default_rng([hyper.seed, _NOISE_STREAM])


@lru_cache(maxsize=64)
def _draw_weights(hyper: EsnHyperParams, n_inputs: int) -> tuple[np.ndarray, ...]:
    rng = np.random.default_rng([hyper.seed, _WEIGHT_STREAM])
    size = hyper.reservoir_size

    w_x = rng.uniform(-1.0, 1.0, (size, size))
    keep = rng.random((size, size)) < hyper.sparsity
    w_x = np.where(keep, w_x, 0.0)
    radius = float(np.max(np.abs(np.linalg.eigvals(w_x))))
    if radius == 0.0:
        raise EsnError(
            "reservoir matrix has zero spectral radius (all connections "
            "masked); raise sparsity or reservoir_size")
    w_x *= hyper.spectral_radius / radius

    w_in = rng.uniform(-1.0, 1.0, (size, 1 + n_inputs))
    w_in[:, 0] *= hyper.bias_scaling
    w_in[:, 1:] *= hyper.input_scaling

    w_fb = rng.uniform(-1.0, 1.0, size) * hyper.feedback_scaling
    for arr in (w_in, w_x, w_fb):
        arr.setflags(write=False)
    return w_in, w_x, w_fb


def init_reservoir(hyper: EsnHyperParams, n_inputs: int) -> EsnModel:
    """Build a model with seeded weights, zero state, and no readout yet.

    Weight draws are cached by (hyper, n_inputs): the generator is seeded, so
    recomputing them would give identical matrices anyway.
    """
    if n_inputs < 1:
        raise ValueError(f"n_inputs must be >= 1, got {n_inputs}")
    w_in, w_x, w_fb = _draw_weights(hyper, n_inputs)
    return EsnModel(hyper, n_inputs, w_in, w_x, w_fb)


def update_state(model: EsnModel, u: np.ndarray, y_prev: float,
                 training: bool) -> np.ndarray:
    """Advance one step and return (and store) the new leaky-integrated state."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (model.n_inputs,):
        raise ValueError(f"expected {model.n_inputs} inputs, got shape {u.shape}")
    h = model.hyper
    if training:
        rng = model._noise_rng
        u = u + rng.normal(0.0, h.input_noise, model.n_inputs)
        y_prev = y_prev + rng.normal(0.0, h.feedback_noise)
        disturbance = rng.normal(0.0, h.reservoir_noise, h.reservoir_size)
    else:
        disturbance = 0.0

    pre = (model.w_in @ np.concatenate(([1.0], u))
           + model.w_x @ model.state
           + model.w_fb * y_prev
           + disturbance)
    model.state = (h.leaking_rate * np.tanh(pre)
                   + (1.0 - h.leaking_rate) * model.state)
    return model.state


def collect_states(model: EsnModel, inputs: np.ndarray, teacher: np.ndarray,
                   warmup: int) -> StateMatrix:
    """Teacher-forced pass over ``inputs``; returns states after ``warmup``.

    Step k feeds teacher[k-1] as the previous output (zero at k=0), then the
    state AFTER consuming inputs[k] becomes row k.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    teacher = np.asarray(teacher, dtype=float)
    n = len(inputs)
    if len(teacher) != n:
        raise ValueError(f"inputs ({n}) and teacher ({len(teacher)}) lengths differ")
    if not 0 <= warmup < n:
        raise ValueError(f"warmup must be in [0, {n}), got {warmup}")

    states = np.empty((n, model.hyper.reservoir_size))
    y_prev = 0.0
    for k in range(n):
        states[k] = update_state(model, inputs[k], y_prev, training=True)
        y_prev = float(teacher[k])
    return StateMatrix(states=states[warmup:], warmup_discarded=warmup)


def fit_readout(states: StateMatrix | np.ndarray, targets: np.ndarray,
                ridge: float) -> np.ndarray:
    """Ridge regression readout, solved through the SVD of the state matrix.

    Equals (Phi^T Phi + ridge I)^-1 Phi^T y; the SVD route stays accurate when
    saturated states make the normal equations ill-conditioned, and it makes
    the ridge=0 rank check explicit.
    """
    phi = states.states if isinstance(states, StateMatrix) else np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if phi.ndim != 2:
        raise ValueError("state matrix must be 2-d")
    if len(phi) != len(targets):
        raise ValueError(f"states ({len(phi)}) and targets ({len(targets)}) differ")
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")

    u, s, vt = np.linalg.svd(phi, full_matrices=False)
    if ridge == 0.0:
        cutoff = s[0] * max(phi.shape) * np.finfo(float).eps if len(s) else 0.0
        if len(s) == 0 or s[-1] <= cutoff:
            raise EsnError(
                "state matrix is rank deficient and ridge is 0; the readout "
                "is not identifiable (set ridge > 0)")
    filt = s / (s * s + ridge)
    return vt.T @ (filt * (u.T @ targets))


def fit_series(model: EsnModel, inputs: np.ndarray, targets: np.ndarray,
               warmup: int | None = None) -> EsnModel:
    """Teacher-forced fit over one training window.

    Default warmup is min(5, n//5): short enough that small rolling windows
    keep most of their rows, and the state has faded its zero start by then.
    After fitting, the model is primed to free-run from the window's end.
    """
    targets = np.asarray(targets, dtype=float)
    if warmup is None:
        warmup = min(5, len(targets) // 5)
    phi = collect_states(model, inputs, targets, warmup)
    model.w_out = fit_readout(phi, targets[warmup:], model.hyper.ridge)
    model.last_output = float(targets[-1])
    return model


def predict_one_step(model: EsnModel, u: np.ndarray) -> float:
    """One free-running forecast: feeds back the model's own previous output."""
    if model.w_out is None:
        raise EsnError("model has no readout; fit it before predicting")
    state = update_state(model, u, model.last_output, training=False)
    y = float(model.w_out @ state)
    model.last_output = y
    return y


def save_model(model: EsnModel, path: str | Path) -> Path:
    """Serialize weights, readout, and running state to JSON."""
    path = Path(path)
    payload = {
        "hyper": asdict(model.hyper),
        "n_inputs": model.n_inputs,
        "w_in": model.w_in.tolist(),
        "w_x": model.w_x.tolist(),
        "w_fb": model.w_fb.tolist(),
        "w_out": None if model.w_out is None else model.w_out.tolist(),
        "state": model.state.tolist(),
        "last_output": model.last_output,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload))
    return path


def load_model(path: str | Path) -> EsnModel:
    payload = json.loads(Path(path).read_text())
    hyper = EsnHyperParams(**payload["hyper"])
    model = EsnModel(
        hyper, int(payload["n_inputs"]),
        w_in=np.asarray(payload["w_in"], dtype=float),
        w_x=np.asarray(payload["w_x"], dtype=float),
        w_fb=np.asarray(payload["w_fb"], dtype=float),
    )
    if payload["w_out"] is not None:
        model.w_out = np.asarray(payload["w_out"], dtype=float)
    model.state = np.asarray(payload["state"], dtype=float)
    model.last_output = float(payload["last_output"])
    return model
