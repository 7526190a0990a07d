"""Reference forecasters: naive last-value and Newton gradient-boosted trees.

The boosting loop matches the second-order formulation for squared error:
per round, gradient g_i = prediction - target and hessian h_i = 1; each tree
greedily maximizes gain = 1/2 [G_L^2/(H_L+lam) + G_R^2/(H_R+lam)
- (G_L+G_R)^2/(H_L+H_R+lam)], splits only when that gain reaches ``gamma``,
and assigns leaf weight -G/(H+lam).  Splits are exact greedy over every
threshold midpoint; row/column subsampling comes from one seeded generator,
so a fit is a pure function of (data, params).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .features import FeatureMatrix

DEFAULT_N_LAGS = 7
_ZERO_GAIN = 1e-12


def naive_forecast(train) -> float:
    """Last observed value; the optimal constant-memory call on a random walk."""
    if len(train) == 0:
        raise ValueError("cannot forecast from an empty training sequence")
    return float(train[-1])


def add_lag_features(matrix: FeatureMatrix, n_lags: int) -> FeatureMatrix:
    """Append close(t-1)..close(t-n_lags) columns, dropping rows lacking full lags."""
    if n_lags < 1:
        raise ValueError(f"n_lags must be >= 1, got {n_lags}")
    if len(matrix) <= n_lags:
        raise ValueError(f"matrix has {len(matrix)} rows, need more than {n_lags}")
    close = matrix.column("close")
    lag_cols = [close[n_lags - k:len(close) - k] for k in range(1, n_lags + 1)]
    rows = np.column_stack([matrix.rows[n_lags:], *lag_cols])
    return replace(
        matrix,
        rows=rows,
        column_names=matrix.column_names + tuple(
            f"close_lag_{k}" for k in range(1, n_lags + 1)),
        target=matrix.target[n_lags:],
        first_valid_index=matrix.first_valid_index + n_lags,
        timestamps=matrix.timestamps[n_lags:],
    )


@dataclass(frozen=True, slots=True)
class GbdtParams:
    n_estimators: int = 100
    max_depth: int = 3
    gamma: float = 0.0
    learning_rate: float = 0.1
    colsample_bytree: float = 1.0
    min_child_weight: float = 0.0
    subsample: float = 1.0
    reg_lambda: float = 1.0
    seed: int = 2023

    def __post_init__(self) -> None:
        if self.n_estimators < 0:
            raise ValueError(f"n_estimators must be >= 0, got {self.n_estimators}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 < self.learning_rate <= 1:
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        for name in ("colsample_bytree", "subsample"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.min_child_weight < 0:
            raise ValueError(f"min_child_weight must be >= 0, got {self.min_child_weight}")
        if self.reg_lambda < 0:
            raise ValueError(f"reg_lambda must be >= 0, got {self.reg_lambda}")


@dataclass
class TreeNode:
    """Internal node when ``left``/``right`` set, else leaf carrying ``value``."""

    value: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    gain: float = 0.0
    left: TreeNode | None = None
    right: TreeNode | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def predict(self, x: np.ndarray) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] < node.threshold else node.right
        return node.value

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "gain": self.gain,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }


@dataclass(frozen=True)
class GbdtEnsemble:
    base_score: float
    learning_rate: float
    trees: tuple[TreeNode, ...]
    n_features: int
    params: GbdtParams
    # audit trail: per-round sampled (row indices, column indices) and the
    # in-sample squared-error loss after each round
    sampled_rows: tuple[tuple[int, ...], ...]
    sampled_columns: tuple[tuple[int, ...], ...]
    train_losses: tuple[float, ...]

    def predict_many(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} features, got {x.shape[1]}")
        out = np.full(len(x), self.base_score)
        for tree in self.trees:
            out += self.learning_rate * np.array(
                [tree.predict(row) for row in x])
        return out


def _best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, columns: np.ndarray,
                lam: float, min_child_weight: float) -> tuple[float, int, float]:
    """Exact greedy search; returns (gain, feature, threshold), gain -inf if none."""
    g_total, h_total = g.sum(), h.sum()
    parent = g_total * g_total / (h_total + lam)
    best = (-np.inf, -1, 0.0)
    for f in columns:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        gr, hr = g_total - gl, h_total - hl
        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
        valid = (xs[:-1] < xs[1:]) & (hl >= min_child_weight) & (hr >= min_child_weight)
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0]:
            best = (float(gain[i]), int(f), float((xs[i] + xs[i + 1]) / 2.0))
    return best


def _build_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray,
                columns: np.ndarray, depth: int, params: GbdtParams) -> TreeNode:
    g_sum, h_sum = g[rows].sum(), h[rows].sum()
    leaf = TreeNode(value=-g_sum / (h_sum + params.reg_lambda))
    if depth >= params.max_depth or len(rows) < 2:
        return leaf
    gain, feature, threshold = _best_split(
        x[rows], g[rows], h[rows], columns, params.reg_lambda,
        params.min_child_weight)
    if gain < params.gamma or gain <= _ZERO_GAIN:
        return leaf
    goes_left = x[rows, feature] < threshold
    node = TreeNode(feature=feature, threshold=threshold, gain=gain)
    node.left = _build_tree(x, g, h, rows[goes_left], columns, depth + 1, params)
    node.right = _build_tree(x, g, h, rows[~goes_left], columns, depth + 1, params)
    return node


def fit_gbdt(matrix: FeatureMatrix, params: GbdtParams) -> GbdtEnsemble:
    """Boost squared-error trees on a feature matrix (see module docstring)."""
    return fit_gbdt_arrays(matrix.rows, matrix.target, params)


def fit_gbdt_arrays(x: np.ndarray, y: np.ndarray, params: GbdtParams) -> GbdtEnsemble:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 training rows, got {n}")
    if d < 1:
        raise ValueError("need at least 1 feature column")
    if len(y) != n:
        raise ValueError(f"rows ({n}) and targets ({len(y)}) differ")

    rng = np.random.default_rng(params.seed)
    base = float(y.mean())
    pred = np.full(n, base)
    h = np.ones(n)
    trees: list[TreeNode] = []
    rows_log, cols_log, losses = [], [], []

    for _ in range(params.n_estimators):
        if params.subsample < 1.0:
            k = max(1, int(round(params.subsample * n)))
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = np.arange(n)
        if params.colsample_bytree < 1.0:
            kc = max(1, int(round(params.colsample_bytree * d)))
            columns = np.sort(rng.choice(d, size=kc, replace=False))
        else:
            columns = np.arange(d)

        g = pred - y
        tree = _build_tree(x, g, h, rows, columns, 0, params)
        pred += params.learning_rate * np.array([tree.predict(row) for row in x])
        trees.append(tree)
        rows_log.append(tuple(int(i) for i in rows))
        cols_log.append(tuple(int(c) for c in columns))
        losses.append(float(np.mean((pred - y) ** 2)))

    return GbdtEnsemble(
        base_score=base,
        learning_rate=params.learning_rate,
        trees=tuple(trees),
        n_features=d,
        params=params,
        sampled_rows=tuple(rows_log),
        sampled_columns=tuple(cols_log),
        train_losses=tuple(losses),
    )


def predict_gbdt(ensemble: GbdtEnsemble, x: np.ndarray) -> float:
    """Forecast for a single feature vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (ensemble.n_features,):
        raise ValueError(
            f"expected a vector of {ensemble.n_features} features, got {x.shape}")
    return float(ensemble.predict_many(x[None, :])[0])


def ensemble_to_json(ensemble: GbdtEnsemble) -> str:
    """Audit dump: params, base score, and the full tree list."""
    return json.dumps({
        "params": asdict(ensemble.params),
        "base_score": ensemble.base_score,
        "learning_rate": ensemble.learning_rate,
        "n_features": ensemble.n_features,
        "sampled_rows": ensemble.sampled_rows,
        "sampled_columns": ensemble.sampled_columns,
        "trees": [tree.to_dict() for tree in ensemble.trees],
    }, sort_keys=True)
