import json
import math
from datetime import datetime

import numpy as np
import pytest
from scipy import stats

from esncast.hpo import (Dimension, SearchSpace, Trial, esn_search_space,
                         gbdt_search_space, optimize, sample_uniform_prior,
                         suggest_tpe)


def test_dimension_validation():
    with pytest.raises(ValueError):
        Dimension("x", "triangular", 0, 1)
    with pytest.raises(ValueError):
        Dimension("x", "fixed")
    with pytest.raises(ValueError):
        Dimension("x", "uniform", 1.0, 1.0)
    with pytest.raises(ValueError):
        Dimension("x", "log-uniform", 0.0, 1.0)
    with pytest.raises(ValueError):
        Dimension("x", "quantized-uniform", 0, 1)
    with pytest.raises(ValueError):
        SearchSpace((Dimension("x", "uniform", 0, 1),
                     Dimension("x", "uniform", 0, 2)))
    with pytest.raises(ValueError):
        SearchSpace(())


def test_quantized_grid_and_snap():
    dim = Dimension("n", "quantized-uniform", 50, 250, step=50, integer=True)
    assert dim.grid().tolist() == [50, 100, 150, 200, 250]
    assert dim.snap(-10.0) == 50
    assert dim.snap(137.0) == 150
    assert dim.snap(1e9) == 250
    assert dim.emit(137.0) == 150
    assert isinstance(dim.emit(137.0), int)


def test_fixed_dimension_constant_through_both_phases():
    space = SearchSpace((Dimension("x", "uniform", 0, 1),
                         Dimension("seed", "fixed", value=2023)))
    assert sample_uniform_prior(space, 0)["seed"] == 2023
    history = [Trial(params={"x": i / 30.0, "seed": 2023}, loss=float(i), seed=i)
               for i in range(30)]
    assert suggest_tpe(history, space, 1)["seed"] == 2023


def test_prior_respects_quantized_support():
    rng = np.random.default_rng(12)
    space = esn_search_space()
    counts = {}
    for _ in range(2000):
        size = sample_uniform_prior(space, rng)["reservoir_size"]
        assert size in (50, 100, 150, 200, 250)
        assert isinstance(size, int)
        counts[size] = counts.get(size, 0) + 1
    assert min(counts.values()) > 300  # roughly uniform over 5 points


def test_log_uniform_prior_distribution():
    rng = np.random.default_rng(77)
    space = SearchSpace((Dimension("r", "log-uniform", 1e-7, 0.1),))
    draws = np.array([sample_uniform_prior(space, rng)["r"]
                      for _ in range(10_000)])
    assert draws.min() >= 1e-7 and draws.max() <= 0.1
    lo, hi = math.log(1e-7), math.log(0.1)
    result = stats.kstest(np.log(draws), "uniform", args=(lo, hi - lo))
    assert result.pvalue > 0.01


def test_suggestions_stay_in_bounds():
    space = SearchSpace((
        Dimension("u", "uniform", -2.0, 3.0),
        Dimension("g", "log-uniform", 1e-3, 10.0),
        Dimension("q", "quantized-uniform", 0.0, 1.0, step=0.25),
    ))
    rng = np.random.default_rng(9)
    history = [
        Trial(params=sample_uniform_prior(space, rng), loss=float(rng.uniform()),
              seed=i)
        for i in range(25)
    ]
    for s in range(200):
        params = suggest_tpe(history, space, s)
        assert -2.0 <= params["u"] <= 3.0
        assert 1e-3 <= params["g"] <= 10.0
        assert params["q"] in (0.0, 0.25, 0.5, 0.75, 1.0)


def test_gbdt_space_learning_rate_grid():
    rng = np.random.default_rng(4)
    for _ in range(500):
        params = sample_uniform_prior(gbdt_search_space(), rng)
        scaled = params["learning_rate"] * 100.0
        assert abs(scaled - round(scaled)) < 1e-9
        assert 0.01 <= params["learning_rate"] <= 0.3


def test_tpe_concentrates_on_good_cluster():
    space = SearchSpace((Dimension("x", "uniform", 0.0, 1.0),))
    rng = np.random.default_rng(5)
    history = []
    for i in range(40):
        if i < 10:
            x, loss = float(rng.uniform(0.15, 0.25)), i * 1e-3
        else:
            x, loss = float(rng.uniform(0.0, 1.0)), 1.0 + i * 1e-3
        history.append(Trial(params={"x": x}, loss=loss, seed=i))
    inside = sum(0.1 <= suggest_tpe(history, space, s)["x"] <= 0.3
                 for s in range(100))
    assert inside > 50


def test_identical_losses_degenerate_split():
    space = SearchSpace((Dimension("x", "uniform", 0.0, 1.0),))
    history = [Trial(params={"x": i / 40.0}, loss=1.0, seed=i)
               for i in range(40)]
    params = suggest_tpe(history, space, 3)
    assert 0.0 <= params["x"] <= 1.0


def test_budget_one():
    space = SearchSpace((Dimension("x", "uniform", 0.0, 1.0),))
    best = optimize(lambda p: p["x"], space, 1, seed=8)
    assert best.loss == pytest.approx(best.params["x"])
    with pytest.raises(ValueError):
        optimize(lambda p: p["x"], space, 0, seed=8)


def test_quadratic_convergence_rate():
    space = SearchSpace((Dimension("x", "uniform", 0.0, 1.0),))
    target = 0.3137
    hits = sum(
        abs(optimize(lambda p: (p["x"] - target) ** 2, space, 60,
                     seed=s).params["x"] - target) <= 0.05
        for s in range(50))
    assert hits >= 45


def test_optimize_deterministic(tmp_path):
    space = SearchSpace((Dimension("x", "uniform", 0.0, 1.0),
                         Dimension("g", "log-uniform", 0.1, 10.0)))

    def run(path):
        return optimize(lambda p: (p["x"] - 0.6) ** 2 + abs(math.log(p["g"])),
                        space, 30, seed=17, history_path=path)

    a, b = run(tmp_path / "a.jsonl"), run(tmp_path / "b.jsonl")
    assert a == b
    strip = lambda line: {k: v for k, v in json.loads(line).items()
                          if k != "timestamp"}
    lines_a = [strip(l) for l in (tmp_path / "a.jsonl").open()]
    lines_b = [strip(l) for l in (tmp_path / "b.jsonl").open()]
    assert lines_a == lines_b
    assert len(lines_a) == 30


def test_objective_failure_and_nan_become_inf(tmp_path):
    space = SearchSpace((Dimension("x", "uniform", 0.0, 1.0),))
    calls = []

    def objective(params):
        calls.append(params["x"])
        if len(calls) == 1:
            raise RuntimeError("synthetic failure")
        if len(calls) == 2:
            return float("nan")
        return params["x"]

    path = tmp_path / "t.jsonl"
    best = optimize(objective, space, 10, seed=2, history_path=path)
    assert len(calls) == 10
    assert math.isfinite(best.loss)
    lines = [json.loads(l) for l in path.open()]
    assert lines[0]["loss"] is None
    assert lines[1]["loss"] is None
    recorded = [l["loss"] for l in lines if l["loss"] is not None]
    assert best.loss == min(recorded)
    for line in lines:
        datetime.strptime(line["timestamp"], "%Y-%m-%dT%H:%M:%SZ")
        assert 0.0 <= line["params"]["x"] <= 1.0
        assert isinstance(line["seed"], int)


def test_trial_seeds_distinct_within_run(tmp_path):
    space = SearchSpace((Dimension("x", "uniform", 0.0, 1.0),))
    path = tmp_path / "s.jsonl"
    optimize(lambda p: p["x"], space, 12, seed=100, history_path=path)
    seeds = [json.loads(l)["seed"] for l in path.open()]
    assert len(set(seeds)) == 12
    assert seeds[0] == 100


def test_esn_space_bounds_cover_defaults():
    names = {d.name for d in esn_search_space().dimensions}
    assert {"reservoir_size", "spectral_radius", "leaking_rate", "ridge",
            "input_scaling", "sparsity", "seed"} <= names
