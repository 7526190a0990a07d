import numpy as np
import pytest

from esncast.errors import EsnError
from esncast.esn import (EsnHyperParams, EsnModel, collect_states, fit_readout,
                         fit_series, init_reservoir, load_model, predict_one_step,
                         save_model, update_state)


def _power_iteration_radius(w, iters=800, seed=0):
    # block (orthogonal) power iteration: random real reservoirs usually have
    # a complex-conjugate dominant pair, which defeats single-vector iteration
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(w.shape[0], 2)))
    for _ in range(iters):
        q, _ = np.linalg.qr(w @ q)
    t = q.T @ w @ q
    trace = t[0, 0] + t[1, 1]
    det = t[0, 0] * t[1, 1] - t[0, 1] * t[1, 0]
    disc = trace * trace - 4.0 * det
    if disc >= 0:
        return float(max(abs(trace + np.sqrt(disc)), abs(trace - np.sqrt(disc))) / 2)
    return float(np.sqrt(det))  # conjugate pair: |lambda|^2 = det


def test_same_seed_identical_weights():
    h = EsnHyperParams(reservoir_size=80, seed=11)
    a = init_reservoir(h, 3)
    b = init_reservoir(h, 3)
    assert a.w_x.tobytes() == b.w_x.tobytes()
    assert a.w_in.tobytes() == b.w_in.tobytes()
    assert a.w_fb.tobytes() == b.w_fb.tobytes()


def test_different_seed_different_weights():
    a = init_reservoir(EsnHyperParams(seed=1), 1)
    b = init_reservoir(EsnHyperParams(seed=2), 1)
    assert a.w_x.tobytes() != b.w_x.tobytes()


@pytest.mark.parametrize("rho", [0.5, 0.9, 1.2])
def test_spectral_radius_matches_power_iteration(rho):
    model = init_reservoir(EsnHyperParams(
        reservoir_size=120, spectral_radius=rho, seed=5), 2)
    assert _power_iteration_radius(model.w_x) == pytest.approx(rho, abs=1e-6)
    assert np.max(np.abs(np.linalg.eigvals(model.w_x))) == pytest.approx(
        rho, abs=1e-6)


def test_full_sparsity_keeps_every_entry():
    model = init_reservoir(EsnHyperParams(
        reservoir_size=60, sparsity=1.0, seed=4), 1)
    assert np.count_nonzero(model.w_x) == 60 * 60


def test_sparsity_zeroes_share():
    model = init_reservoir(EsnHyperParams(
        reservoir_size=100, sparsity=0.3, seed=4), 1)
    kept = np.count_nonzero(model.w_x) / 100 ** 2
    assert 0.2 < kept < 0.4


def test_input_scaling_bounds():
    h = EsnHyperParams(reservoir_size=50, input_scaling=0.25, bias_scaling=0.0,
                       seed=9)
    model = init_reservoir(h, 4)
    inputs = model.w_in[:, 1:]
    assert np.max(np.abs(inputs)) <= 0.25
    assert model.w_in[:, 0] == pytest.approx(np.zeros(50))  # bias scaled by 0


def test_update_state_zero_everything_stays_zero():
    model = init_reservoir(EsnHyperParams(reservoir_size=30, seed=3), 1)
    zero = EsnModel(hyper=model.hyper, n_inputs=1,
                    w_in=np.zeros_like(model.w_in),
                    w_x=np.zeros_like(model.w_x),
                    w_fb=np.zeros_like(model.w_fb))
    state = update_state(zero, np.array([0.0]), 0.0, training=False)
    assert state == pytest.approx(np.zeros(30))


def test_update_state_leak_limits():
    h = EsnHyperParams(reservoir_size=40, leaking_rate=1.0, seed=8)
    model = init_reservoir(h, 1)
    x1 = update_state(model, np.array([0.3]), 0.0, training=False)
    pre = np.tanh(model.w_in @ np.array([1.0, 0.3]))  # state was zero
    assert x1 == pytest.approx(pre)  # alpha=1: full replacement

    h2 = EsnHyperParams(reservoir_size=40, leaking_rate=0.5, seed=8)
    m2 = init_reservoir(h2, 1)
    x_half = update_state(m2, np.array([0.3]), 0.0, training=False)
    assert x_half == pytest.approx(0.5 * pre)  # same weights, half blended


def test_collect_states_counts_and_feedback_independence():
    h = EsnHyperParams(reservoir_size=25, feedback_scaling=0.0, seed=6)
    inputs = np.random.default_rng(0).normal(size=(12, 1))
    m = init_reservoir(h, 1)
    phi = collect_states(m, inputs, teacher=np.arange(12.0), warmup=0)
    assert phi.states.shape == (12, 25)
    m2 = init_reservoir(h, 1)
    phi2 = collect_states(m2, inputs, teacher=np.arange(12.0) * -40.0, warmup=0)
    assert phi.states == pytest.approx(phi2.states)  # feedback severed

    m3 = init_reservoir(h, 1)
    one = collect_states(m3, inputs, teacher=np.arange(12.0), warmup=11)
    assert one.states.shape == (1, 25)
    assert one.warmup_discarded == 11


def test_collect_states_warmup_bound():
    m = init_reservoir(EsnHyperParams(reservoir_size=10, seed=1), 1)
    with pytest.raises(ValueError):
        collect_states(m, np.zeros((5, 1)), np.zeros(5), warmup=5)


def test_fit_readout_identity_interpolates():
    y = np.array([2.0, -1.0, 0.5])
    w = fit_readout(np.eye(3), y, ridge=0.0)
    assert w == pytest.approx(y)


def test_fit_readout_huge_ridge_shrinks_to_zero():
    rng = np.random.default_rng(2)
    phi = rng.normal(size=(20, 6))
    w = fit_readout(phi, rng.normal(size=20), ridge=1e12)
    assert np.max(np.abs(w)) < 1e-6


def test_fit_readout_matches_normal_equations_100_instances():
    # brute-force oracle: w = (phi' phi + beta I)^-1 phi' y
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng([17, seed])
        n, k = rng.integers(5, 40), rng.integers(2, 12)
        phi = rng.normal(size=(n, k))
        y = rng.normal(size=n)
        beta = float(rng.uniform(1e-6, 0.5))
        w = fit_readout(phi, y, beta)
        oracle = np.linalg.solve(phi.T @ phi + beta * np.eye(k), phi.T @ y)
        rel = np.linalg.norm(w - oracle) / max(np.linalg.norm(oracle), 1e-300)
        worst = max(worst, rel)
    assert worst <= 1e-8


def test_fit_readout_beta_zero_rank_deficient_raises():
    phi = np.ones((6, 3))
    with pytest.raises(EsnError):
        fit_readout(phi, np.arange(6.0), ridge=0.0)


def test_zero_radius_reservoir_rejected():
    with pytest.raises(EsnError):
        init_reservoir(EsnHyperParams(reservoir_size=5, sparsity=1e-9,
                                      seed=2), 1)


def test_fading_memory_500_steps():
    # echo-state proxy: two copies, different initial states, same drive
    h = EsnHyperParams(reservoir_size=100, spectral_radius=0.9,
                       leaking_rate=0.5, seed=23)
    a = init_reservoir(h, 1)
    b = init_reservoir(h, 1)
    rng = np.random.default_rng(5)
    b.state[:] = rng.normal(size=100)
    drive = rng.normal(size=(500, 1))
    for u in drive:
        update_state(a, u, 0.0, training=False)
        update_state(b, u, 0.0, training=False)
    assert np.linalg.norm(a.state - b.state) < 1e-6


def test_training_noise_only_in_training():
    h = EsnHyperParams(reservoir_size=30, reservoir_noise=0.1,
                       input_noise=0.05, feedback_noise=0.01, seed=31)
    m1 = init_reservoir(h, 1)
    m2 = init_reservoir(h, 1)
    u = np.array([0.2])
    assert update_state(m1, u, 0.0, training=False) == pytest.approx(
        update_state(m2, u, 0.0, training=False))
    # only training calls consume the noise stream, so both models' second
    # (training) step draws the same noise
    n1 = update_state(m1, u, 0.0, training=True)
    m3 = init_reservoir(h, 1)
    update_state(m3, u, 0.0, training=False)
    n3 = update_state(m3, u, 0.0, training=True)
    assert n1 == pytest.approx(n3)
    # consecutive training draws differ (the stream advances)
    m4 = init_reservoir(h, 1)
    m5 = init_reservoir(h, 1)
    a1 = update_state(m4, u, 0.0, training=True)
    update_state(m5, u, 0.0, training=True)
    m4b = init_reservoir(h, 1)
    update_state(m4b, u, 0.0, training=True)
    b2 = update_state(m4b, u, 0.0, training=True)
    second_from_zero = update_state(m5, u, 0.0, training=True)
    assert b2 == pytest.approx(second_from_zero)
    det = update_state(init_reservoir(h, 1), u, 0.0, training=False)
    assert a1 != pytest.approx(det)  # noise actually injected


def test_predict_before_fit_errors():
    m = init_reservoir(EsnHyperParams(reservoir_size=10, seed=1), 1)
    with pytest.raises(EsnError):
        predict_one_step(m, np.array([1.0]))


def test_constant_teacher_learned_within_one_percent():
    h = EsnHyperParams(reservoir_size=60, input_scaling=0.3, bias_scaling=0.2,
                       ridge=1e-8, seed=13)
    m = init_reservoir(h, 1)
    inputs = np.full((80, 1), 0.5)
    targets = np.full(80, 4.0)
    fit_series(m, inputs, targets)
    pred = predict_one_step(m, np.array([0.5]))
    assert pred == pytest.approx(4.0, rel=0.01)


def test_train_predict_pipeline_deterministic():
    h = EsnHyperParams(reservoir_size=50, reservoir_noise=0.01, seed=77)
    rng = np.random.default_rng(4)
    inputs = rng.normal(size=(40, 2))
    targets = rng.normal(size=40)
    outs = []
    for _ in range(2):
        m = init_reservoir(h, 2)
        fit_series(m, inputs, targets)
        outs.append([predict_one_step(m, v) for v in rng.normal(size=(3, 2))])
    rng2 = np.random.default_rng(4)
    rng2.normal(size=(40, 2)); rng2.normal(size=40)
    m = init_reservoir(h, 2)
    fit_series(m, inputs, targets)
    assert outs[0] != outs[1]  # different probe inputs from the shared rng
    m1 = init_reservoir(h, 2)
    m2 = init_reservoir(h, 2)
    fit_series(m1, inputs, targets)
    fit_series(m2, inputs, targets)
    probe = np.array([0.1, -0.2])
    assert predict_one_step(m1, probe) == predict_one_step(m2, probe)


def test_save_load_round_trip(tmp_path):
    h = EsnHyperParams(reservoir_size=30, seed=19)
    m = init_reservoir(h, 2)
    rng = np.random.default_rng(1)
    fit_series(m, rng.normal(size=(30, 2)), rng.normal(size=30))
    path = tmp_path / "model.json"
    save_model(m, path)
    back = load_model(path)
    assert back.hyper == m.hyper
    assert back.w_out == pytest.approx(m.w_out)
    assert back.last_output == m.last_output
    probe = np.array([0.3, 0.7])
    assert predict_one_step(back, probe) == pytest.approx(
        predict_one_step(m, probe))
