import numpy as np
import pytest

from stepnft.errors import ContractError, DomainError
from stepnft.rng import stream
from stepnft.solver import (
    GaussianStep,
    SamplerChain,
    SolverSchedule,
    affine_coefficients,
    dump_chain,
    load_chain,
    ode_step,
    replay_chain,
    run_chain,
    sde_step,
    transition_mean,
)


def two_weight_coefficients(t, delta, sigma):
    """Independent route to (U, B): split the mean into its x0/x1 weights."""
    w0 = 1.0 - t + delta
    w1 = (t - delta) - sigma * sigma * delta / (2.0 * t)
    return w0 + w1, -t * w0 + (1.0 - t) * w1


def test_affine_coefficients_reference_points():
    u, b = affine_coefficients(1.0, 0.25, 0.2)
    assert u == pytest.approx(0.995, abs=1e-12)
    assert b == pytest.approx(-0.25, abs=1e-12)
    u, b = affine_coefficients(0.5, 0.25, 0.2)
    assert u == pytest.approx(0.99, abs=1e-12)
    assert b == pytest.approx(-0.255, abs=1e-12)


def test_affine_coefficients_match_two_weight_route():
    gen = stream(0, "verify", 0)
    for _ in range(10000):
        t = gen.uniform(1e-3, 1.0)
        delta = gen.uniform(1e-4, t)
        sigma = gen.uniform(0.0, 1.5)
        u, b = affine_coefficients(t, delta, sigma)
        u2, b2 = two_weight_coefficients(t, delta, sigma)
        assert abs(u - u2) < 1e-12
        assert abs(b - b2) < 1e-12


def test_affine_coefficients_zero_noise_is_euler():
    u, b = affine_coefficients(0.7, 0.25, 0.0)
    assert u == 1.0
    assert b == -0.25


def test_affine_coefficients_domain_errors():
    with pytest.raises(DomainError):
        affine_coefficients(0.0, 0.1, 0.2)
    with pytest.raises(DomainError):
        affine_coefficients(-0.5, 0.1, 0.2)
    with pytest.raises(DomainError):
        affine_coefficients(0.5, 0.0, 0.2)
    with pytest.raises(DomainError):
        affine_coefficients(0.25, 0.5, 0.2)  # step crosses zero
    with pytest.raises(DomainError):
        affine_coefficients(0.5, 0.1, -0.1)


def test_ode_step_reference_point():
    out = ode_step(np.array([1.0, 1.0]), np.array([2.0, 0.0]), 0.25)
    np.testing.assert_allclose(out, [0.5, 1.0], rtol=0, atol=0)
    with pytest.raises(ContractError):
        ode_step(np.zeros(2), np.zeros(3), 0.25)
    with pytest.raises(DomainError):
        ode_step(np.zeros(2), np.zeros(2), 0.0)


def test_sde_step_reference_point():
    x = np.array([1.0, 1.0])
    v = np.array([2.0, 0.0])
    x_next, law = sde_step(x, v, 1.0, 0.25, 0.2, np.zeros(2))
    assert isinstance(law, GaussianStep)
    np.testing.assert_allclose(law.mean, [0.495, 0.995], atol=1e-12)
    np.testing.assert_allclose(x_next, law.mean, atol=0)
    assert law.cov_scale == pytest.approx(0.2 ** 2 * 0.25, abs=1e-15)
    x_next, _ = sde_step(x, v, 1.0, 0.25, 0.2, np.array([1.0, 0.0]))
    np.testing.assert_allclose(x_next, [0.595, 0.995], atol=1e-12)


def test_sde_step_matches_termwise_form():
    # direct evaluation: x + [v + (sigma^2/2t)(x + (1-t)v)] (-delta) + sigma sqrt(delta) eps
    gen = stream(1, "verify", 1)
    for _ in range(2000):
        dim = int(gen.integers(1, 6))
        t = gen.uniform(1e-2, 1.0)
        delta = gen.uniform(1e-3, t)
        sigma = gen.uniform(0.0, 1.0)
        x = gen.standard_normal(dim)
        v = gen.standard_normal(dim)
        eps = gen.standard_normal(dim)
        got, _ = sde_step(x, v, t, delta, sigma, eps)
        score = (sigma ** 2 / (2.0 * t)) * (x + (1.0 - t) * v)
        want = x + (v + score) * (-delta) + sigma * np.sqrt(delta) * eps
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_sde_step_degenerates_to_ode_bitwise():
    gen = stream(2, "verify", 2)
    x = gen.standard_normal(4)
    v = gen.standard_normal(4)
    sde, _ = sde_step(x, v, 0.5, 0.25, 0.0, np.zeros(4))
    ode = ode_step(x, v, 0.25)
    assert np.array_equal(sde, ode)


def test_sde_step_shape_checks():
    with pytest.raises(ContractError):
        sde_step(np.zeros(2), np.zeros(3), 0.5, 0.1, 0.2, np.zeros(2))
    with pytest.raises(ContractError):
        sde_step(np.zeros(2), np.zeros(2), 0.5, 0.1, 0.2, np.zeros(3))


def test_schedule_validation():
    with pytest.raises(ContractError):
        SolverSchedule(times=np.array([1.0, 0.5]), noise_levels=np.array([0.2, 0.2]))
    with pytest.raises(ContractError):
        SolverSchedule(times=np.array([0.9, 0.5, 0.0]), noise_levels=np.array([0.2, 0.2]))
    with pytest.raises(ContractError):
        SolverSchedule(times=np.array([1.0, 0.5, 0.1]), noise_levels=np.array([0.2, 0.2]))
    with pytest.raises(ContractError):
        SolverSchedule(times=np.array([1.0, 0.5, 0.5, 0.0]),
                       noise_levels=np.array([0.2, 0.2, 0.2]))
    with pytest.raises(ContractError):
        SolverSchedule(times=np.array([1.0, 0.5, 0.0]), noise_levels=np.array([0.2, -0.2]))
    with pytest.raises(ContractError):
        SolverSchedule.uniform(0, 0.2)


def test_uniform_schedule_grid():
    sched = SolverSchedule.uniform(4, 0.2)
    np.testing.assert_allclose(sched.times, [1.0, 0.75, 0.5, 0.25, 0.0], atol=0)
    assert sched.times[0] == 1.0 and sched.times[-1] == 0.0
    assert sched.n_steps == 4
    t, delta, sigma = sched.step_params(3)
    assert t == 0.25 and delta == 0.25 and sigma == 0.2
    with pytest.raises(ContractError):
        sched.step_params(4)


def constant_field(v0):
    def fn(x, t, context, observation):
        return v0

    return fn


def test_ode_chain_constant_field_closed_form():
    # deltas sum to 1, so the endpoint is x_start - v0 exactly
    sched = SolverSchedule.uniform(4, 0.0)
    v0 = np.array([0.3, -1.2])
    x1 = np.array([0.5, 0.5])
    chain = run_chain(constant_field(v0), sched, x1, np.zeros(0), np.zeros(0), "ode")
    np.testing.assert_allclose(chain.final_state, x1 - v0, atol=1e-15)
    assert chain.states.shape == (5, 2)
    assert np.all(chain.noise == 0.0)


def test_ode_chain_linear_field_matches_matrix_recursion():
    # field v(x, t) = a(t) x + c(t); independent scalar recursion as the oracle
    def a_coef(t):
        return (t - (1.0 - t) * 0.25) / (t * t + (1.0 - t) ** 2 * 0.25)

    def lin_field(x, t, context, observation):
        return a_coef(t) * x + np.array([0.1, -0.2]) * t

    sched = SolverSchedule.uniform(8, 0.0)
    x1 = np.array([0.7, -0.4])
    chain = run_chain(lin_field, sched, x1, np.zeros(0), np.zeros(0), "ode")
    x = x1.copy()
    for j in range(8):
        t = sched.times[j]
        delta = t - sched.times[j + 1]
        x = x - (a_coef(t) * x + np.array([0.1, -0.2]) * t) * delta
    np.testing.assert_allclose(chain.final_state, x, atol=1e-14)


def test_sde_chain_replay_is_bit_exact():
    sched = SolverSchedule.uniform(6, 0.3)
    gen = stream(3, "episode", 0, 0)
    x1 = gen.standard_normal(2)
    chain = run_chain(
        constant_field(np.array([0.2, 0.1])), sched, x1, np.zeros(0), np.zeros(0),
        "sde", noise_stream=gen,
    )
    assert np.array_equal(replay_chain(chain), chain.states)


def test_sde_chain_same_stream_reproduces():
    sched = SolverSchedule.uniform(4, 0.2)
    field = constant_field(np.array([0.5, -0.5]))

    def make():
        gen = stream(4, "episode", 1, 2)
        x1 = gen.standard_normal(2)
        return run_chain(field, sched, x1, np.zeros(0), np.zeros(0), "sde",
                         noise_stream=gen)

    a, b = make(), make()
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.noise, b.noise)


def test_last_step_noise_flag():
    sched = SolverSchedule.uniform(4, 0.2)
    field = constant_field(np.array([0.0, 0.0]))
    gen = stream(5, "episode", 0, 0)
    quiet = run_chain(field, sched, np.ones(2), np.zeros(0), np.zeros(0), "sde",
                      noise_stream=gen)
    assert np.all(quiet.noise[-1] == 0.0)
    assert np.any(quiet.noise[:-1] != 0.0)
    gen = stream(5, "episode", 0, 0)
    loud = run_chain(field, sched, np.ones(2), np.zeros(0), np.zeros(0), "sde",
                     noise_stream=gen, last_step_noise=True)
    assert np.any(loud.noise[-1] != 0.0)


def test_chain_visits_left_endpoints():
    seen = []

    def probe(x, t, context, observation):
        seen.append(t)
        return np.zeros(2)

    sched = SolverSchedule.uniform(4, 0.0)
    run_chain(probe, sched, np.zeros(2), np.zeros(0), np.zeros(0), "ode")
    np.testing.assert_allclose(seen, sched.times[:-1], atol=0)


def test_run_chain_contract_errors():
    sched = SolverSchedule.uniform(2, 0.2)
    with pytest.raises(ContractError):
        run_chain(constant_field(np.zeros(2)), sched, np.zeros(2), np.zeros(0),
                  np.zeros(0), "rk4")
    with pytest.raises(ContractError):
        run_chain(constant_field(np.zeros(2)), sched, np.zeros(2), np.zeros(0),
                  np.zeros(0), "sde")  # missing stream
    with pytest.raises(ContractError):
        run_chain(constant_field(np.zeros(3)), sched, np.zeros(2), np.zeros(0),
                  np.zeros(0), "ode")  # velocity dim mismatch


def test_chain_dump_round_trip(tmp_path):
    sched = SolverSchedule.uniform(3, 0.25)
    gen = stream(6, "episode", 0, 0)
    chain = run_chain(
        constant_field(np.array([0.123456789012345, -1.0])), sched,
        gen.standard_normal(2), np.zeros(0), np.zeros(0), "sde", noise_stream=gen,
    )
    path = tmp_path / "chain.txt"
    dump_chain(chain, path, seed=6)
    loaded = load_chain(path)
    assert loaded.mode == chain.mode
    assert np.array_equal(loaded.states, chain.states)
    assert np.array_equal(loaded.velocities, chain.velocities)
    assert np.array_equal(loaded.noise, chain.noise)
    np.testing.assert_allclose(loaded.schedule.times, chain.schedule.times, atol=0)
