import numpy as np
import pytest

from stepnft.errors import ContractError, DegenerateCovarianceError
from stepnft.objective import (
    LossBreakdown,
    mirror,
    ranking_loss,
    residual_errors,
    single_branch_loss,
    step_errors,
    total_loss,
    trust_penalty,
    wmse_loss,
)
from stepnft.rng import stream
from stepnft.solver import affine_coefficients

LOG2 = float(np.log(2.0))
SOFTPLUS_NEG1 = 0.3132616875182228
SOFTPLUS_POS1 = 1.3132616875182228


def random_transition(gen, dim=3):
    t = gen.uniform(5e-2, 1.0)
    delta = gen.uniform(1e-3, t)
    sigma = gen.uniform(0.05, 1.0)
    x = gen.standard_normal(dim)
    v_old = gen.standard_normal(dim)
    v_theta = gen.standard_normal(dim)
    x_next = gen.standard_normal(dim)
    return x, x_next, v_old, v_theta, t, delta, sigma


def test_mirror_reference_point():
    branches = mirror(np.array([0.0, 0.0]), np.array([1.0, 2.0]), 0.5)
    np.testing.assert_allclose(branches.v_plus, [0.5, 1.0], atol=0)
    np.testing.assert_allclose(branches.v_minus, [-0.5, -1.0], atol=0)
    np.testing.assert_allclose(branches.delta_v, [1.0, 2.0], atol=0)


def test_mirror_symmetry_and_affine_form():
    gen = stream(10, "verify", 0)
    for _ in range(2000):
        dim = int(gen.integers(1, 5))
        v_old = gen.standard_normal(dim)
        v_theta = gen.standard_normal(dim)
        beta = gen.uniform(0.05, 2.0)
        br = mirror(v_old, v_theta, beta)
        # reflection symmetry holds to roundoff by construction
        np.testing.assert_allclose(br.v_plus - v_old, v_old - br.v_minus, atol=1e-15)
        np.testing.assert_allclose(br.v_plus - v_old, beta * br.delta_v, atol=1e-15)
        # expanded affine form agrees
        np.testing.assert_allclose(br.v_plus, (1 - beta) * v_old + beta * v_theta,
                                   atol=1e-12)
        np.testing.assert_allclose(br.v_minus, (1 + beta) * v_old - beta * v_theta,
                                   atol=1e-12)


def test_mirror_unit_beta_recovers_current_velocity():
    v_old = np.array([0.3, -0.7])
    v_theta = np.array([1.1, 0.2])
    br = mirror(v_old, v_theta, 1.0)
    np.testing.assert_allclose(br.v_plus, v_theta, rtol=1e-15)
    np.testing.assert_allclose(br.v_minus, 2.0 * v_old - v_theta, rtol=1e-15)


def test_mirror_contract_errors():
    with pytest.raises(ContractError):
        mirror(np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(ContractError):
        mirror(np.zeros(2), np.zeros(2), 0.0)
    with pytest.raises(ContractError):
        mirror(np.zeros(2), np.zeros(2), -1.0)


def test_residual_errors_reference_point():
    # e = (1, 0), d = (0.5, 0.5), unit covariance:
    # E_plus = 0.5, E_minus = 2.5, difference -2 = -4 <e, d>
    br = mirror(np.zeros(2), np.array([0.5, 0.5]), 1.0)
    errors = residual_errors(np.array([1.0, 0.0]), 1.0, br, 1.0)
    assert errors.e_plus == pytest.approx(0.5, abs=1e-15)
    assert errors.e_minus == pytest.approx(2.5, abs=1e-15)
    assert errors.e_plus - errors.e_minus == pytest.approx(-2.0, abs=1e-15)


def test_error_difference_identity():
    gen = stream(11, "verify", 1)
    for _ in range(2000):
        x, x_next, v_old, v_theta, t, delta, sigma = random_transition(gen)
        beta = gen.uniform(0.1, 1.5)
        br = mirror(v_old, v_theta, beta)
        errors = step_errors(x_next, x, br, t, delta, sigma)
        inner = np.dot(errors.residual, errors.displacement) / errors.cov_scale
        diff = errors.e_plus - errors.e_minus
        assert diff == pytest.approx(-4.0 * inner, rel=1e-9, abs=1e-9)


def test_step_errors_displacement_matches_closed_form():
    gen = stream(12, "verify", 2)
    for _ in range(500):
        x, x_next, v_old, v_theta, t, delta, sigma = random_transition(gen)
        br = mirror(v_old, v_theta, 0.7)
        errors = step_errors(x_next, x, br, t, delta, sigma)
        _, b_coef = affine_coefficients(t, delta, sigma)
        np.testing.assert_allclose(errors.displacement, 0.7 * b_coef * br.delta_v,
                                   atol=1e-12)


def test_step_errors_agree_with_residual_route():
    gen = stream(13, "verify", 3)
    for _ in range(500):
        x, x_next, v_old, v_theta, t, delta, sigma = random_transition(gen)
        br = mirror(v_old, v_theta, 1.0)
        direct = step_errors(x_next, x, br, t, delta, sigma)
        _, b_coef = affine_coefficients(t, delta, sigma)
        via_residual = residual_errors(direct.residual, b_coef, br, direct.cov_scale)
        assert direct.e_plus == pytest.approx(via_residual.e_plus, rel=1e-9, abs=1e-12)
        assert direct.e_minus == pytest.approx(via_residual.e_minus, rel=1e-9, abs=1e-12)


def test_step_errors_degenerate_covariance():
    br = mirror(np.zeros(2), np.ones(2), 1.0)
    with pytest.raises(DegenerateCovarianceError):
        step_errors(np.zeros(2), np.zeros(2), br, 0.5, 0.25, 0.0)
    with pytest.raises(DegenerateCovarianceError):
        residual_errors(np.zeros(2), -0.25, br, 0.0)


def test_step_errors_shape_checks():
    br = mirror(np.zeros(2), np.ones(2), 1.0)
    with pytest.raises(ContractError):
        step_errors(np.zeros(3), np.zeros(2), br, 0.5, 0.25, 0.2)
    with pytest.raises(ContractError):
        residual_errors(np.zeros(3), -0.25, br, 0.01)


def make_margin_errors(margin):
    """Branch errors engineered so the +1-label margin equals the given value."""
    br = mirror(np.zeros(2), np.array([1.0, 2.0]), 0.5)  # d = (0.5, 1.0)
    # margin = -2 <e, d> / cov with cov = 1
    e = np.array([-margin / 2.0 * 0.4, -margin / 2.0 * 0.8])  # <e, d> = -margin/2
    return residual_errors(e, 1.0, br, 1.0), br


def test_ranking_loss_reference_points():
    errors, _ = make_margin_errors(0.0)
    out = ranking_loss(errors, 1.0)
    assert isinstance(out, LossBreakdown)
    assert out.total == pytest.approx(LOG2, abs=1e-12)
    assert out.margin == pytest.approx(0.0, abs=1e-12)

    errors, _ = make_margin_errors(-1.0)
    out = ranking_loss(errors, 1.0)
    assert out.margin == pytest.approx(-1.0, abs=1e-12)
    assert out.total == pytest.approx(SOFTPLUS_NEG1, abs=1e-9)

    out = ranking_loss(errors, 0.0)  # flipped label negates the margin
    assert out.margin == pytest.approx(1.0, abs=1e-12)
    assert out.total == pytest.approx(SOFTPLUS_POS1, abs=1e-9)


def test_ranking_loss_soft_label_midpoint():
    errors, _ = make_margin_errors(3.7)
    out = ranking_loss(errors, 0.5)
    assert out.label == 0.0
    assert out.margin == 0.0
    assert out.total == pytest.approx(LOG2, abs=1e-15)


def test_ranking_loss_extreme_margin_is_finite():
    errors, _ = make_margin_errors(1e8)
    with np.errstate(over="raise", invalid="raise"):
        out = ranking_loss(errors, 1.0)
    assert np.isfinite(out.total)
    assert out.total == pytest.approx(out.margin, rel=1e-12)


def test_ranking_loss_outcome_domain():
    errors, _ = make_margin_errors(0.0)
    with pytest.raises(ContractError):
        ranking_loss(errors, 1.5)
    with pytest.raises(ContractError):
        ranking_loss(errors, -0.1)


def test_total_loss_reference_point():
    # softplus(-1) + 0.1 * ||delta_v||^2 with ||delta_v||^2 = 5
    errors, br = make_margin_errors(-1.0)
    out = total_loss(errors, br, 1.0, trust_weight=0.1)
    assert out.trust == pytest.approx(0.5, abs=1e-15)
    assert out.total == pytest.approx(SOFTPLUS_NEG1 + 0.5, abs=1e-9)
    assert out.ranking == pytest.approx(SOFTPLUS_NEG1, abs=1e-9)
    # zero weight leaves the ranking loss alone
    out = total_loss(errors, br, 1.0, trust_weight=0.0)
    assert out.trust == 0.0
    assert out.total == out.ranking


def test_trust_penalty_domain():
    _, br = make_margin_errors(0.0)
    with pytest.raises(ContractError):
        trust_penalty(br, -0.5)


def test_wmse_decomposition_identity():
    # o E+ + (1-o) E- = ||e||^2/c - 2 y <e,d>/c + ||d||^2/c with y = 2o - 1
    gen = stream(14, "verify", 4)
    for _ in range(2000):
        x, x_next, v_old, v_theta, t, delta, sigma = random_transition(gen)
        br = mirror(v_old, v_theta, gen.uniform(0.2, 1.2))
        errors = step_errors(x_next, x, br, t, delta, sigma)
        outcome = gen.uniform(0.0, 1.0)
        label = 2.0 * outcome - 1.0
        got = wmse_loss(errors, outcome)
        c = errors.cov_scale
        want = (
            np.sum(errors.residual ** 2) / c
            - 2.0 * label * np.dot(errors.residual, errors.displacement) / c
            + np.sum(errors.displacement ** 2) / c
        )
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_wmse_constant_term_is_outcome_free():
    gen = stream(15, "verify", 5)
    x, x_next, v_old, v_theta, t, delta, sigma = random_transition(gen)
    br = mirror(v_old, v_theta, 1.0)
    errors = step_errors(x_next, x, br, t, delta, sigma)
    base = np.sum(errors.residual ** 2) / errors.cov_scale
    quad = np.sum(errors.displacement ** 2) / errors.cov_scale
    for outcome in (0.0, 0.25, 0.5, 1.0):
        label = 2.0 * outcome - 1.0
        linear = -2.0 * label * np.dot(errors.residual, errors.displacement) / errors.cov_scale
        assert wmse_loss(errors, outcome) == pytest.approx(base + linear + quad, rel=1e-9)


def test_single_branches_sum_to_wmse():
    gen = stream(16, "verify", 6)
    for _ in range(200):
        x, x_next, v_old, v_theta, t, delta, sigma = random_transition(gen)
        br = mirror(v_old, v_theta, 1.0)
        errors = step_errors(x_next, x, br, t, delta, sigma)
        outcome = gen.uniform(0.0, 1.0)
        pos = single_branch_loss(errors, outcome, "positive_only")
        neg = single_branch_loss(errors, outcome, "negative_only")
        assert pos + neg == pytest.approx(wmse_loss(errors, outcome), rel=1e-12)
        assert pos == pytest.approx(outcome * errors.e_plus, rel=1e-12)
        assert neg == pytest.approx((1.0 - outcome) * errors.e_minus, rel=1e-12)


def test_single_branch_rejects_unknown_branch():
    errors, _ = make_margin_errors(0.0)
    with pytest.raises(ContractError):
        single_branch_loss(errors, 0.5, "both")
    with pytest.raises(ContractError):
        wmse_loss(errors, 1.2)
