"""Mirrored-branch step-preference objectives.

Given a recorded stochastic transition with conditional law N(mu_old,
cov_scale I) where mu_old = U x + B v_old, the current policy's velocity
v is reflected around the recorded one,

    v_plus  = v_old + beta (v - v_old),
    v_minus = v_old - beta (v - v_old),

yielding two candidate means mu_plus/minus = U x + B v_plus/minus. Each
branch is scored by its normalized squared step error

    E_pm = || x_next - mu_pm ||^2 / cov_scale,

and a binary outcome o picks which branch should have been likelier. The
ranking loss is softplus(y (E_plus - E_minus) / 2) with y = 2 o - 1, which
equals the negative log posterior probability of the observed outcome under
the two-branch model; its gradient pushes v toward the outcome-indicated
branch. Everything here is the scalar reference implementation; the trainer
rebuilds the same arithmetic on the autodiff tape and a test pins the two
routes together.
"""

from dataclasses import dataclass

import numpy as np

from . import solver
from .autodiff import softplus_values
from .errors import ContractError, DegenerateCovarianceError


@dataclass(frozen=True)
class MirroredBranches:
    """A velocity pair reflected around v_old with strength beta."""

    v_old: np.ndarray
    v_theta: np.ndarray
    beta: float
    delta_v: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray


def mirror(v_old, v_theta, beta):
    """Build the mirrored branch pair.

    Computed as v_old +/- beta * delta_v so the reflection symmetry
    v_plus - v_old = v_old - v_minus holds to roundoff by construction;
    algebraically identical to (1 -/+ beta) v_old +/- beta v_theta.
    """
    v_old = np.asarray(v_old, dtype=np.float64)
    v_theta = np.asarray(v_theta, dtype=np.float64)
    if v_old.shape != v_theta.shape:
        raise ContractError(f"velocity shapes differ: {v_old.shape} vs {v_theta.shape}")
    beta = float(beta)
    if beta <= 0.0:
        raise ContractError(f"beta must be positive, got {beta}")
    delta_v = v_theta - v_old
    step = beta * delta_v
    return MirroredBranches(
        v_old=v_old,
        v_theta=v_theta,
        beta=beta,
        delta_v=delta_v,
        v_plus=v_old + step,
        v_minus=v_old - step,
    )


@dataclass(frozen=True)
class StepErrors:
    """Branch errors for one transition plus the pieces they decompose into.

    residual e = x_next - mu_old and displacement d = mu_plus - mu_old
    satisfy E_pm = ||e -/+ d||^2 / cov_scale, so
    e_plus - e_minus = -4 <e, d> / cov_scale.
    """

    e_plus: float
    e_minus: float
    residual: np.ndarray
    displacement: np.ndarray
    cov_scale: float


def step_errors(x_next, x, branches, t, delta_t, sigma_t):
    """Score both branches of a recorded transition.

    Means are recomputed from the affine coefficients at (t, delta_t,
    sigma_t); a zero noise level has no transition density to score, so
    sigma_t = 0 raises DegenerateCovarianceError.
    """
    x = np.asarray(x, dtype=np.float64)
    x_next = np.asarray(x_next, dtype=np.float64)
    if x.shape != x_next.shape or x.shape != branches.v_old.shape:
        raise ContractError(
            f"state/velocity shapes differ: {x.shape}, {x_next.shape}, {branches.v_old.shape}"
        )
    cov_scale = float(sigma_t) ** 2 * float(delta_t)
    if cov_scale <= 0.0:
        raise DegenerateCovarianceError(
            f"normalized step errors need sigma_t^2 delta_t > 0, got {cov_scale}"
        )
    u_coef, b_coef = solver.affine_coefficients(t, delta_t, sigma_t)
    mu_old = u_coef * x + b_coef * branches.v_old
    mu_plus = u_coef * x + b_coef * branches.v_plus
    mu_minus = u_coef * x + b_coef * branches.v_minus
    e_plus = float(np.sum((x_next - mu_plus) ** 2)) / cov_scale
    e_minus = float(np.sum((x_next - mu_minus) ** 2)) / cov_scale
    return StepErrors(
        e_plus=e_plus,
        e_minus=e_minus,
        residual=x_next - mu_old,
        displacement=mu_plus - mu_old,
        cov_scale=cov_scale,
    )


def residual_errors(residual, coeff, branches, cov_scale):
    """Branch errors for any target affine in the velocity.

    For a target with recorded residual e (observed minus v_old prediction)
    and sensitivity coefficient c (d target / d v), the branch displacement
    is d = beta c delta_v and E_pm = ||e -/+ d||^2 / cov_scale. Covers the
    stepwise case (c = B) and terminal-target variants (c from chain
    propagation or endpoint prediction).
    """
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != branches.delta_v.shape:
        raise ContractError(
            f"residual shape {residual.shape} != velocity shape {branches.delta_v.shape}"
        )
    cov_scale = float(cov_scale)
    if cov_scale <= 0.0:
        raise DegenerateCovarianceError(f"cov_scale must be positive, got {cov_scale}")
    displacement = branches.beta * float(coeff) * branches.delta_v
    e_plus = float(np.sum((residual - displacement) ** 2)) / cov_scale
    e_minus = float(np.sum((residual + displacement) ** 2)) / cov_scale
    return StepErrors(
        e_plus=e_plus,
        e_minus=e_minus,
        residual=residual,
        displacement=displacement,
        cov_scale=cov_scale,
    )


@dataclass(frozen=True)
class LossBreakdown:
    """One transition's loss with its pieces kept visible for logging."""

    ranking: float
    trust: float
    total: float
    margin: float
    label: float


def ranking_loss(errors, outcome):
    """softplus(y (E_plus - E_minus) / 2) with y = 2 outcome - 1.

    outcome is the success probability in [0, 1]; binary rewards give the
    hard labels +/-1 and shaped rewards interpolate. outcome = 1/2 carries
    no signal: the loss is the constant log 2 with zero gradient.
    """
    outcome = float(outcome)
    if not 0.0 <= outcome <= 1.0:
        raise ContractError(f"outcome must lie in [0, 1], got {outcome}")
    label = 2.0 * outcome - 1.0
    margin = 0.5 * label * (errors.e_plus - errors.e_minus)
    value = float(softplus_values(margin))
    return LossBreakdown(ranking=value, trust=0.0, total=value, margin=margin, label=label)


def trust_penalty(branches, weight):
    """Quadratic drift penalty weight * ||delta_v||^2."""
    weight = float(weight)
    if weight < 0.0:
        raise ContractError(f"trust weight must be nonnegative, got {weight}")
    return weight * float(np.sum(branches.delta_v ** 2))


def total_loss(errors, branches, outcome, trust_weight=0.0):
    """Ranking loss plus the trust penalty, with the split preserved."""
    base = ranking_loss(errors, outcome)
    trust = trust_penalty(branches, trust_weight)
    return LossBreakdown(
        ranking=base.ranking,
        trust=trust,
        total=base.ranking + trust,
        margin=base.margin,
        label=base.label,
    )


def wmse_loss(errors, outcome):
    """Outcome-weighted branch MSE: o E_plus + (1 - o) E_minus.

    Expands to ||e||^2/cov - 2 y <e, d>/cov + ||d||^2/cov, so it shares the
    ranking loss's preference direction but keeps the unbounded quadratic
    pull toward the indicated branch.
    """
    outcome = float(outcome)
    if not 0.0 <= outcome <= 1.0:
        raise ContractError(f"outcome must lie in [0, 1], got {outcome}")
    return outcome * errors.e_plus + (1.0 - outcome) * errors.e_minus


def single_branch_loss(errors, outcome, branch):
    """One branch of the weighted MSE: the positive-only and negative-only
    arms sum to wmse_loss exactly."""
    outcome = float(outcome)
    if not 0.0 <= outcome <= 1.0:
        raise ContractError(f"outcome must lie in [0, 1], got {outcome}")
    if branch == "positive_only":
        return outcome * errors.e_plus
    if branch == "negative_only":
        return (1.0 - outcome) * errors.e_minus
    raise ContractError(f"branch must be positive_only or negative_only, got {branch!r}")
