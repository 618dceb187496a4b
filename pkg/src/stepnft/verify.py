"""Executable certification of the method's supporting identities.

Each check recomputes one algebraic or statistical claim two independent
ways and reports the worst observed discrepancy against a pinned tolerance:

  - affine coefficients: closed form vs the two-weight combination
  - error difference: branch error gap vs the inner-product form
  - log-likelihood ratio: branch error gap vs explicit Gaussian densities
  - wmse decomposition: weighted branch errors vs the expanded quadratic
  - gradient form: autodiff gradient vs the closed-form direction
  - small-step alignment: Monte-Carlo mean update vs the oracle's mean gap
  - bayes monotonicity: the posterior success law vs direct Bayes evaluation

Identity checks use absolute/relative deviations at 1e-12 (1e-10 where log
evaluation accumulates rounding). Statistical checks normalize every
sub-criterion by its allowance and report the worst as the discrepancy, so
the pass rule is uniformly "discrepancy <= tolerance".
"""

import math
from dataclasses import dataclass

import numpy as np

from . import objective, solver
from .autodiff import sigmoid_values, tsum, wrap
from .errors import ContractError, DomainError
from .policy import Architecture, backward, init_field
from .rng import stream
from .training import TrainConfig, minibatch_loss

REPORT_COLUMNS = ("name", "status", "discrepancy", "tolerance", "samples", "seed")


@dataclass(frozen=True)
class CheckReport:
    name: str
    status: str  # pass, fail, or skipped
    discrepancy: float
    tolerance: float
    samples: int
    seed: int
    detail: str = ""

    def __post_init__(self):
        if self.status not in ("pass", "fail", "skipped"):
            raise ContractError(f"unknown status {self.status!r}")

    @property
    def passed(self):
        return self.status == "pass"


def _report(name, discrepancy, tolerance, samples, seed, detail=""):
    status = "pass" if discrepancy <= tolerance else "fail"
    return CheckReport(name, status, float(discrepancy), float(tolerance),
                       int(samples), int(seed), detail)


def check_affine_coefficients(trials, seed):
    """Closed-form U, B vs the two-weight path w0 = 1-t+delta,
    w1 = (t-delta) - sigma^2 delta / (2t); U = w0+w1, B = -t w0 + (1-t) w1.
    Every seventh trial sits on the delta = t boundary and every tenth turns
    noise off, where U = 1 and B = -delta must hold exactly."""
    gen = stream(seed, "verify", 101)
    worst = 0.0
    for trial in range(trials):
        t = gen.uniform(1e-3, 1.0)
        delta = t if trial % 7 == 3 else gen.uniform(1e-6, t)
        sigma = 0.0 if trial % 10 == 9 else gen.uniform(0.0, 2.0)
        u_coef, b_coef = solver.affine_coefficients(t, delta, sigma)
        w0 = 1.0 - t + delta
        w1 = (t - delta) - sigma * sigma * delta / (2.0 * t)
        u_two = w0 + w1
        b_two = -t * w0 + (1.0 - t) * w1
        worst = max(worst, abs(u_coef - u_two), abs(b_coef - b_two))
        if sigma == 0.0 and (u_coef != 1.0 or b_coef != -delta):
            worst = max(worst, 1.0)
    return _report("affine_coefficients", worst, 1e-12, trials, seed)


def _log_gaussian(x, mean, cov_scale):
    d = x.size
    gap = x - mean
    return -0.5 * d * math.log(2.0 * math.pi * cov_scale) \
        - float(np.sum(gap * gap)) / (2.0 * cov_scale)


def check_log_likelihood_ratio(trials, seed):
    """Branch error gap vs explicit normalized Gaussian log-densities:
    log p+ - log p- must equal -(E+ - E-)/2. Branches come through the
    production mirror/step-error route."""
    gen = stream(seed, "verify", 102)
    worst = 0.0
    for trial in range(trials):
        dim = int(gen.integers(1, 7))
        t = gen.uniform(0.05, 1.0)
        delta = gen.uniform(1e-4, t)
        sigma = gen.uniform(0.05, 1.5)
        x = gen.standard_normal(dim)
        v_old = gen.standard_normal(dim)
        v_new = v_old + 0.5 * gen.standard_normal(dim)
        beta = gen.uniform(0.25, 2.0)
        branches = objective.mirror(v_old, v_new, beta)
        x_next = gen.standard_normal(dim)
        errors = objective.step_errors(x_next, x, branches, t, delta, sigma)
        mu_plus = solver.transition_mean(x, branches.v_plus, t, delta, sigma)
        mu_minus = solver.transition_mean(x, branches.v_minus, t, delta, sigma)
        cov_scale = sigma * sigma * delta
        ratio = _log_gaussian(x_next, mu_plus, cov_scale) \
            - _log_gaussian(x_next, mu_minus, cov_scale)
        # deviation relative to the branch error scale: that is the operand
        # magnitude the two paths cancel, so roundoff is proportional to it
        scale = max(1.0, errors.e_plus + errors.e_minus)
        worst = max(worst,
                    abs(ratio + 0.5 * (errors.e_plus - errors.e_minus)) / scale)
        if trial % 11 == 5:
            same = objective.mirror(v_old, v_old, beta)
            errors_same = objective.step_errors(x_next, x, same, t, delta, sigma)
            worst = max(worst, abs(errors_same.e_plus - errors_same.e_minus))
    return _report("log_likelihood_ratio", worst, 1e-10, trials, seed)


def _branches_with_displacement(displacement):
    # mirror of v_old = 0 around v = displacement at beta 1, coeff 1 gives
    # branch displacement exactly equal to the requested vector
    return objective.mirror(np.zeros_like(displacement), displacement, 1.0)


def check_error_difference(trials, seed):
    """E+ - E- vs the inner-product form -4 <e, d> / cov on random
    residual/displacement pairs."""
    gen = stream(seed, "verify", 103)
    worst = 0.0
    for trial in range(trials):
        dim = int(gen.integers(1, 9))
        e = gen.standard_normal(dim) * gen.uniform(0.1, 3.0)
        d = gen.standard_normal(dim) * gen.uniform(0.0, 2.0)
        if trial % 9 == 4:
            d = np.zeros(dim)
        cov_scale = gen.uniform(1e-3, 4.0)
        errors = objective.residual_errors(e, 1.0, _branches_with_displacement(d),
                                           cov_scale)
        lhs = errors.e_plus - errors.e_minus
        rhs = -4.0 * float(np.dot(e, d)) / cov_scale
        scale = max(1.0, errors.e_plus + errors.e_minus)
        worst = max(worst, abs(lhs - rhs) / scale)
    return _report("error_difference", worst, 1e-12, trials, seed)


def check_wmse_decomposition(trials, seed):
    """r E+ + (1-r) E- vs ||e||^2/c - 2 y <e,d>/c + ||d||^2/c."""
    gen = stream(seed, "verify", 104)
    worst = 0.0
    for trial in range(trials):
        dim = int(gen.integers(1, 9))
        e = gen.standard_normal(dim)
        d = np.zeros(dim) if trial % 8 == 2 else gen.standard_normal(dim)
        cov_scale = gen.uniform(1e-3, 4.0)
        r = 0.5 if trial % 5 == 1 else gen.uniform(0.0, 1.0)
        errors = objective.residual_errors(e, 1.0, _branches_with_displacement(d),
                                           cov_scale)
        lhs = objective.wmse_loss(errors, r)
        y = 2.0 * r - 1.0
        rhs = (float(np.dot(e, e)) - 2.0 * y * float(np.dot(e, d))
               + float(np.dot(d, d))) / cov_scale
        scale = max(1.0, errors.e_plus + errors.e_minus)
        worst = max(worst, abs(lhs - rhs) / scale)
    return _report("wmse_decomposition", worst, 1e-12, trials, seed)


def _single_record_columns(x, x_next, v_old, t, delta, sigma, context, reward):
    return {
        "x": x[None, :],
        "x_next": x_next[None, :],
        "v_old": v_old[None, :],
        "t": np.array([t]),
        "delta_t": np.array([delta]),
        "sigma_t": np.array([sigma]),
        "context": context[None, :],
        "observation": np.zeros((1, 0)),
        "reward": np.array([reward]),
        "terminal_state": np.zeros((1, x.size)),
        "terminal_residual": np.zeros((1, x.size)),
        "terminal_coeff": np.array([0.0]),
        "terminal_var": np.array([0.0]),
    }


def _functional_gradient(field, x, t, context, observation, weights):
    """(dv/dtheta)^T weights via one tape pass through <weights, v>."""
    v = field.tape_forward_batch(x[None, :], np.array([t]), context[None, :],
                                 observation[None, :])
    tape = backward(field, tsum(v * wrap(weights[None, :])))
    return tape.grad


def check_gradient_form(trials, seed):
    """Autodiff gradient of the ranking step loss vs the closed form
    sigma(z) y (dv/dtheta)^T B e / cov: cosine of the descent direction
    above 1 - 1e-8 and the per-parameter ratio constant at -2 beta within
    1e-6. A neutral-outcome instance must produce an exactly zero gradient.
    """
    gen = stream(seed, "verify", 105)
    worst = 0.0
    dim = 2
    for trial in range(trials):
        hidden = (int(gen.integers(3, 7)),)
        arch = Architecture.for_policy(x_dim=dim, context_dim=dim,
                                       observation_dim=0, hidden=hidden)
        field = init_field(arch, int(gen.integers(0, 2 ** 31)))
        x = gen.standard_normal(dim)
        context = gen.uniform(-1.0, 1.0, dim)
        t = gen.uniform(0.1, 1.0)
        delta = gen.uniform(1e-3, t)
        sigma = gen.uniform(0.1, 1.0)
        beta = gen.uniform(0.5, 2.0)
        v_old = gen.standard_normal(dim)
        u_coef, b_coef = solver.affine_coefficients(t, delta, sigma)
        cov_scale = sigma * sigma * delta
        x_next = u_coef * x + b_coef * v_old \
            + sigma * math.sqrt(delta) * gen.standard_normal(dim)
        reward = float(gen.integers(0, 2))
        config = TrainConfig(sigma=sigma, beta=beta, n_steps=4)
        cols = _single_record_columns(x, x_next, v_old, t, delta, sigma,
                                      context, reward)
        loss, _ = minibatch_loss(field, cols, np.array([0]), config)
        grad = backward(field, loss).grad
        v_new = field.forward(x, t, context, np.zeros(0))
        branches = objective.mirror(v_old, v_new, beta)
        errors = objective.step_errors(x_next, x, branches, t, delta, sigma)
        y = 2.0 * reward - 1.0
        z = 0.5 * y * (errors.e_plus - errors.e_minus)
        sig_z = float(sigmoid_values(z))
        e = x_next - solver.transition_mean(x, v_old, t, delta, sigma)
        closed = sig_z * y * _functional_gradient(
            field, x, t, context, np.zeros(0), b_coef * e / cov_scale
        )
        norm_grad = float(np.linalg.norm(grad))
        norm_closed = float(np.linalg.norm(closed))
        if norm_grad == 0.0 and norm_closed == 0.0:
            continue
        if norm_grad == 0.0 or norm_closed == 0.0:
            worst = max(worst, float("inf"))
            continue
        cos = float(np.dot(-grad, closed) / (norm_grad * norm_closed))
        worst = max(worst, (1.0 - cos) / 1e-8)
        mask = np.abs(closed) > 1e-9 * np.max(np.abs(closed))
        ratios = grad[mask] / closed[mask]
        ratio_dev = float(np.max(np.abs(ratios + 2.0 * beta))) / (2.0 * beta)
        worst = max(worst, ratio_dev / 1e-6)
    # neutral outcome: the ranking margin carries weight zero, so the
    # gradient vanishes identically
    arch = Architecture.for_policy(x_dim=dim, context_dim=dim,
                                   observation_dim=0, hidden=(4,))
    field = init_field(arch, 1)
    cols = _single_record_columns(
        np.ones(dim), np.ones(dim), np.ones(dim), 0.5, 0.25, 0.5,
        np.zeros(dim), 0.5,
    )
    loss, _ = minibatch_loss(field, cols, np.array([0]),
                             TrainConfig(sigma=0.5, n_steps=4))
    neutral_grad = backward(field, loss).grad
    if np.any(neutral_grad != 0.0):
        worst = max(worst, float("inf"))
    return _report("gradient_form", worst, 1.0, trials, seed,
                   detail="discrepancy normalized by per-criterion allowance")


@dataclass(frozen=True)
class SyntheticOracle:
    """Halfspace success predicate over the next state: <weight, x> > threshold.

    Conditional split quantities (success probability alpha, conditional
    means mu_plus / mu_minus of the next state, their gap delta_mu) are
    computed by dense trapezoid integration of the standard normal along
    the weight direction, never by closed forms, so they stand independent
    of the code under test. The mixture identity
    alpha mu_plus + (1 - alpha) mu_minus = mu_old is reported as a
    self-consistency gap.
    """

    weight: np.ndarray
    threshold: float
    grid_points: int = 800001

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=np.float64)
        if weight.ndim != 1 or weight.size < 1:
            raise ContractError("oracle weight must be a nonempty vector")
        norm = float(np.linalg.norm(weight))
        if norm == 0.0:
            raise ContractError("oracle weight must be nonzero")
        object.__setattr__(self, "weight", weight)

    def reward(self, x_rows):
        return (np.asarray(x_rows) @ self.weight > self.threshold).astype(np.float64)

    def split(self, mu_old, scale):
        """(alpha, mu_plus, mu_minus, mixture_gap) for x ~ N(mu_old, scale^2 I)."""
        if scale <= 0.0:
            raise DomainError(f"scale must be positive, got {scale}")
        unit = self.weight / np.linalg.norm(self.weight)
        tau = (self.threshold / np.linalg.norm(self.weight)
               - float(np.dot(unit, mu_old))) / scale
        # beyond 12 sigma one class carries essentially no mass and the
        # conditional split is degenerate
        if tau > 12.0:
            return 0.0, None, None, None
        if tau < -12.0:
            return 1.0, None, None, None
        above = np.linspace(tau, 16.0, self.grid_points)
        below = np.linspace(-16.0, tau, self.grid_points)

        def trapezoid(values, grid):
            h = grid[1] - grid[0]
            return float(h * (np.sum(values) - 0.5 * (values[0] + values[-1])))

        def density(u):
            return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)

        alpha = trapezoid(density(above), above)
        mass_below = trapezoid(density(below), below)
        first_above = trapezoid(above * density(above), above)
        first_below = trapezoid(below * density(below), below)
        alpha = min(max(alpha, 0.0), 1.0)
        if alpha <= 0.0 or alpha >= 1.0 or mass_below <= 0.0:
            return alpha, None, None, None
        mu_plus = mu_old + scale * (first_above / alpha) * unit
        mu_minus = mu_old + scale * (first_below / mass_below) * unit
        mixture = alpha * mu_plus + (1.0 - alpha) * mu_minus
        gap = float(np.max(np.abs(mixture - mu_old)))
        return alpha, mu_plus, mu_minus, gap


def alignment_scene(seed, dim=2):
    """Deterministic single-transition scene shared by the alignment check
    and its callers: a small field at theta = theta_old, one state, one
    mid-chain step."""
    gen = stream(seed, "verify", 106)
    arch = Architecture.for_policy(x_dim=dim, context_dim=dim,
                                   observation_dim=0, hidden=(8, 8))
    field = init_field(arch, int(gen.integers(0, 2 ** 31)))
    x = gen.standard_normal(dim)
    context = gen.uniform(-1.0, 1.0, dim)
    t, delta, sigma = 0.75, 0.25, 0.5
    v_old = field.forward(x, t, context, np.zeros(0))
    mu_old = solver.transition_mean(x, v_old, t, delta, sigma)
    scale = sigma * math.sqrt(delta)
    return {
        "field": field, "x": x, "context": context, "t": t, "delta": delta,
        "sigma": sigma, "v_old": v_old, "mu_old": mu_old, "scale": scale,
    }


def check_small_step_alignment(oracle, samples, seed):
    """At theta = theta_old the expected update direction must align with
    (dv/dtheta)^T B e-weighted oracle mean gap.

    The Monte-Carlo mean gradient runs through the production minibatch
    graph; the reference direction is (dv/dtheta)^T B delta_mu / cov with
    delta_mu from the oracle's numeric integration. Sub-criteria, each
    normalized by its allowance: cosine above 0.9 (0.6 below 1e5 samples,
    where MC noise dominates), per-coordinate residual mean within 4
    standard errors, oracle mixture gap below 1e-8.
    """
    if samples < 2:
        raise ContractError("alignment check needs at least two samples")
    scene = alignment_scene(seed)
    field = scene["field"]
    alpha, mu_plus, mu_minus, mixture_gap = oracle.split(scene["mu_old"],
                                                         scene["scale"])
    signal = 2.0 * alpha * (1.0 - alpha)
    if mu_plus is None or signal < 1e-6:
        return CheckReport(
            "small_step_alignment", "skipped", float("nan"), 1.0, samples,
            seed, detail=f"degenerate split alpha={alpha:.3g}: "
            "2 alpha (1 - alpha) = 0 kills the signal",
        )
    config = TrainConfig(sigma=scene["sigma"], n_steps=4)
    gen = stream(seed, "verify", 107)
    chunk = 20000
    grad_total = None
    residual_sum = np.zeros_like(scene["x"])
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        eps = gen.standard_normal((n, scene["x"].size))
        x_next = scene["mu_old"] + scene["scale"] * eps
        rewards = oracle.reward(x_next)
        cols = {
            "x": np.tile(scene["x"], (n, 1)),
            "x_next": x_next,
            "v_old": np.tile(scene["v_old"], (n, 1)),
            "t": np.full(n, scene["t"]),
            "delta_t": np.full(n, scene["delta"]),
            "sigma_t": np.full(n, scene["sigma"]),
            "context": np.tile(scene["context"], (n, 1)),
            "observation": np.zeros((n, 0)),
            "reward": rewards,
            "terminal_state": np.zeros((n, scene["x"].size)),
            "terminal_residual": np.zeros((n, scene["x"].size)),
            "terminal_coeff": np.zeros(n),
            "terminal_var": np.zeros(n),
        }
        loss, _ = minibatch_loss(field, cols, np.arange(n), config)
        grad = backward(field, loss).grad
        grad_total = grad * n if grad_total is None else grad_total + grad * n
        residual_sum += np.sum(x_next - scene["mu_old"], axis=0)
        done += n
    mean_grad = grad_total / samples
    _, b_coef = solver.affine_coefficients(scene["t"], scene["delta"],
                                           scene["sigma"])
    cov_scale = scene["sigma"] ** 2 * scene["delta"]
    delta_mu = mu_plus - mu_minus
    direction = _functional_gradient(
        field, scene["x"], scene["t"], scene["context"], np.zeros(0),
        b_coef * delta_mu / cov_scale,
    )
    cos = float(np.dot(-mean_grad, direction)
                / (np.linalg.norm(mean_grad) * np.linalg.norm(direction)))
    cos_floor = 0.9 if samples >= 100000 else 0.6
    residual_se = scene["scale"] / math.sqrt(samples)
    residual_z = float(np.max(np.abs(residual_sum / samples))) / residual_se
    worst = max(
        (1.0 - cos) / (1.0 - cos_floor),
        residual_z / 4.0,
        mixture_gap / 1e-8,
    )
    detail = (f"cosine={cos:.6f} floor={cos_floor} residual_z={residual_z:.3f} "
              f"mixture_gap={mixture_gap:.3g} alpha={alpha:.4f}")
    return _report("small_step_alignment", worst, 1.0, samples, seed, detail)


def check_bayes_monotonicity(grid, prior):
    """Posterior success probability a lambda / (a lambda + b) vs direct
    Bayes evaluation with unit-variance 1-D class conditionals at +-1/2,
    plus strict monotonicity over the grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2:
        raise ContractError("grid must hold at least two ratio values")
    if np.any(grid <= 0.0):
        raise ContractError("likelihood ratios must be positive")
    if not 0.0 < prior < 1.0:
        raise ContractError(f"prior must lie in (0, 1), got {prior}")
    grid = np.sort(grid)
    a, b = prior, 1.0 - prior
    worst = 0.0

    def normal_density(x, mean):
        return math.exp(-0.5 * (x - mean) ** 2) / math.sqrt(2.0 * math.pi)

    previous = -1.0
    for lam in grid:
        eta = a * lam / (a * lam + b)
        x = math.log(lam)  # the point where N(x; 1/2, 1) / N(x; -1/2, 1) = lam
        plus = a * normal_density(x, 0.5)
        minus = b * normal_density(x, -0.5)
        direct = plus / (plus + minus)
        worst = max(worst, abs(eta - direct))
        if eta <= previous:
            worst = max(worst, float("inf"))
        previous = eta
    return _report("bayes_monotonicity", worst, 1e-12, grid.size, 0,
                   detail=f"prior={prior}")


def default_oracle(seed):
    """Halfspace through a bit above the scene's conditional mean, giving a
    non-degenerate split around alpha ~ 0.42."""
    scene = alignment_scene(seed)
    weight = np.array([1.0, 0.5])
    unit_proj = float(np.dot(weight, scene["mu_old"]))
    threshold = unit_proj + 0.2 * scene["scale"] * float(np.linalg.norm(weight))
    return SyntheticOracle(weight=weight, threshold=threshold)


def run_all(seed=0, trials=10000, instances=100, samples=1000000):
    """Run every check with shared seeding; returns reports in fixed order."""
    reports = [
        check_affine_coefficients(trials, seed),
        check_error_difference(trials, seed),
        check_wmse_decomposition(trials, seed),
        check_log_likelihood_ratio(trials, seed),
        check_gradient_form(instances, seed),
        check_small_step_alignment(default_oracle(seed), samples, seed),
        check_bayes_monotonicity(np.geomspace(0.05, 20.0, 41), 0.5),
    ]
    return reports


def all_passed(reports):
    return all(report.status in ("pass", "skipped") for report in reports)


def summarize(reports):
    lines = []
    for report in reports:
        line = (f"{report.status.upper():7s} {report.name}: "
                f"discrepancy {report.discrepancy:.3g} vs tolerance "
                f"{report.tolerance:.3g} ({report.samples} samples)")
        if report.detail:
            line += f" [{report.detail}]"
        lines.append(line)
    return "\n".join(lines)


def write_report(reports, path):
    lines = [",".join(REPORT_COLUMNS)]
    for report in reports:
        lines.append(",".join([
            report.name,
            report.status,
            repr(float(report.discrepancy)),
            repr(float(report.tolerance)),
            str(report.samples),
            str(report.seed),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
