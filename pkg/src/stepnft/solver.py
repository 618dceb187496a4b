"""Discrete-time samplers for flow-matching policies.

Integration runs backward in flow time from t = 1 (pure noise) to t = 0
(action sample) over a fixed grid. The deterministic update is plain Euler,

    x_next = x - v * delta,

and the stochastic update adds a score-based correction plus injected noise,

    x_next = x + [v + (sigma^2 / 2t) (x + (1 - t) v)] * (-delta)
               + sigma * sqrt(delta) * eps,

whose conditional mean is affine in the velocity:

    mean = U x + B v,   U = 1 - sigma^2 delta / (2t),
                        B = -delta - (1 - t) sigma^2 delta / (2t),

with isotropic covariance sigma^2 delta I. The affine form is what the
step-preference objective differentiates through, so it is the quantity this
module exposes, and the direct update is kept equal to it by construction
checks in the verification suite.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ContractError, DomainError

MODES = ("ode", "sde")


def affine_coefficients(t, delta_t, sigma_t):
    """Return (U, B) for one stochastic transition starting at time t.

    Requires t > 0 (the score correction divides by t) and 0 < delta_t <= t
    so the step cannot cross zero. sigma_t = 0 degenerates to the Euler step
    exactly: U = 1, B = -delta_t.
    """
    t = float(t)
    delta_t = float(delta_t)
    sigma_t = float(sigma_t)
    if t <= 0.0:
        raise DomainError(f"affine coefficients need t > 0, got t={t}")
    if delta_t <= 0.0 or delta_t > t:
        raise DomainError(f"need 0 < delta_t <= t, got delta_t={delta_t}, t={t}")
    if sigma_t < 0.0:
        raise DomainError(f"sigma_t must be nonnegative, got {sigma_t}")
    ratio = sigma_t * sigma_t * delta_t / (2.0 * t)
    u_coef = 1.0 - ratio
    b_coef = -delta_t - (1.0 - t) * ratio
    return u_coef, b_coef


@dataclass(frozen=True)
class SolverSchedule:
    """Time grid 1 = t_0 > t_1 > ... > t_K = 0 plus per-transition noise levels."""

    times: np.ndarray
    noise_levels: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        noise = np.asarray(self.noise_levels, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise ContractError("schedule needs at least two time points")
        if times[0] != 1.0 or times[-1] != 0.0:
            raise ContractError(f"time grid must run from 1 to 0, got {times[0]}..{times[-1]}")
        if np.any(np.diff(times) >= 0.0):
            raise ContractError("time grid must be strictly decreasing")
        if noise.shape != (times.size - 1,):
            raise ContractError(
                f"need one noise level per transition: {times.size - 1}, got shape {noise.shape}"
            )
        if np.any(noise < 0.0):
            raise ContractError("noise levels must be nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "noise_levels", noise)

    @classmethod
    def uniform(cls, n_steps, sigma):
        """Uniform grid with constant noise level on every transition."""
        if n_steps < 1:
            raise ContractError(f"need at least one step, got {n_steps}")
        times = np.linspace(1.0, 0.0, n_steps + 1)
        return cls(times=times, noise_levels=np.full(n_steps, float(sigma)))

    @property
    def n_steps(self):
        return self.times.size - 1

    def step_params(self, j):
        """(t, delta_t, sigma_t) for transition j, evaluated at the left endpoint."""
        if not 0 <= j < self.n_steps:
            raise ContractError(f"transition index {j} out of range [0, {self.n_steps})")
        t = float(self.times[j])
        delta = float(self.times[j] - self.times[j + 1])
        return t, delta, float(self.noise_levels[j])


def ode_step(x, v, delta_t):
    """Deterministic Euler update x - v * delta_t."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.shape != v.shape:
        raise ContractError(f"x and v must share a shape, got {x.shape} vs {v.shape}")
    if delta_t <= 0.0:
        raise DomainError(f"delta_t must be positive, got {delta_t}")
    return x - v * delta_t


@dataclass(frozen=True)
class GaussianStep:
    """Conditional law of one stochastic transition: N(mean, cov_scale * I)."""

    mean: np.ndarray
    cov_scale: float
    t: float
    delta_t: float
    sigma_t: float


def transition_mean(x, v, t, delta_t, sigma_t):
    """Affine conditional mean U x + B v (batch-safe on matching shapes)."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.shape != v.shape:
        raise ContractError(f"x and v must share a shape, got {x.shape} vs {v.shape}")
    u_coef, b_coef = affine_coefficients(t, delta_t, sigma_t)
    return u_coef * x + b_coef * v


def sde_step(x, v, t, delta_t, sigma_t, eps):
    """One stochastic transition; returns (x_next, GaussianStep).

    eps must be a standard normal draw with x's shape; cov_scale is
    sigma_t^2 * delta_t. With eps = 0 and sigma_t = 0 the output equals
    ode_step bit for bit.
    """
    mean = transition_mean(x, v, t, delta_t, sigma_t)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mean.shape:
        raise ContractError(f"eps shape {eps.shape} must match state shape {mean.shape}")
    scale = float(sigma_t) * np.sqrt(float(delta_t))
    x_next = mean + scale * eps
    law = GaussianStep(
        mean=mean,
        cov_scale=float(sigma_t) ** 2 * float(delta_t),
        t=float(t),
        delta_t=float(delta_t),
        sigma_t=float(sigma_t),
    )
    return x_next, law


@dataclass(frozen=True)
class SamplerChain:
    """Full record of one sampling trajectory.

    states[j] is the sample at times[j]; velocities[j] and noise[j] belong to
    the transition from times[j] to times[j+1]. noise rows are zero wherever
    no noise was injected, which makes replay a pure function of the record:

        states[j+1] = U_j states[j] + B_j velocities[j]
                      + sigma_j sqrt(delta_j) noise[j]
    """

    states: np.ndarray
    velocities: np.ndarray
    noise: np.ndarray
    mode: str
    schedule: SolverSchedule = dataclass_field(repr=False)

    def __post_init__(self):
        k = self.schedule.n_steps
        if self.states.shape[0] != k + 1 or self.velocities.shape[0] != k:
            raise ContractError("chain arrays do not match the schedule length")

    @property
    def final_state(self):
        return self.states[-1]


def run_chain(velocity_fn, schedule, x_start, context, observation, mode,
              noise_stream=None, last_step_noise=False):
    """Integrate one trajectory from x_start at t = 1 down to t = 0.

    velocity_fn(x, t, context, observation) -> velocity row; any callable
    with that signature works, which is how tests drive the solver with
    closed-form fields. In "sde" mode noise_stream supplies the eps draws
    (one standard-normal vector per injected transition, in step order);
    the final transition injects only when last_step_noise is set, keeping
    executed actions at the conditional mean by default. In "ode" mode the
    schedule's noise levels are ignored entirely.
    """
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    x_start = np.asarray(x_start, dtype=np.float64)
    if x_start.ndim != 1:
        raise ContractError(f"x_start must be a vector, got shape {x_start.shape}")
    if mode == "sde" and noise_stream is None:
        raise ContractError("sde mode needs a noise_stream")
    dim = x_start.size
    k = schedule.n_steps
    states = np.empty((k + 1, dim), dtype=np.float64)
    velocities = np.empty((k, dim), dtype=np.float64)
    noise = np.zeros((k, dim), dtype=np.float64)
    states[0] = x_start
    for j in range(k):
        t, delta, sigma = schedule.step_params(j)
        v = np.asarray(velocity_fn(states[j], t, context, observation), dtype=np.float64)
        if v.shape != (dim,):
            raise ContractError(f"velocity_fn returned shape {v.shape}, expected ({dim},)")
        velocities[j] = v
        if mode == "ode":
            states[j + 1] = ode_step(states[j], v, delta)
            continue
        inject = (j < k - 1) or last_step_noise
        if inject:
            noise[j] = noise_stream.standard_normal(dim)
        states[j + 1], _ = sde_step(states[j], v, t, delta, sigma, noise[j])
    return SamplerChain(
        states=states, velocities=velocities, noise=noise, mode=mode, schedule=schedule
    )


def replay_chain(chain):
    """Recompute states from the chain's own record; used as an integrity check."""
    states = np.empty_like(chain.states)
    states[0] = chain.states[0]
    for j in range(chain.schedule.n_steps):
        t, delta, sigma = chain.schedule.step_params(j)
        if chain.mode == "ode":
            states[j + 1] = ode_step(states[j], chain.velocities[j], delta)
        else:
            states[j + 1], _ = sde_step(
                states[j], chain.velocities[j], t, delta, sigma, chain.noise[j]
            )
    return states


def dump_chain(chain, path, seed=None):
    """Write a chain as a text table; floats use repr precision for round-trips."""
    lines = [
        "# sampler chain v1",
        f"# mode {chain.mode}",
        f"# steps {chain.schedule.n_steps}",
        f"# dim {chain.states.shape[1]}",
        f"# seed {'none' if seed is None else int(seed)}",
        "# times " + " ".join(repr(float(t)) for t in chain.schedule.times),
        "# noise_levels " + " ".join(repr(float(s)) for s in chain.schedule.noise_levels),
    ]
    for name, block in (("state", chain.states), ("velocity", chain.velocities),
                        ("noise", chain.noise)):
        for row in block:
            lines.append(name + " " + " ".join(repr(float(x)) for x in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_chain(path):
    """Inverse of dump_chain; values round-trip exactly via repr."""
    header = {}
    rows = {"state": [], "velocity": [], "noise": []}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) >= 2 and parts[0] in ("mode", "steps", "dim", "seed",
                                                    "times", "noise_levels"):
                    header[parts[0]] = parts[1:]
                continue
            kind, rest = line.split(" ", 1)
            rows[kind].append([float(x) for x in rest.split()])
    schedule = SolverSchedule(
        times=np.array([float(x) for x in header["times"]]),
        noise_levels=np.array([float(x) for x in header["noise_levels"]]),
    )
    return SamplerChain(
        states=np.array(rows["state"], dtype=np.float64),
        velocities=np.array(rows["velocity"], dtype=np.float64),
        noise=np.array(rows["noise"], dtype=np.float64),
        mode=header["mode"][0],
        schedule=schedule,
    )
