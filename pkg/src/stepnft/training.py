"""Online training loop: collect with the slow policy, optimize the fast one.

Each iteration runs three phases. Phase one collects a fresh on-policy
buffer with the EMA policy theta_old driving stochastic chains. Phase two
takes minibatch gradient steps on theta: for every record, mirror theta's
velocity around the recorded one, score both branches against the recorded
target, and descend the configured loss. Phase three folds theta back into
theta_old with an iteration-dependent decay and evaluates the deployed
policy greedily. The buffer is discarded every iteration; nothing replays.

Determinism: collection, shuffling, optimization, and evaluation all draw
from named substreams of the master seed, and reductions run in fixed
order, so identical configs yield byte-identical metrics files.
"""

import dataclasses
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from . import policy
from .autodiff import tsum, square, softplus, wrap
from .envs import bandit_demos, make_env, reach_demos
from .errors import ConfigurationError, ContractError, TrainingAbort
from .optim import make_optimizer
from .rng import stream
from .rollout import RolloutBuffer, StepSelector, batched_chains, collect
from .sft import train_flow_matching
from .solver import SolverSchedule
from .policy import Architecture, init_field, save_checkpoint

METRICS_COLUMNS = (
    "iter", "success_rate", "loss_mean", "e_plus_mean", "e_minus_mean",
    "delta_v_norm", "grad_norm", "alpha", "seconds",
)

OBJECTIVES = ("ranking", "wmse", "positive_only", "negative_only")
TARGETS = ("stepwise", "terminal")
ALPHA_KINDS = ("linear", "constant")


@dataclass(frozen=True)
class TrainConfig:
    """Full specification of one training run."""

    env: str = "bandit"
    reward_kind: str = "binary"
    env_overrides: dict = dataclass_field(default_factory=dict)
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    n_steps: int = 4
    sigma: float = 0.2
    sampler: str = "sde"
    last_step_noise: bool = False
    objective: str = "ranking"
    target: str = "stepwise"
    terminal_correction: bool = True
    beta: float = 1.0
    trust_weight: float = 0.0
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 64
    update_epochs: int = 2
    iterations: int = 400
    n_envs: int = 64
    rollout_epochs: int = 8
    selector: str = "uniform"
    fixed_step: int = 0
    alpha_start: float = 0.1
    alpha_end: float = 0.995
    alpha_kind: str = "linear"
    eval_episodes: int = 512
    eval_every: int = 1
    sft_demos: int = 4000
    sft_noise: float = 0.25
    sft_steps: int = 1500
    sft_batch: int = 128
    sft_learning_rate: float = 1e-3
    seed: int = 0
    record_timing: bool = False

    def __post_init__(self):
        def bad(field_name, message):
            return ConfigurationError(message, field=field_name)

        if self.env not in ("bandit", "reach"):
            raise bad("env.kind", f"unknown env {self.env!r}")
        if self.reward_kind not in ("binary", "shaped"):
            raise bad("env.reward", f"unknown reward kind {self.reward_kind!r}")
        if self.n_steps < 1:
            raise bad("solver.steps", "solver needs at least one step")
        if self.sigma < 0.0:
            raise bad("solver.sigma", "sigma must be nonnegative")
        if self.sampler not in ("ode", "sde"):
            raise bad("solver.sampler", f"sampler must be ode or sde, got {self.sampler!r}")
        if self.objective not in OBJECTIVES:
            raise bad("objective.kind", f"objective must be one of {OBJECTIVES}")
        if self.target not in TARGETS:
            raise bad("objective.target", f"target must be one of {TARGETS}")
        if self.beta <= 0.0:
            raise bad("objective.beta", "beta must be positive")
        if self.trust_weight < 0.0:
            raise bad("objective.trust_weight", "trust_weight must be nonnegative")
        if self.target == "stepwise":
            if self.sampler != "sde" or self.sigma == 0.0:
                raise bad(
                    "objective.target",
                    "stepwise target needs sde sampling with sigma > 0: "
                    "per-step errors normalize by the injected variance",
                )
        if self.target == "terminal" and self.terminal_correction and self.sampler != "sde":
            raise bad(
                "objective.terminal_correction",
                "terminal correction propagates injected noise; ode chains have none",
            )
        if not 0.0 <= self.alpha_start <= self.alpha_end < 1.0:
            raise bad("train.alpha_start", "need 0 <= alpha_start <= alpha_end < 1")
        if self.alpha_kind not in ALPHA_KINDS:
            raise bad("train.alpha_kind", f"alpha_kind must be one of {ALPHA_KINDS}")
        if self.iterations < 0:
            raise bad("train.iterations", "iterations must be nonnegative")
        if self.batch_size < 1 or self.update_epochs < 1:
            raise bad("train.batch_size", "batch_size and update_epochs must be positive")
        if self.learning_rate <= 0.0 or self.sft_learning_rate <= 0.0:
            raise bad("train.learning_rate", "learning rates must be positive")
        if self.n_envs < 1 or self.rollout_epochs < 1:
            raise bad("rollout.envs", "n_envs and rollout_epochs must be positive")
        if self.selector not in ("uniform", "fixed"):
            raise bad("rollout.selector", "selector must be uniform or fixed")
        if self.selector == "fixed" and not 0 <= self.fixed_step < self.n_steps:
            raise bad("rollout.fixed_step", f"fixed_step must lie in [0, {self.n_steps})")
        if self.eval_episodes < 0 or self.eval_every < 1:
            raise bad("eval.episodes", "eval_episodes >= 0 and eval_every >= 1 required")
        if self.sft_demos < 1 or self.sft_steps < 0 or self.sft_batch < 1:
            raise bad("sft.demos", "sft settings must be positive (steps may be zero)")
        if self.sft_noise < 0.0:
            raise bad("sft.noise", "sft_noise must be nonnegative")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def schedule(self):
        return SolverSchedule.uniform(self.n_steps, self.sigma)

    def step_selector(self):
        if self.selector == "fixed":
            return StepSelector("fixed", self.fixed_step)
        return StepSelector("uniform")

    def env_factory(self):
        name, kind, overrides = self.env, self.reward_kind, dict(self.env_overrides)

        def factory():
            return make_env(name, reward_kind=kind, **overrides)

        return factory


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    success_rate: float
    loss_mean: float
    e_plus_mean: float
    e_minus_mean: float
    delta_v_norm: float
    grad_norm: float
    alpha: float
    seconds: float

    def csv_values(self):
        return [
            str(self.iteration),
            repr(float(self.success_rate)),
            repr(float(self.loss_mean)),
            repr(float(self.e_plus_mean)),
            repr(float(self.e_minus_mean)),
            repr(float(self.delta_v_norm)),
            repr(float(self.grad_norm)),
            repr(float(self.alpha)),
            repr(float(self.seconds)),
        ]


def alpha_schedule(iteration, total, config):
    """Decay for the EMA sync after the given iteration count.

    Linear kind interpolates alpha_start -> alpha_end over [0, total];
    constant kind always returns alpha_start. The training loop samples
    this at iteration counts 1..total, so the final sync uses alpha_end
    exactly.
    """
    if not 0 <= iteration <= total:
        raise ContractError(f"iteration {iteration} outside [0, {total}]")
    if config.alpha_kind == "constant":
        return config.alpha_start
    if total == 0:
        return config.alpha_end
    frac = iteration / total
    return config.alpha_start + (config.alpha_end - config.alpha_start) * frac


def ema_update(old_params, new_params, alpha):
    """Elementwise convex combination alpha * old + (1 - alpha) * new."""
    old_params = np.asarray(old_params, dtype=np.float64)
    new_params = np.asarray(new_params, dtype=np.float64)
    if old_params.shape != new_params.shape:
        raise ContractError("parameter vectors must be aligned")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * old_params + (1.0 - alpha) * new_params


@dataclass(frozen=True)
class BatchStats:
    loss: float
    e_plus_mean: float
    e_minus_mean: float
    delta_v_norm: float
    grad_norm: float
    n_effective: int


def _target_pieces(cols, idx, config):
    """Residual, sensitivity coefficient, covariance scale, and weight per
    record, as plain arrays, for the configured supervision target."""
    t = cols["t"][idx]
    if config.target == "stepwise":
        delta = cols["delta_t"][idx]
        sigma = cols["sigma_t"][idx]
        ratio = sigma * sigma * delta / (2.0 * t)
        u_coef = 1.0 - ratio
        b_coef = -delta - (1.0 - t) * ratio
        mu_old = u_coef[:, None] * cols["x"][idx] + b_coef[:, None] * cols["v_old"][idx]
        residual = cols["x_next"][idx] - mu_old
        cov = sigma * sigma * delta
        weight = np.ones(len(t))
        return residual, b_coef, cov, weight
    if config.terminal_correction:
        residual = cols["terminal_residual"][idx]
        coeff = cols["terminal_coeff"][idx]
        cov = cols["terminal_var"][idx]
        weight = (cov > 0.0).astype(np.float64)
        cov = np.where(cov > 0.0, cov, 1.0)  # masked rows never read their cov
        return residual, coeff, cov, weight
    # naive terminal target: score the one-step endpoint prediction x - t v
    predicted = cols["x"][idx] - t[:, None] * cols["v_old"][idx]
    residual = cols["terminal_state"][idx] - predicted
    coeff = -t
    cov = np.ones(len(t))
    weight = np.ones(len(t))
    return residual, coeff, cov, weight


def minibatch_loss(field, cols, idx, config):
    """Build the loss graph for one minibatch; returns (Tensor, stats dict).

    The graph mirrors the scalar objective module exactly: branch errors are
    ||residual -/+ beta coeff delta_v||^2 / cov per record, combined per the
    configured objective, averaged over unmasked records, plus the optional
    trust penalty.
    """
    residual, coeff, cov, weight = _target_pieces(cols, idx, config)
    reward = cols["reward"][idx]
    label = 2.0 * reward - 1.0
    v = field.tape_forward_batch(
        cols["x"][idx], cols["t"][idx], cols["context"][idx], cols["observation"][idx]
    )
    delta_v = v - cols["v_old"][idx]
    disp = delta_v * (config.beta * coeff)[:, None]
    res = wrap(residual)
    inv_cov = 1.0 / cov
    e_plus = tsum(square(res - disp), axis=1) * inv_cov
    e_minus = tsum(square(res + disp), axis=1) * inv_cov
    if config.objective == "ranking":
        margin = (e_plus - e_minus) * (0.5 * label)
        per_record = softplus(margin)
    elif config.objective == "wmse":
        per_record = e_plus * reward + e_minus * (1.0 - reward)
    elif config.objective == "positive_only":
        per_record = e_plus * reward
    else:
        per_record = e_minus * (1.0 - reward)
    if config.trust_weight > 0.0:
        per_record = per_record + tsum(square(delta_v), axis=1) * config.trust_weight
    n_effective = float(np.sum(weight))
    loss = tsum(per_record * weight) * (1.0 / max(n_effective, 1.0))
    denom = max(n_effective, 1.0)
    stats = {
        "e_plus_mean": float(np.sum(e_plus.data * weight) / denom),
        "e_minus_mean": float(np.sum(e_minus.data * weight) / denom),
        "delta_v_norm": float(
            np.sum(np.sqrt(np.sum(delta_v.data ** 2, axis=1)) * weight) / denom
        ),
        "n_effective": int(n_effective),
    }
    return loss, stats


def optimize_batch(field, cols, idx, config, optimizer, iteration):
    """One gradient step; returns (updated field, BatchStats)."""
    loss, stats = minibatch_loss(field, cols, idx, config)
    tape = policy.backward(field, loss)
    if not np.isfinite(tape.value) or not np.all(np.isfinite(tape.grad)):
        raise TrainingAbort(
            f"non-finite loss or gradient at iteration {iteration}",
            batch={name: cols[name][idx] for name in cols},
            iteration=iteration,
        )
    new_params = optimizer.step(field.params, tape.grad)
    updated = field.with_params(new_params)
    return updated, BatchStats(
        loss=tape.value,
        e_plus_mean=stats["e_plus_mean"],
        e_minus_mean=stats["e_minus_mean"],
        delta_v_norm=stats["delta_v_norm"],
        grad_norm=float(np.linalg.norm(tape.grad)),
        n_effective=stats["n_effective"],
    )


@dataclass(frozen=True)
class IterationStats:
    loss_mean: float
    e_plus_mean: float
    e_minus_mean: float
    delta_v_norm: float
    grad_norm: float


def optimize_iteration(field, buffer, config, optimizer, iteration):
    """Phase two: epochs of shuffled minibatch steps over one buffer."""
    if len(buffer) == 0:
        raise ContractError("cannot optimize over an empty buffer")
    cols = buffer.columns
    n = len(buffer)
    batch_stats = []
    for epoch in range(config.update_epochs):
        order = stream(config.seed, "shuffle", iteration, epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            field, stats = optimize_batch(field, cols, idx, config, optimizer, iteration)
            batch_stats.append(stats)
    totals = np.array([
        [s.loss, s.e_plus_mean, s.e_minus_mean, s.delta_v_norm, s.grad_norm]
        for s in batch_stats
    ])
    means = totals.mean(axis=0)
    return field, IterationStats(
        loss_mean=float(means[0]),
        e_plus_mean=float(means[1]),
        e_minus_mean=float(means[2]),
        delta_v_norm=float(means[3]),
        grad_norm=float(means[4]),
    )


@dataclass(frozen=True)
class EvalReport:
    success_rate: float
    rewards: np.ndarray
    successes: np.ndarray


def evaluate_actions(action_fn, env_factory, episodes, seed):
    """Roll out action_fn(observation, context) for a fixed episode battery."""
    if episodes < 1:
        raise ContractError("need at least one evaluation episode")
    rewards = np.empty(episodes)
    successes = np.empty(episodes, dtype=bool)
    for episode in range(episodes):
        env = env_factory()
        env_seed = int(stream(seed, "eval-env-seed", episode).integers(0, 2 ** 62))
        obs, context = env.reset(env_seed)
        done = False
        total = 0.0
        while not done:
            obs, done, reward = env.step(action_fn(obs, context))
            total += reward
        rewards[episode] = total
        successes[episode] = bool(env.episode_success)
    return EvalReport(
        success_rate=float(np.mean(successes)),
        rewards=rewards,
        successes=successes,
    )


def evaluate_field(field, config, seed):
    """Greedy evaluation: deterministic chains, fresh noise start per episode.

    The episode battery is a pure function of (config, seed): env seeds and
    chain starts come from dedicated eval substreams, so successive calls
    measure policy movement and nothing else.
    """
    episodes = config.eval_episodes
    if episodes < 1:
        raise ContractError("need at least one evaluation episode")
    factory = config.env_factory()
    envs = [factory() for _ in range(episodes)]
    dim = envs[0].action_dim
    schedule = config.schedule()
    streams = [stream(seed, "eval", episode) for episode in range(episodes)]
    resets = [
        envs[i].reset(int(stream(seed, "eval-env-seed", i).integers(0, 2 ** 62)))
        for i in range(episodes)
    ]
    observations = np.stack([r[0] for r in resets])
    contexts = np.stack([r[1] for r in resets])
    rewards = np.zeros(episodes)
    done = False
    while not done:
        x1_rows = np.stack([streams[i].standard_normal(dim) for i in range(episodes)])
        states, _, _ = batched_chains(
            field, schedule, x1_rows, contexts, observations, streams, "ode", False
        )
        results = [envs[i].step(states[-1][i]) for i in range(episodes)]
        observations = np.stack([r[0] for r in results])
        done = results[0][1]
        rewards += np.array([r[2] for r in results])
    successes = np.array([bool(env.episode_success) for env in envs])
    return EvalReport(
        success_rate=float(np.mean(successes)),
        rewards=rewards,
        successes=successes,
    )


def build_architecture(config):
    probe = config.env_factory()()
    return Architecture.for_policy(
        x_dim=probe.action_dim,
        context_dim=probe.context_dim,
        observation_dim=probe.observation_dim,
        hidden=tuple(config.hidden),
        activation=config.activation,
    )


def make_sft_field(config):
    """Pretrain the starting policy on expert demos for the configured env."""
    arch = build_architecture(config)
    field = init_field(arch, config.seed)
    if config.sft_steps == 0:
        return field
    probe = config.env_factory()()
    if config.env == "bandit":
        demos = bandit_demos(probe.config, config.sft_demos, config.sft_noise,
                             config.seed)
    else:
        demos = reach_demos(probe.config, config.sft_demos, config.sft_noise,
                            config.seed)
    trained, _ = train_flow_matching(
        field, demos, config.sft_steps, config.sft_batch,
        config.sft_learning_rate, config.seed,
    )
    return trained


@dataclass
class TrainResult:
    final_field: object
    sft_field: object
    metrics: list
    sft_success_rate: float
    final_success_rate: float
    out_dir: object


def write_metrics(rows, path):
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        lines.append(",".join(row.csv_values()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def run_training(config, out_dir=None, init_field_override=None):
    """Full training run; writes artifacts into out_dir when given.

    init_field_override short-circuits SFT pretraining, which lets ablation
    arms share one pretrained init per seed. With iterations = 0 the init
    comes back unchanged and the metrics body is empty.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    theta_old = init_field_override or make_sft_field(config)
    sft_field = theta_old
    sft_success = (
        evaluate_field(theta_old, config, config.seed).success_rate
        if config.eval_episodes > 0 else float("nan")
    )
    theta = theta_old.copy()
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    schedule = config.schedule()
    selector = config.step_selector()
    factory = config.env_factory()
    rows = []
    success = sft_success
    for iteration in range(config.iterations):
        started = time.perf_counter()
        buffer = collect(
            theta_old, factory, config.n_envs, config.rollout_epochs, schedule,
            config.seed, mode=config.sampler, selector=selector,
            last_step_noise=config.last_step_noise,
            epoch_base=iteration * config.rollout_epochs,
        )
        theta, stats = optimize_iteration(theta, buffer, config, optimizer, iteration)
        alpha = alpha_schedule(iteration + 1, config.iterations, config)
        theta_old = theta_old.with_params(
            ema_update(theta_old.params, theta.params, alpha)
        )
        if config.eval_episodes > 0 and (
            (iteration + 1) % config.eval_every == 0 or iteration == config.iterations - 1
        ):
            success = evaluate_field(theta_old, config, config.seed).success_rate
        seconds = time.perf_counter() - started if config.record_timing else 0.0
        rows.append(MetricsRow(
            iteration=iteration,
            success_rate=success,
            loss_mean=stats.loss_mean,
            e_plus_mean=stats.e_plus_mean,
            e_minus_mean=stats.e_minus_mean,
            delta_v_norm=stats.delta_v_norm,
            grad_norm=stats.grad_norm,
            alpha=alpha,
            seconds=seconds,
        ))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(rows, out_dir / "metrics.csv")
        save_checkpoint(theta_old, out_dir / "checkpoint.ckpt")
        save_checkpoint(sft_field, out_dir / "sft_init.ckpt")
    return TrainResult(
        final_field=theta_old,
        sft_field=sft_field,
        metrics=rows,
        sft_success_rate=sft_success,
        final_success_rate=success,
        out_dir=out_dir,
    )
