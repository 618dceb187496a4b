"""Experience collection for step-preference training.

Episodes run in parallel slots: every env resets, then for each env step all
slots integrate their sampling chains in lockstep (one batched forward per
solver step) and execute the resulting actions. Per chain, one transition
(or all of them) is recorded together with everything needed to rebuild the
training objective later: the step endpoints, the behavior velocity, the
solver parameters, and the terminal-target quantities.

Determinism contract: every stochastic draw for episode (epoch, env) comes
from stream(seed, "episode", epoch, env) in a fixed order per env step --
first the chain start x1, then the injected noise vectors in solver order,
then the transition selector. Batched forwards use a batch-size-invariant
matmul, so a recorded v_old is bit-identical to a single forward of the same
field at the recorded inputs, no matter how many envs ran together.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .rng import stream
from .solver import affine_coefficients

BUFFER_VERSION = 1

_VECTOR_FIELDS = (
    "x", "x_next", "v_old", "context", "observation",
    "terminal_state", "terminal_residual",
)
_FLOAT_FIELDS = ("t", "delta_t", "sigma_t", "reward", "terminal_coeff", "terminal_var")
_INT_FIELDS = ("env_index", "env_step", "solver_index", "epoch", "seed")


@dataclass(frozen=True)
class TransitionRecord:
    """One recorded solver transition plus its episode's terminal data."""

    x: np.ndarray
    x_next: np.ndarray
    v_old: np.ndarray
    t: float
    delta_t: float
    sigma_t: float
    context: np.ndarray
    observation: np.ndarray
    reward: float
    env_index: int
    env_step: int
    solver_index: int
    epoch: int
    seed: int
    terminal_state: np.ndarray
    terminal_residual: np.ndarray
    terminal_coeff: float
    terminal_var: float


@dataclass(frozen=True)
class StepSelector:
    """Picks which solver transition a chain contributes to the buffer."""

    kind: str
    index: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed"):
            raise ConfigurationError(
                f"selector kind must be uniform or fixed, got {self.kind!r}"
            )
        if self.kind == "fixed" and self.index < 0:
            raise ConfigurationError(
                f"fixed selector index must be nonnegative, got {self.index}"
            )

    def validate_for(self, n_steps):
        if self.kind == "fixed" and self.index >= n_steps:
            raise ConfigurationError(
                f"fixed selector index {self.index} out of range for {n_steps} steps"
            )

    def pick(self, gen, n_steps):
        if self.kind == "fixed":
            return self.index
        return int(gen.integers(0, n_steps))


class RolloutBuffer:
    """Columnar store of TransitionRecords.

    Columns are stacked numpy arrays (see _VECTOR/_FLOAT/_INT_FIELDS);
    record(i) materializes a TransitionRecord view for tests and debugging.
    """

    def __init__(self, columns, n_episodes, episode_rewards, success_rate):
        self.columns = columns
        self.n_episodes = int(n_episodes)
        self.episode_rewards = np.asarray(episode_rewards, dtype=np.float64)
        self.success_rate = float(success_rate)

    def __len__(self):
        return self.columns["t"].shape[0]

    def record(self, i):
        cols = self.columns
        kwargs = {}
        for name in _VECTOR_FIELDS:
            kwargs[name] = cols[name][i]
        for name in _FLOAT_FIELDS:
            kwargs[name] = float(cols[name][i])
        for name in _INT_FIELDS:
            kwargs[name] = int(cols[name][i])
        return TransitionRecord(**kwargs)

    def records(self):
        return [self.record(i) for i in range(len(self))]

    def save(self, directory):
        """Write records.csv (human-readable index), vectors.npz (the exact
        float64 payload of every column), and meta.json."""
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "records.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["env_idx", "env_step", "j", "t", "r"])
            for i in range(len(self)):
                writer.writerow([
                    int(self.columns["env_index"][i]),
                    int(self.columns["env_step"][i]),
                    int(self.columns["solver_index"][i]),
                    repr(float(self.columns["t"][i])),
                    repr(float(self.columns["reward"][i])),
                ])
        np.savez(directory / "vectors.npz", **self.columns)
        meta = {
            "version": BUFFER_VERSION,
            "n_records": len(self),
            "n_episodes": self.n_episodes,
            "success_rate": self.success_rate,
            "episode_rewards": [float(r) for r in self.episode_rewards],
            "dims": {n: list(self.columns[n].shape[1:]) for n in _VECTOR_FIELDS},
        }
        with open(directory / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory):
        meta_path = directory / "meta.json"
        if not meta_path.exists():
            raise ContractError(f"no buffer at {directory}")
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta["version"] != BUFFER_VERSION:
            raise ContractError(f"unsupported buffer version {meta['version']}")
        with np.load(directory / "vectors.npz") as payload:
            columns = {name: payload[name] for name in payload.files}
        return cls(
            columns=columns,
            n_episodes=meta["n_episodes"],
            episode_rewards=np.array(meta["episode_rewards"]),
            success_rate=meta["success_rate"],
        )


def batched_chains(field, schedule, x1_rows, contexts, observations, streams,
                    mode, last_step_noise):
    """Integrate one chain per row in lockstep; one batched forward per step.

    Noise for row i comes from streams[i] so the draws are independent of
    which other rows share the batch.
    """
    n, dim = x1_rows.shape
    k = schedule.n_steps
    states = np.empty((k + 1, n, dim))
    velocities = np.empty((k, n, dim))
    noise = np.zeros((k, n, dim))
    states[0] = x1_rows
    for j in range(k):
        t, delta, sigma = schedule.step_params(j)
        velocities[j] = field.forward_batch(states[j], t, contexts, observations)
        if mode == "ode":
            states[j + 1] = states[j] - velocities[j] * delta
            continue
        inject = (j < k - 1) or last_step_noise
        if inject:
            for i in range(n):
                noise[j, i] = streams[i].standard_normal(dim)
        u_coef, b_coef = affine_coefficients(t, delta, sigma)
        scale = sigma * np.sqrt(delta)
        states[j + 1] = u_coef * states[j] + b_coef * velocities[j] + scale * noise[j]
    return states, velocities, noise


def _terminal_pieces(schedule, states, velocities, noise, mode, last_step_noise):
    """Terminal-target quantities for every possible recorded step.

    With the transition recursion x_{l+1} = U_l x_l + B_l v_l + s_l eps_l,
    define the tail products P_l = prod_{m>l} U_m. Treating the terminal
    state as affine in the step-j velocity with the recorded tail frozen
    gives sensitivity coeff_j = P_j B_j, residual equal to the propagated
    injected noise suffix_j = sum_{l>=j} P_l s_l eps_l, and residual
    variance scale var_j = sum_{l>=j} P_l^2 s_l^2. s_l counts only noise
    the sampler actually injected, so steps after the last injection get
    var 0 and the corrected target masks them.
    """
    k = schedule.n_steps
    n, dim = states.shape[1], states.shape[2]
    u_all = np.empty(k)
    b_all = np.empty(k)
    s_all = np.empty(k)
    for j in range(k):
        t, delta, sigma = schedule.step_params(j)
        if mode != "sde":
            sigma = 0.0  # deterministic chains follow the noiseless recursion
        u_all[j], b_all[j] = affine_coefficients(t, delta, sigma)
        injected = mode == "sde" and ((j < k - 1) or last_step_noise)
        s_all[j] = sigma * np.sqrt(delta) if injected else 0.0
    tail = np.empty(k)  # tail[j] = prod_{m>j} U_m
    acc = 1.0
    for j in range(k - 1, -1, -1):
        tail[j] = acc
        acc *= u_all[j]
    coeff = tail * b_all
    suffix = np.zeros((k + 1, n, dim))
    var = np.zeros(k + 1)
    for j in range(k - 1, -1, -1):
        suffix[j] = suffix[j + 1] + tail[j] * s_all[j] * noise[j]
        var[j] = var[j + 1] + tail[j] ** 2 * s_all[j] ** 2
    return coeff, suffix[:k], var[:k]


def collect(field, env_factory, n_envs, epochs, schedule, seed, *, mode="sde",
            selector=None, last_step_noise=False, record_all_steps=False,
            epoch_base=0):
    """Gather a fresh on-policy buffer.

    field is the behavior policy for every chain in the buffer. env_factory
    builds one env per slot; all slots must produce the same dims and
    horizon. Episode returns are broadcast onto each of the episode's
    records after it finishes. epoch_base shifts the epoch index used for
    stream derivation (and stored on records), so repeated collections
    under one master seed draw disjoint randomness.
    """
    if n_envs < 1 or epochs < 1:
        raise ContractError("n_envs and epochs must be positive")
    if mode not in ("ode", "sde"):
        raise ContractError(f"mode must be ode or sde, got {mode!r}")
    selector = selector or StepSelector("uniform")
    selector.validate_for(schedule.n_steps)
    envs = [env_factory() for _ in range(n_envs)]
    dim = envs[0].action_dim
    rows = []
    episode_rewards = []
    successes = []
    for local_epoch in range(epochs):
        epoch = epoch_base + local_epoch
        episode_seeds = [
            int(stream(seed, "env-seed", epoch, i).integers(0, 2 ** 62))
            for i in range(n_envs)
        ]
        streams = [stream(seed, "episode", epoch, i) for i in range(n_envs)]
        resets = [envs[i].reset(episode_seeds[i]) for i in range(n_envs)]
        observations = np.stack([r[0] for r in resets])
        contexts = np.stack([r[1] for r in resets])
        episode_rows = [[] for _ in range(n_envs)]
        returns = np.zeros(n_envs)
        done = False
        env_step = 0
        while not done:
            x1_rows = np.stack([streams[i].standard_normal(dim) for i in range(n_envs)])
            states, velocities, noise = batched_chains(
                field, schedule, x1_rows, contexts, observations, streams,
                mode, last_step_noise,
            )
            coeff, suffix, var = _terminal_pieces(
                schedule, states, velocities, noise, mode, last_step_noise
            )
            actions = states[-1]
            for i in range(n_envs):
                if record_all_steps:
                    picked = range(schedule.n_steps)
                else:
                    picked = [selector.pick(streams[i], schedule.n_steps)]
                for j in picked:
                    t, delta, sigma = schedule.step_params(j)
                    episode_rows[i].append({
                        "x": states[j, i].copy(),
                        "x_next": states[j + 1, i].copy(),
                        "v_old": velocities[j, i].copy(),
                        "t": t,
                        "delta_t": delta,
                        "sigma_t": sigma,
                        "context": contexts[i].copy(),
                        "observation": observations[i].copy(),
                        "reward": 0.0,
                        "env_index": i,
                        "env_step": env_step,
                        "solver_index": j,
                        "epoch": epoch,
                        "seed": int(seed),
                        "terminal_state": actions[i].copy(),
                        "terminal_residual": suffix[j, i].copy(),
                        "terminal_coeff": float(coeff[j]),
                        "terminal_var": float(var[j]),
                    })
            step_results = [envs[i].step(actions[i]) for i in range(n_envs)]
            observations = np.stack([r[0] for r in step_results])
            returns += np.array([r[2] for r in step_results])
            done = step_results[0][1]
            if any(r[1] != done for r in step_results):
                raise ContractError("env slots fell out of lockstep; horizons differ")
            env_step += 1
        for i in range(n_envs):
            reward = float(returns[i])
            episode_rewards.append(reward)
            successes.append(bool(envs[i].episode_success))
            for row in episode_rows[i]:
                row["reward"] = reward
            rows.extend(episode_rows[i])
    columns = {}
    for name in _VECTOR_FIELDS:
        columns[name] = np.stack([row[name] for row in rows])
    for name in _FLOAT_FIELDS:
        columns[name] = np.array([row[name] for row in rows], dtype=np.float64)
    for name in _INT_FIELDS:
        columns[name] = np.array([row[name] for row in rows], dtype=np.int64)
    return RolloutBuffer(
        columns=columns,
        n_episodes=len(episode_rewards),
        episode_rewards=np.array(episode_rewards),
        success_rate=float(np.mean(successes)) if successes else 0.0,
    )
