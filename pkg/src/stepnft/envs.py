"""Toy control environments with flow-friendly action spaces.

Both tasks are episodic with a context drawn at reset, continuous vector
actions, and a terminal score. Rewards come in two kinds: "binary" pays 1
exactly on success, "shaped" pays exp(-0.5 (dist / radius)^2) in (0, 1] so
near misses still carry signal. Either way the env sets episode_success to
the binary outcome when an episode ends, which is what evaluation reports.

ContextBandit: a single action per episode must land within success_radius
of a hidden linear target target_scale * context. The observation is empty;
everything the policy needs is in the context.

ReachTask: a point starts at the origin and must reach a goal sampled on a
ring. Each env step consumes a chunk of chunk_len displacement vectors
(executed in order, each clipped to step_limit), so the action dimension is
2 * chunk_len. The observation is the current position.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .rng import stream


@dataclass(frozen=True)
class BanditConfig:
    context_dim: int = 2
    target_scale: float = 0.6
    success_radius: float = 0.25
    reward_kind: str = "binary"

    def __post_init__(self):
        if self.context_dim < 1:
            raise ContractError("context_dim must be positive")
        if self.success_radius <= 0.0:
            raise ContractError("success_radius must be positive")
        if self.reward_kind not in ("binary", "shaped"):
            raise ContractError(f"unknown reward_kind {self.reward_kind!r}")


@dataclass(frozen=True)
class ReachConfig:
    goal_radius_min: float = 0.3
    goal_radius_max: float = 0.8
    chunk_len: int = 5
    step_limit: float = 0.4
    horizon: int = 2
    success_radius: float = 0.15
    reward_kind: str = "binary"

    def __post_init__(self):
        if not 0.0 < self.goal_radius_min <= self.goal_radius_max:
            raise ContractError("need 0 < goal_radius_min <= goal_radius_max")
        if self.chunk_len < 1 or self.horizon < 1:
            raise ContractError("chunk_len and horizon must be positive")
        if self.step_limit <= 0.0 or self.success_radius <= 0.0:
            raise ContractError("step_limit and success_radius must be positive")
        if self.reward_kind not in ("binary", "shaped"):
            raise ContractError(f"unknown reward_kind {self.reward_kind!r}")


def _shaped_score(dist, radius):
    return float(np.exp(-0.5 * (dist / radius) ** 2))


class ContextBandit:
    """One-shot contextual aiming task."""

    def __init__(self, config=None):
        self.config = config or BanditConfig()
        self.context_dim = self.config.context_dim
        self.action_dim = self.config.context_dim
        self.observation_dim = 0
        self.horizon = 1
        self._context = None
        self._done = True
        self.episode_success = None

    def target_action(self, context):
        return self.config.target_scale * np.asarray(context, dtype=np.float64)

    def reset(self, seed):
        gen = stream(seed, "bandit-reset")
        self._context = gen.uniform(-1.0, 1.0, self.context_dim)
        self._done = False
        self.episode_success = None
        return np.zeros(0), self._context.copy()

    def step(self, action):
        if self._done:
            raise ContractError("episode is finished; call reset first")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise ContractError(
                f"action shape {action.shape} != ({self.action_dim},)"
            )
        if not np.all(np.isfinite(action)):
            raise ContractError("action contains non-finite values")
        dist = float(np.linalg.norm(action - self.target_action(self._context)))
        self._done = True
        self.episode_success = dist <= self.config.success_radius
        if self.config.reward_kind == "binary":
            reward = 1.0 if self.episode_success else 0.0
        else:
            reward = _shaped_score(dist, self.config.success_radius)
        return np.zeros(0), True, reward


class ReachTask:
    """Multi-step point-mass reaching with chunked displacement actions."""

    def __init__(self, config=None):
        self.config = config or ReachConfig()
        self.context_dim = 2
        self.action_dim = 2 * self.config.chunk_len
        self.observation_dim = 2
        self.horizon = self.config.horizon
        self._goal = None
        self._pos = None
        self._steps = 0
        self._done = True
        self.episode_success = None

    def reset(self, seed):
        gen = stream(seed, "reach-reset")
        cfg = self.config
        radius = gen.uniform(cfg.goal_radius_min, cfg.goal_radius_max)
        angle = gen.uniform(0.0, 2.0 * np.pi)
        self._goal = radius * np.array([np.cos(angle), np.sin(angle)])
        self._pos = np.zeros(2)
        self._steps = 0
        self._done = False
        self.episode_success = None
        return self._pos.copy(), self._goal.copy()

    def apply_chunk(self, pos, action):
        """Execute one action chunk from pos; displacements clip to step_limit."""
        pos = np.asarray(pos, dtype=np.float64).copy()
        moves = np.asarray(action, dtype=np.float64).reshape(self.config.chunk_len, 2)
        for move in moves:
            norm = float(np.linalg.norm(move))
            if norm > self.config.step_limit:
                move = move * (self.config.step_limit / norm)
            pos = pos + move
        return pos

    def step(self, action):
        if self._done:
            raise ContractError("episode is finished; call reset first")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise ContractError(f"action shape {action.shape} != ({self.action_dim},)")
        if not np.all(np.isfinite(action)):
            raise ContractError("action contains non-finite values")
        self._pos = self.apply_chunk(self._pos, action)
        self._steps += 1
        done = self._steps >= self.config.horizon
        reward = 0.0
        if done:
            self._done = True
            dist = float(np.linalg.norm(self._pos - self._goal))
            self.episode_success = dist <= self.config.success_radius
            if self.config.reward_kind == "binary":
                reward = 1.0 if self.episode_success else 0.0
            else:
                reward = _shaped_score(dist, self.config.success_radius)
        return self._pos.copy(), done, reward


def make_env(name, reward_kind="binary", **overrides):
    """Environment factory; name is "bandit" or "reach"."""
    if name == "bandit":
        return ContextBandit(BanditConfig(reward_kind=reward_kind, **overrides))
    if name == "reach":
        return ReachTask(ReachConfig(reward_kind=reward_kind, **overrides))
    raise ContractError(f"unknown environment {name!r}")


@dataclass(frozen=True)
class DemoSet:
    """Expert demonstrations: one row per env step."""

    contexts: np.ndarray
    observations: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        n = self.contexts.shape[0]
        if self.observations.shape[0] != n or self.actions.shape[0] != n:
            raise ContractError("demo arrays must share the leading dimension")

    def __len__(self):
        return self.contexts.shape[0]


def bandit_demos(config, n, noise_scale, seed):
    """Noisy optimal actions for the bandit: a = target + noise_scale * N(0, I)."""
    gen = stream(seed, "demos")
    contexts = gen.uniform(-1.0, 1.0, (n, config.context_dim))
    actions = config.target_scale * contexts + noise_scale * gen.standard_normal(
        (n, config.context_dim)
    )
    return DemoSet(
        contexts=contexts,
        observations=np.zeros((n, 0)),
        actions=actions,
    )


def reach_demos(config, n_episodes, noise_scale, seed):
    """Greedy straight-line expert rollouts with noisy executed actions.

    The expert walks toward the goal at up to step_limit per displacement;
    noise is added to each executed displacement so demonstrations cover a
    tube around the straight path. One demo row per env step.
    """
    gen = stream(seed, "demos")
    env = ReachTask(config)
    contexts, observations, actions = [], [], []
    for episode in range(n_episodes):
        seed_ep = int(gen.integers(0, 2 ** 62))
        obs, goal = env.reset(seed_ep)
        pos = obs.copy()
        for _ in range(config.horizon):
            chunk = np.zeros((config.chunk_len, 2))
            p = pos.copy()
            for i in range(config.chunk_len):
                to_goal = goal - p
                dist = float(np.linalg.norm(to_goal))
                if dist > 1e-12:
                    step_len = min(config.step_limit, dist)
                    move = to_goal * (step_len / dist)
                else:
                    move = np.zeros(2)
                move = move + noise_scale * gen.standard_normal(2)
                norm = float(np.linalg.norm(move))
                if norm > config.step_limit:
                    move = move * (config.step_limit / norm)
                chunk[i] = move
                p = p + move
            contexts.append(goal.copy())
            observations.append(pos.copy())
            actions.append(chunk.ravel())
            pos, done, _ = env.step(chunk.ravel())
            if done:
                break
    return DemoSet(
        contexts=np.array(contexts),
        observations=np.array(observations),
        actions=np.array(actions),
    )


def dump_episode(env, policy_action_fn, seed, path):
    """Play one episode and write a text trace for golden-file tests."""
    obs, context = env.reset(seed)
    lines = [
        f"# episode seed {seed}",
        "context " + " ".join(repr(float(x)) for x in context),
    ]
    done = False
    step_idx = 0
    total = 0.0
    while not done:
        action = policy_action_fn(obs, context)
        obs, done, reward = env.step(action)
        total += reward
        lines.append(
            f"step {step_idx} action " + " ".join(repr(float(a)) for a in action)
        )
        lines.append(
            f"step {step_idx} observation " + " ".join(repr(float(o)) for o in obs)
        )
        lines.append(f"step {step_idx} reward {reward!r}")
        step_idx += 1
    lines.append(f"success {int(bool(env.episode_success))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
