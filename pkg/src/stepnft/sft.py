"""Supervised flow-matching pretraining on expert demonstrations.

Fits a velocity field by conditional flow matching: draw a demo action x0,
a noise endpoint x1 ~ N(0, I), a time t ~ U[0, 1), form the interpolant
x_t = t x1 + (1 - t) x0, and regress the field onto the straight-line
target x1 - x0:

    loss = mean_batch || v(x_t, t, c, s) - (x1 - x0) ||^2.

A field trained this way transports noise to the demo distribution under the
deterministic sampler, which is the starting policy the online trainer
refines.
"""

import numpy as np

from . import autodiff, policy
from .errors import ContractError
from .optim import make_optimizer
from .rng import stream


def flow_matching_batch(field, actions, contexts, observations, t, x1):
    """Build the batch loss graph; returns (loss Tensor, per-sample values)."""
    x0 = np.asarray(actions, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ContractError(f"actions and noise shapes differ: {x0.shape} vs {x1.shape}")
    t = np.asarray(t, dtype=np.float64)
    x_t = t[:, None] * x1 + (1.0 - t[:, None]) * x0
    target = x1 - x0
    v = field.tape_forward_batch(x_t, t, contexts, observations)
    per_sample = autodiff.tsum(autodiff.square(v - target), axis=1)
    return autodiff.tmean(per_sample), per_sample.data


def train_flow_matching(field, demos, steps, batch_size, learning_rate, seed,
                        optimizer="adam"):
    """Run the pretraining loop; returns (trained field, loss history)."""
    if steps < 0:
        raise ContractError(f"steps must be nonnegative, got {steps}")
    if batch_size < 1:
        raise ContractError(f"batch_size must be positive, got {batch_size}")
    if len(demos) == 0:
        raise ContractError("demo set is empty")
    opt = make_optimizer(optimizer, learning_rate)
    gen = stream(seed, "sft")
    action_dim = demos.actions.shape[1]
    losses = np.empty(steps, dtype=np.float64)
    current = field
    for step_idx in range(steps):
        idx = gen.integers(0, len(demos), batch_size)
        t = gen.uniform(0.0, 1.0, batch_size)
        x1 = gen.standard_normal((batch_size, action_dim))
        loss, _ = flow_matching_batch(
            current,
            demos.actions[idx],
            demos.contexts[idx],
            demos.observations[idx],
            t,
            x1,
        )
        tape = policy.backward(current, loss)
        losses[step_idx] = tape.value
        current = current.with_params(opt.step(current.params, tape.grad))
    return current, losses
