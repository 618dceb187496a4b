"""Flat-vector optimizers.

Parameters are single float64 vectors; step() returns the updated vector and
mutates only the optimizer's own state. Arithmetic is elementwise numpy, so
updates are deterministic for identical gradient sequences.
"""

import numpy as np

from .errors import ContractError


class Sgd:
    def __init__(self, learning_rate):
        if learning_rate <= 0.0:
            raise ContractError(f"learning_rate must be positive, got {learning_rate}")
        self.learning_rate = float(learning_rate)

    def step(self, params, grad):
        if params.shape != grad.shape:
            raise ContractError("params and grad must share a shape")
        return params - self.learning_rate * grad


class Adam:
    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0.0:
            raise ContractError(f"learning_rate must be positive, got {learning_rate}")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = None
        self.v = None
        self.count = 0

    def step(self, params, grad):
        if params.shape != grad.shape:
            raise ContractError("params and grad must share a shape")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.count)
        v_hat = self.v / (1.0 - self.beta2 ** self.count)
        return params - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name, learning_rate):
    if name == "adam":
        return Adam(learning_rate)
    if name == "sgd":
        return Sgd(learning_rate)
    raise ContractError(f"unknown optimizer {name!r}")
