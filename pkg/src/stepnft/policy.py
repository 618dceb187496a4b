"""Velocity-field policy networks.

A policy is a small MLP v(x, t, c, s) mapping the current sample x, the flow
time t, a task context c, and an environment observation s to a velocity with
the same dimension as x. Parameters live in one flat float64 vector so
optimizers, EMA tracking, and checkpoints all operate on a single array.

The numpy forward path and the tape forward path share the same kernels, so a
velocity recorded during a rollout is bit-identical to the one the training
graph recomputes for the same parameters and inputs.
"""

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import Tensor
from .errors import CheckpointError, ContractError
from .rng import stream

_ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass(frozen=True)
class Architecture:
    """Layer widths plus the input layout split.

    widths[0] is the full input width; when the split dims are given they
    must satisfy widths[0] == x_dim + 1 + context_dim + observation_dim
    (the 1 is the time scalar) and widths[-1] == x_dim. Input rows are
    assembled in the fixed order [x, t, context, observation].
    """

    widths: tuple
    activation: str = "tanh"
    x_dim: int = None
    context_dim: int = None
    observation_dim: int = None

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ContractError("architecture needs at least an input and an output layer")
        if any((not isinstance(w, (int, np.integer))) or w < 1 for w in self.widths):
            raise ContractError(f"layer widths must be positive ints, got {self.widths}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}, expected one of {_ACTIVATIONS}")
        dims = (self.x_dim, self.context_dim, self.observation_dim)
        if any(d is not None for d in dims):
            if any(d is None for d in dims):
                raise ContractError("give all of x_dim/context_dim/observation_dim or none")
            expected = self.x_dim + 1 + self.context_dim + self.observation_dim
            if self.widths[0] != expected:
                raise ContractError(
                    f"widths[0]={self.widths[0]} but x/t/context/observation need {expected}"
                )
            if self.widths[-1] != self.x_dim:
                raise ContractError(f"output width {self.widths[-1]} must equal x_dim {self.x_dim}")

    @classmethod
    def for_policy(cls, x_dim, context_dim, observation_dim, hidden=(64, 64), activation="tanh"):
        widths = (x_dim + 1 + context_dim + observation_dim,) + tuple(hidden) + (x_dim,)
        return cls(
            widths=widths,
            activation=activation,
            x_dim=x_dim,
            context_dim=context_dim,
            observation_dim=observation_dim,
        )

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def param_count(self):
        return sum(
            fan_in * fan_out + fan_out
            for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:])
        )

    def layer_slices(self):
        """Yield (weight_slice, bias_slice, (fan_in, fan_out)) per layer.

        Flat layout is [W0, b0, W1, b1, ...] with row-major weights.
        """
        offset = 0
        out = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w = (offset, offset + fan_in * fan_out)
            offset = w[1]
            b = (offset, offset + fan_out)
            offset = b[1]
            out.append((w, b, (fan_in, fan_out)))
        return out

    def to_header(self):
        return {
            "widths": list(self.widths),
            "activation": self.activation,
            "x_dim": self.x_dim,
            "context_dim": self.context_dim,
            "observation_dim": self.observation_dim,
        }

    @classmethod
    def from_header(cls, header):
        return cls(
            widths=tuple(header["widths"]),
            activation=header["activation"],
            x_dim=header["x_dim"],
            context_dim=header["context_dim"],
            observation_dim=header["observation_dim"],
        )


def init_field(arch, seed):
    """Fresh field with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameters.

    Draw order is fixed: layer by layer, weights (row-major) then bias, each
    layer from its own substream, so the init is stable under refactors that
    touch unrelated layers.
    """
    params = np.empty(arch.param_count, dtype=np.float64)
    for layer, (w, b, (fan_in, fan_out)) in enumerate(arch.layer_slices()):
        gen = stream(seed, "init", layer)
        bound = 1.0 / np.sqrt(fan_in)
        params[w[0]:w[1]] = gen.uniform(-bound, bound, fan_in * fan_out)
        params[b[0]:b[1]] = gen.uniform(-bound, bound, fan_out)
    return VelocityField(arch, params)


@dataclass
class VelocityField:
    """Architecture plus one flat parameter vector.

    The params array has a single writer at a time (the optimizer); everything
    else treats it as read-only. Two fields with equal params produce
    bit-identical outputs.
    """

    arch: Architecture
    params: np.ndarray

    def __post_init__(self):
        params = np.ascontiguousarray(self.params, dtype=np.float64)
        if params.ndim != 1 or params.size != self.arch.param_count:
            raise ContractError(
                f"expected {self.arch.param_count} flat params, got shape {params.shape}"
            )
        self.params = params

    def with_params(self, params):
        return VelocityField(self.arch, np.array(params, dtype=np.float64))

    def copy(self):
        return VelocityField(self.arch, self.params.copy())

    def _assemble_rows(self, x, t, context, observation):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            t = np.full(n, float(t))
        if t.shape != (n,):
            raise ContractError(f"t must be scalar or ({n},), got shape {t.shape}")
        context = np.atleast_2d(np.asarray(context, dtype=np.float64))
        observation = np.atleast_2d(np.asarray(observation, dtype=np.float64))
        if context.shape[0] == 1 and n > 1:
            context = np.broadcast_to(context, (n, context.shape[1]))
        if observation.shape[0] == 1 and n > 1:
            observation = np.broadcast_to(observation, (n, observation.shape[1]))
        arch = self.arch
        if arch.x_dim is not None:
            if x.shape[1] != arch.x_dim:
                raise ContractError(f"x has dim {x.shape[1]}, field expects {arch.x_dim}")
            if context.shape[1] != arch.context_dim:
                raise ContractError(
                    f"context has dim {context.shape[1]}, field expects {arch.context_dim}"
                )
            if observation.shape[1] != arch.observation_dim:
                raise ContractError(
                    f"observation has dim {observation.shape[1]}, field expects {arch.observation_dim}"
                )
        rows = np.concatenate([x, t[:, None], context, observation], axis=1)
        if rows.shape[1] != arch.widths[0]:
            raise ContractError(
                f"assembled input width {rows.shape[1]} != layer width {arch.widths[0]}"
            )
        return rows

    def forward_batch(self, x, t, context, observation):
        """Batched forward pass, (n, x_dim) -> (n, x_dim)."""
        h = self._assemble_rows(x, t, context, observation)
        slices = self.arch.layer_slices()
        for layer, (w, b, (fan_in, fan_out)) in enumerate(slices):
            weight = self.params[w[0]:w[1]].reshape(fan_in, fan_out)
            bias = self.params[b[0]:b[1]]
            h = np.einsum("ij,jk->ik", h, weight, optimize=False) + bias
            if layer < len(slices) - 1:
                h = _activate_np(h, self.arch.activation)
        return h

    def forward(self, x, t, context, observation):
        """Single-sample forward pass; bit-identical to a batch row."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ContractError(f"forward takes a 1-D x, got shape {x.shape}")
        return self.forward_batch(x[None, :], float(t), context, observation)[0]

    def tape_forward_batch(self, x, t, context, observation):
        """Forward pass through the autodiff tape; returns a Tensor.

        Uses the same einsum/add kernels as forward_batch, so values match
        that path bitwise while gradients flow to param_slice-tagged leaves.
        """
        rows = autodiff.wrap(self._assemble_rows(x, t, context, observation))
        slices = self.arch.layer_slices()
        h = rows
        for layer, (w, b, (fan_in, fan_out)) in enumerate(slices):
            weight = Tensor(self.params[w[0]:w[1]].reshape(fan_in, fan_out), param_slice=w)
            bias = Tensor(self.params[b[0]:b[1]], param_slice=b)
            h = autodiff.matmul(h, weight) + bias
            if layer < len(slices) - 1:
                h = _activate_tape(h, self.arch.activation)
        return h


def _activate_np(h, kind):
    if kind == "tanh":
        return np.tanh(h)
    if kind == "relu":
        return np.maximum(h, 0.0)
    return h


def _activate_tape(h, kind):
    if kind == "tanh":
        return autodiff.tanh(h)
    if kind == "relu":
        return autodiff.relu(h)
    return h


@dataclass(frozen=True)
class GradientTape:
    """Result of differentiating a scalar loss through a field."""

    value: float
    grad: np.ndarray


def backward(field, loss):
    """Differentiate a scalar loss Tensor w.r.t. the field's flat params."""
    if not isinstance(loss, Tensor):
        raise ContractError("loss must be a Tensor built from this field's tape forward")
    autodiff.backward(loss)
    grad = autodiff.collect_param_grads(loss, field.arch.param_count)
    return GradientTape(value=float(loss.data), grad=grad)


_MAGIC = b"SNFTCKPT"
_VERSION = 1


def save_checkpoint(field, path):
    """Write a field to disk; params round-trip bit-exactly.

    Layout: 8-byte magic, u32 version, u32 header length, JSON header
    (architecture + param sha256), raw little-endian float64 params.
    """
    raw = field.params.astype("<f8").tobytes()
    header = dict(field.arch.to_header())
    header["param_count"] = field.params.size
    header["sha256"] = hashlib.sha256(raw).hexdigest()
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        fh.write(raw)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < len(_MAGIC) + 8 or data[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, blob_len = struct.unpack_from("<II", data, len(_MAGIC))
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(_MAGIC) + 8
    try:
        header = json.loads(data[start:start + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    raw = data[start + blob_len:]
    expected = header["param_count"] * 8
    if len(raw) != expected:
        raise CheckpointError(
            f"checkpoint {path} truncated: {len(raw)} payload bytes, expected {expected}"
        )
    if hashlib.sha256(raw).hexdigest() != header["sha256"]:
        raise CheckpointError(f"checkpoint {path} failed its integrity check")
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return VelocityField(Architecture.from_header(header), params)
