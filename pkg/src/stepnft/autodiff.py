"""Minimal reverse-mode tape over float64 numpy arrays.

Just enough autodiff for small MLP policies and the step-preference losses:
elementwise arithmetic with broadcasting, a deterministic matmul, tanh/relu,
square, softplus, and sum/mean reductions. Gradients are exact reverse-mode,
accumulated into .grad on every node reachable from the loss.

Two deliberate choices:
  * every matmul goes through np.einsum with optimize=False, because BLAS @
    is not bitwise stable across batch shapes and recorded rollout velocities
    must replay bit-exactly;
  * data is float64 everywhere, no dtype promotion surprises.
"""

import numpy as np

from .errors import ContractError


def _unbroadcast(grad, shape):
    # Inverse of numpy broadcasting: sum grad down to the operand's shape.
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    param_slice tags leaves that map into a flat parameter vector as
    (start, stop); backward() fills .grad on every node and callers collect
    tagged leaves to assemble flat gradients.
    """

    __slots__ = ("data", "grad", "_parents", "_backward", "param_slice")

    # ndarray op Tensor must dispatch to our __r*__ methods, not numpy's
    # elementwise object iteration
    __array_ufunc__ = None

    def __init__(self, data, parents=(), param_slice=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = None
        self.param_slice = param_slice

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        other = wrap(other)
        out = Tensor(self.data + other.data, (self, other))

        def back():
            self.grad += _unbroadcast(out.grad, self.data.shape)
            other.grad += _unbroadcast(out.grad, other.data.shape)

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def back():
            self.grad += -out.grad

        out._backward = back
        return out

    def __sub__(self, other):
        return self + (-wrap(other))

    def __rsub__(self, other):
        return wrap(other) + (-self)

    def __mul__(self, other):
        other = wrap(other)
        out = Tensor(self.data * other.data, (self, other))

        def back():
            self.grad += _unbroadcast(out.grad * other.data, self.data.shape)
            other.grad += _unbroadcast(out.grad * self.data, other.data.shape)

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ContractError("tensor/tensor division is not supported; multiply by a reciprocal")
        return self * (1.0 / float(scalar))


def wrap(x):
    """Lift a scalar or ndarray into a constant graph node."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def matmul(a, b):
    """(n,k) @ (k,m) with a bitwise batch-stable kernel."""
    a, b = wrap(a), wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(np.einsum("ij,jk->ik", a.data, b.data, optimize=False), (a, b))

    def back():
        a.grad += np.einsum("ik,jk->ij", out.grad, b.data, optimize=False)
        b.grad += np.einsum("ij,ik->jk", a.data, out.grad, optimize=False)

    out._backward = back
    return out


def tanh(x):
    out = Tensor(np.tanh(x.data), (x,))

    def back():
        x.grad += out.grad * (1.0 - out.data * out.data)

    out._backward = back
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0), (x,))

    def back():
        x.grad += out.grad * (x.data > 0.0)

    out._backward = back
    return out


def square(x):
    out = Tensor(x.data * x.data, (x,))

    def back():
        x.grad += out.grad * (2.0 * x.data)

    out._backward = back
    return out


def softplus_values(z):
    """Stable elementwise log(1 + exp(z)) on a plain ndarray.

    Branches at z > 30 via softplus(z) = z + softplus(-z) so large positive
    arguments never overflow; below the branch the direct form is exact.
    """
    z = np.asarray(z, dtype=np.float64)
    hi = z > 30.0
    return np.where(
        hi,
        z + np.log1p(np.exp(-np.maximum(z, 30.0))),
        np.log1p(np.exp(np.minimum(z, 30.0))),
    )


def sigmoid_values(z):
    """Stable elementwise logistic function on a plain ndarray."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    out = Tensor(softplus_values(x.data), (x,))

    def back():
        x.grad += out.grad * sigmoid_values(x.data)

    out._backward = back
    return out


def tsum(x, axis=None, keepdims=False):
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims), (x,))

    def back():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.grad += np.broadcast_to(g, x.data.shape)

    out._backward = back
    return out


def tmean(x):
    return tsum(x) * (1.0 / x.data.size)


def backward(root):
    """Run reverse-mode accumulation from a scalar root.

    Zeroes .grad on the reachable subgraph first, so a graph can only be
    differentiated once per construction, which is how the package uses it.
    """
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    for node in topo:
        node.grad = np.zeros_like(node.data)
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


def collect_param_grads(root, n_params):
    """Assemble a flat gradient from param_slice-tagged leaves under root.

    Call after backward(root). Slices absent from the graph stay zero.
    """
    flat = np.zeros(n_params, dtype=np.float64)
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.param_slice is not None and node.grad is not None:
            start, stop = node.param_slice
            flat[start:stop] += node.grad.ravel()
        stack.extend(node._parents)
    return flat
