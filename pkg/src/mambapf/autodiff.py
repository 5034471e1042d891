"""Reverse-mode automatic differentiation over numpy tensors.

A define-by-run tape: every operation returns a :class:`Tensor` that records
its parents together with a vector-Jacobian callback. ``backward`` walks the
graph once in reverse topological order, so gradient accumulation is
deterministic (same graph, same floating point result).

All values are float64 ndarrays. Broadcasting follows numpy semantics; the
gradient of a broadcast operand is sum-reduced back to its shape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, NumericError

Array = np.ndarray


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """A node in the computation graph.

    ``parents`` is a tuple of ``(tensor, vjp)`` pairs where ``vjp`` maps the
    gradient w.r.t. this node to the gradient contribution for that parent.
    Leaf tensors (``parents == ()``) are parameters or constants.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "name")

    def __init__(self, value, parents=(), requires_grad=False, name=""):
        self.value = _as_array(value)
        self.parents: tuple = tuple(parents)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p, _ in self.parents
        )
        self.grad: Array | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name="") -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum-reduce ``grad`` so it matches ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar ``loss`` into every reachable node."""
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise InvalidInputError("backward requires a scalar loss node")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            if not parent.requires_grad:
                continue
            contrib = vjp(node.grad)
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad = parent.grad + contrib


# ----------------------------------------------------------------------
# primitive operations
# ----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value
    return Tensor(out, parents=(
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value - b.value
    return Tensor(out, parents=(
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    ))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.value, parents=((a, lambda g: -g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value
    return Tensor(out, parents=(
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return Tensor(out, parents=(
        (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(-g * a.value / (b.value ** 2), b.value.shape)),
    ))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value @ b.value
    return Tensor(out, parents=(
        (a, lambda g: g @ b.value.T if b.value.ndim == 2 else np.outer(g, b.value)),
        (b, lambda g: a.value.T @ g),
    ))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = a.value ** p
    return Tensor(out, parents=((a, lambda g: g * p * a.value ** (p - 1.0)),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return Tensor(out, parents=((a, lambda g: g * 0.5 / out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return Tensor(out, parents=((a, lambda g: g * out),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.value), parents=((a, lambda g: g / a.value),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return Tensor(out, parents=((a, lambda g: g * (1.0 - out ** 2)),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return Tensor(out, parents=((a, lambda g: g * out * (1.0 - out)),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    out = a.value * s
    return Tensor(out, parents=((a, lambda g: g * (s * (1.0 + a.value * (1.0 - s)))),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    out = np.logaddexp(0.0, x)
    return Tensor(out, parents=((a, lambda g: g / (1.0 + np.exp(-x))),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0.0
    return Tensor(a.value * mask, parents=((a, lambda g: g * mask),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.value)
    return Tensor(np.abs(a.value), parents=((a, lambda g: g * s),))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return Tensor(out, parents=((a, vjp),))


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.value.shape[i] for i in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.value.reshape(shape)
    return Tensor(out, parents=((a, lambda g: g.reshape(a.value.shape)),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.value, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return Tensor(out, parents=((a, lambda g: np.transpose(g, inv)),))


def concat(tensors: Sequence, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return Tensor(out, parents=tuple((t, make_vjp(i)) for i, t in enumerate(tensors)))


def gather_rows(a, index: Array) -> Tensor:
    """Select rows ``a[index]`` along axis 0; backward scatter-adds."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    out = a.value[index]

    def vjp(g):
        da = np.zeros_like(a.value)
        np.add.at(da, index, g)
        return da

    return Tensor(out, parents=((a, vjp),))


def scatter_rows_add(values, index: Array, num_rows: int) -> Tensor:
    """Sum rows of ``values`` into an output of ``num_rows`` rows by index."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.intp)
    out = np.zeros((num_rows,) + values.value.shape[1:], dtype=np.float64)
    np.add.at(out, index, values.value)
    return Tensor(out, parents=((values, lambda g: g[index]),))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learnable gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xv = x.value
    n = xv.shape[-1]
    mu = xv.mean(axis=-1, keepdims=True)
    var = ((xv - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    out = gain.value * xhat + bias.value

    def vjp_x(g):
        dxhat = g * gain.value
        return inv / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )

    lead = tuple(range(xv.ndim - 1))
    return Tensor(out, parents=(
        (x, vjp_x),
        (gain, lambda g: (g * xhat).sum(axis=lead)),
        (bias, lambda g: g.sum(axis=lead)),
    ))


def causal_dwconv(x, kernel) -> Tensor:
    """Causal depth-wise 1-D convolution.

    ``x`` has shape (L, C), ``kernel`` has shape (C, W).
    ``y[t, c] = sum_j kernel[c, j] * x[t - j, c]`` with zero left padding.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    xv, kv = x.value, kernel.value
    L, C = xv.shape
    W = kv.shape[1]
    out = np.zeros_like(xv)
    for j in range(W):
        if j == 0:
            out += kv[:, 0] * xv
        elif j < L:
            out[j:] += kv[:, j] * xv[:-j]

    def vjp_x(g):
        dx = np.zeros_like(xv)
        for j in range(W):
            if j == 0:
                dx += kv[:, 0] * g
            elif j < L:
                dx[:-j] += kv[:, j] * g[j:]
        return dx

    def vjp_k(g):
        dk = np.zeros_like(kv)
        for j in range(W):
            if j == 0:
                dk[:, 0] = (g * xv).sum(axis=0)
            elif j < L:
                dk[:, j] = (g[j:] * xv[:-j]).sum(axis=0)
        return dk

    return Tensor(out, parents=((x, vjp_x), (kernel, vjp_k)))


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.value)):
        raise NumericError(f"non-finite values in {what}")
    return t


def collect_gradients(params: dict[str, Tensor]) -> dict[str, Array]:
    """Read accumulated gradients, substituting zeros for untouched leaves."""
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.value))
        for name, p in params.items()
    }
