"""Dense float64 tensors with reverse-mode automatic differentiation.

A small define-by-run engine: ops build a graph of ``Tensor`` nodes and
``backward()`` on a scalar root fills ``.grad`` on every leaf created with
``requires_grad=True``. Repeated ``backward()`` calls accumulate into
``.grad`` until ``zero_grad()`` resets it.

Everything is float64. Ops are eager (values computed immediately); only
the backward closures are deferred. Inside a ``no_grad()`` block the same
numerical code runs but no graph is recorded, so forward values are
bitwise identical between training and inference.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (e.g. backward on a non-scalar)."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 array plus an optional gradient and backward closure.

    ``_backward(g)`` returns ``(parent, parent_grad)`` pairs; the driver in
    ``backward()`` routes them. Leaves (no parents) with ``requires_grad``
    receive accumulated gradients in ``.grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values, cut from the graph."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # convenience operators; all defer to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, backward) -> Tensor:
    """Internal node constructor; drops graph bookkeeping when not needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _topo_order(root: Tensor) -> list:
    """Topological order of the graph below ``root`` (parents first)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor):
    """Backpropagate from a scalar root.

    Fills ``.grad`` on every ``requires_grad`` leaf reachable from ``root``.
    Each node's closure runs exactly once. Calling backward again on a new
    graph over the same leaves accumulates into their ``.grad``.
    """
    if root.data.size != 1:
        raise GraphError(
            f"backward() requires a scalar root, got shape {root.data.shape}"
        )
    order = _topo_order(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    """Elementwise add; also (r,c) + (c,) row-broadcast for biases."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape == b.data.shape:
        def bw(g):
            return ((a, g), (b, g))
        return _make(a.data + b.data, (a, b), bw)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        def bw(g):
            return ((a, g), (b, g.sum(axis=0)))
        return _make(a.data + b.data, (a, b), bw)
    raise ShapeError(f"add shapes incompatible: {a.data.shape} vs {b.data.shape}")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes incompatible: {a.data.shape} vs {b.data.shape}")

    def bw(g):
        return ((a, g), (b, -g))

    return _make(a.data - b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return ((a, -g),)

    return _make(-a.data, (a,), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes incompatible: {a.data.shape} vs {b.data.shape}")

    def bw(g):
        return ((a, g * b.data), (b, g * a.data))

    return _make(a.data * b.data, (a, b), bw)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)

    def bw(g):
        return ((a, g * s),)

    return _make(a.data * s, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )

    def bw(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _make(a.data @ b.data, (a, b), bw)


def dot(a, b) -> Tensor:
    """Inner product of two 1-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"dot expects equal 1-D shapes, got {a.data.shape}, {b.data.shape}")

    def bw(g):
        return ((a, g * b.data), (b, g * a.data))

    return _make(np.dot(a.data, b.data), (a, b), bw)


def div_scalar(a, s) -> Tensor:
    """Divide a tensor elementwise by a scalar tensor."""
    a, s = as_tensor(a), as_tensor(s)
    if s.data.size != 1:
        raise ShapeError(f"div_scalar divisor must be scalar, got {s.data.shape}")
    sval = float(s.data.reshape(()))
    out_data = a.data / sval

    def bw(g):
        gs = -np.sum(g * a.data) / (sval * sval)
        return ((a, g / sval), (s, np.full(s.data.shape, gs)))

    return _make(out_data, (a, s), bw)


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return ((a, g.T),)

    return _make(a.data.T, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape

    def bw(g):
        return ((a, g.reshape(old)),)

    return _make(a.data.reshape(shape), (a,), bw)


def take_rows(a, idx) -> Tensor:
    """Gather rows of a 2-D tensor (also serves as embedding lookup)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ((a, ga),)

    return _make(a.data[idx], (a,), bw)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return ((a, ga),)

    return _make(a.data[:, start:stop].copy(), (a,), bw)


def concat_cols(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        return tuple(
            (p, g[:, offsets[i]:offsets[i + 1]]) for i, p in enumerate(parts)
        )

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, bw)


def stack_vector(scalars) -> Tensor:
    """Stack scalar tensors into a 1-D tensor."""
    scalars = [as_tensor(s) for s in scalars]
    for s in scalars:
        if s.data.size != 1:
            raise ShapeError(f"stack_vector expects scalars, got shape {s.data.shape}")

    def bw(g):
        gf = g.reshape(-1)
        return tuple((s, np.full(s.data.shape, gf[i])) for i, s in enumerate(scalars))

    return _make(np.array([s.data.reshape(()) for s in scalars]), scalars, bw)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is None:
            return ((a, np.full_like(a.data, float(g))),)
        return ((a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()),)

    return _make(np.sum(a.data, axis=axis), (a,), bw)


def tmax(a, axis=None):
    """Max reduction. Returns ``(Tensor, argmax indices)``.

    Gradient flows only to the (first) max position along the reduced axis.
    """
    a = as_tensor(a)
    if axis is None:
        arg = int(np.argmax(a.data))
        pos = np.unravel_index(arg, a.data.shape)

        def bw(g):
            ga = np.zeros_like(a.data)
            ga[pos] = float(g)
            return ((a, ga),)

        return _make(np.max(a.data), (a,), bw), arg

    arg = np.argmax(a.data, axis=axis)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(
            ga, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis
        )
        return ((a, ga),)

    return _make(np.max(a.data, axis=axis), (a,), bw), arg


def logsumexp(a) -> Tensor:
    """Stable log-sum-exp of a 1-D tensor; gradient is softmax(a)."""
    a = as_tensor(a)
    m = float(np.max(a.data))
    z = np.exp(a.data - m)
    s = float(np.sum(z))
    soft = z / s

    def bw(g):
        return ((a, float(g) * soft),)

    return _make(np.asarray(m + math.log(s)), (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore"):
        out_data = np.log(a.data)  # exact zeros map to -inf by design

    def bw(g):
        return ((a, g / a.data),)

    return _make(out_data, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        return ((a, g * out_data),)

    return _make(out_data, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bw(g):
        return ((a, g * (1.0 - out_data * out_data)),)

    return _make(out_data, (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return ((a, g * dx),)

    return _make(out_data, (a,), bw)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``.

    Outputs are positive and sum to 1 along the axis; max-subtraction keeps
    the exponentials bounded for any finite input.
    """
    a = as_tensor(a)
    x = a.data
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        return ((a, y * (g - inner)),)

    return _make(y, (a,), bw)


def normalize_rows(a) -> Tensor:
    """L2-normalize each row of a 2-D tensor. All-zero rows pass through."""
    a = as_tensor(a)
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    y = a.data / safe

    def bw(g):
        inner = np.sum(g * y, axis=1, keepdims=True)
        return ((a, (g - y * inner) / safe),)

    return _make(y, (a,), bw)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learned scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def bw(g):
        gg = g * gamma.data
        gx = inv * (
            gg
            - gg.mean(axis=-1, keepdims=True)
            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(x.ndim - 1))
        return ((a, gx), (gamma, (g * xhat).sum(axis=axes)), (beta, g.sum(axis=axes)))

    return _make(out_data, (a, gamma, beta), bw)


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Forward value is ``hard``; gradient passes to ``soft`` unchanged.

    Equivalent to ``hard + soft - stop_gradient(soft)``: the hard constant
    contributes no gradient, the soft path an identity Jacobian.
    """
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.data.shape:
        raise ShapeError(
            f"straight_through shapes disagree: {hard.shape} vs {soft.data.shape}"
        )

    def bw(g):
        return ((soft, g),)

    return _make(hard.copy(), (soft,), bw)
