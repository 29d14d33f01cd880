"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps a numpy array and, when gradients are requested, links back
to its parents so that ``backward`` can replay the chain rule. The recorded
graph is single-use: after ``backward`` the tape is cleared and a second call
raises. Dense tensors of rank <= 4 only; no GPU, no higher-order derivatives.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Shape mismatch in a primitive; message names the offending primitive."""


class TapeError(RuntimeError):
    """Misuse of the differentiation tape (non-scalar loss, reused tape)."""


class Tensor:
    """Dense n-d array participating in a differentiation tape.

    ``_parents`` holds ``(parent, grad_fn)`` pairs where ``grad_fn`` maps the
    output gradient to this parent's gradient contribution. Leaves created
    with ``requires_grad=True`` accumulate into ``.grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"{_op}: rank {arr.ndim} > 4 unsupported")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._op = _op
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op!r})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, op):
    requires = any(p.requires_grad for p, _ in parents)
    if not requires:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _op=op)


# -- elementwise binary primitives --------------------------------------

def _binary(a, b, op, fwd, da, db):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = fwd(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} vs {b.shape}") from e
    parents = (
        (a, lambda g: _unbroadcast(da(g, a.data, b.data), a.shape)),
        (b, lambda g: _unbroadcast(db(g, a.data, b.data), b.shape)),
    )
    return _make(out, parents, op)


def add(a, b):
    return _binary(a, b, "add", np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, "sub", np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, "mul", np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(a, b, "div", np.divide,
                   lambda g, x, y: g / y,
                   lambda g, x, y: -g * x / (y * y))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    parents = (
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    )
    return _make(out, parents, "matmul")


# -- elementwise unary primitives ---------------------------------------

def _unary(a, op, fwd, dfn):
    a = as_tensor(a)
    out = fwd(a.data)
    return _make(out, ((a, lambda g: dfn(g, a.data, out)),), op)


def neg(a):
    return _unary(a, "neg", np.negative, lambda g, x, y: -g)


def exp(a):
    return _unary(a, "exp", np.exp, lambda g, x, y: g * y)


def log(a):
    return _unary(a, "log", np.log, lambda g, x, y: g / x)


def square(a):
    return _unary(a, "square", np.square, lambda g, x, y: 2.0 * g * x)


def sqrt(a):
    return _unary(a, "sqrt", np.sqrt, lambda g, x, y: 0.5 * g / y)


def abs_(a):
    return _unary(a, "abs", np.abs, lambda g, x, y: g * np.sign(x))


def relu(a):
    return _unary(a, "relu", lambda x: np.maximum(x, 0.0),
                  lambda g, x, y: g * (x > 0.0))


def _sigmoid(x):
    # evaluate on the side that cannot overflow exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(a):
    def _d(g, x, y):
        s = _sigmoid(np.asarray(x, dtype=np.float64))
        return g * (s + x * s * (1.0 - s))
    return _unary(a, "silu",
                  lambda x: x * _sigmoid(np.asarray(x, dtype=np.float64)), _d)


def softmax(a, axis=-1):
    """Numerically stable softmax along ``axis`` (row-wise for matrices)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _grad(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _make(out, ((a, _grad),), "softmax")


# -- reductions and shape primitives ------------------------------------

def sum_(a, axis=None):
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def _grad(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()

    return _make(out, ((a, _grad),), "sum")


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis)

    def _grad(g):
        if axis is None:
            return np.broadcast_to(g / n, a.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy()

    return _make(out, ((a, _grad),), "mean")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _grad_fn(i):
        def _grad(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]
        return _grad

    parents = tuple((t, _grad_fn(i)) for i, t in enumerate(tensors))
    return _make(out, parents, "concat")


def slice_(a, idx):
    a = as_tensor(a)
    out = a.data[idx]

    def _grad(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return full

    return _make(out, ((a, _grad),), "slice")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from e
    return _make(out, ((a, lambda g: g.reshape(a.shape)),), "reshape")


def transpose(a):
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.data.ndim < 2:
        raise ShapeError(f"transpose: rank {a.data.ndim} < 2")
    return _make(a.data.swapaxes(-1, -2),
                 ((a, lambda g: g.swapaxes(-1, -2)),), "transpose")


def broadcast(a, shape):
    """Expand ``a`` to ``shape`` (leading-dimension expansion and size-1 axes)."""
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as e:
        raise ShapeError(f"broadcast: {a.shape} -> {shape}") from e
    return _make(out, ((a, lambda g: _unbroadcast(g, a.shape)),), "broadcast")


# -- backward ------------------------------------------------------------

def backward(loss):
    """Populate ``.grad`` on every reachable leaf, then clear the tape.

    ``loss`` must be scalar. The recorded graph is consumed; calling
    ``backward`` twice on the same loss raises ``TapeError``.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise TapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise TapeError("backward: tape already consumed")
    if not loss.requires_grad:
        loss._consumed = True
        return

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, grad_fn in node._parents:
            if not parent.requires_grad:
                continue
            contrib = grad_fn(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib

    for node in order:
        node._parents = ()
    loss._consumed = True


PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "matmul": matmul,
    "concat": concat, "slice": slice_, "reshape": reshape, "transpose": transpose,
    "sum": sum_, "mean": mean, "relu": relu, "silu": silu, "softmax": softmax,
    "exp": exp, "log": log, "square": square, "sqrt": sqrt, "abs": abs_,
    "broadcast": broadcast, "neg": neg,
}
