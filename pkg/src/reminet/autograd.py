"""Tape-based reverse-mode differentiation over small dense matrices.

Every :class:`Value` wraps a 2-D float64 array. Operations record a backward
rule and a sequence number; :func:`backward` replays the reachable part of the
recording in exact reverse order, accumulating gradients additively.

Broadcasting is limited to a ``(1, n)`` row vector against an ``(m, n)``
matrix, and to 1x1 scalars / Python numbers against anything.
"""

import itertools
import threading

import numpy as np

from . import kernels

__all__ = [
    "ShapeError",
    "GradientError",
    "Value",
    "Tape",
    "backward",
    "constant",
    "parameter",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "tanh",
    "sigmoid",
    "absolute",
    "square",
    "sqrt",
    "sum",
    "mean",
    "transpose",
    "reshape",
    "concat",
    "pair_message",
    "pairwise_l1",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class GradientError(RuntimeError):
    """Raised on contract violations in the backward pass or gradient checks."""


_local = threading.local()


def _next_seq():
    counter = getattr(_local, "counter", None)
    if counter is None:
        counter = _local.counter = itertools.count()
    return next(counter)


def _as_matrix(x):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"Value data must be at most 2-D, got shape {arr.shape}")
    return arr


class Value:
    """A dense matrix node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward", "op", "seq", "name")

    __array_priority__ = 1000  # make ndarray <op> Value dispatch to Value

    def __init__(self, data, requires_grad=False, parents=(), op="", name=None):
        self.data = _as_matrix(data)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data)
        self.parents = tuple(parents)
        self._backward = None
        self.op = op
        self.name = name
        self.seq = _next_seq()

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 Value, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


def constant(x):
    return x if isinstance(x, Value) else Value(x)


def parameter(x, name=None):
    return Value(np.array(x, dtype=np.float64), requires_grad=True, name=name)


def _lift(x):
    return x if isinstance(x, Value) else Value(x)


def _make(data, parents, op, backward_rule):
    needs = any(p.requires_grad for p in parents)
    out = Value(data, requires_grad=needs, parents=parents if needs else (), op=op)
    if needs:
        out._backward = backward_rule
    return out


class Tape:
    """Reachable operations from an output, in recording order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output):
        seen = set()
        nodes = []
        stack = [output]
        while stack:
            v = stack.pop()
            if id(v) in seen:
                continue
            seen.add(id(v))
            nodes.append(v)
            stack.extend(p for p in v.parents if p.requires_grad)
        nodes.sort(key=lambda v: v.seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def reverse(self):
        return reversed(self.nodes)


def backward(output):
    """Populate ``.grad`` of every reachable Value that requires a gradient.

    Gradients accumulate into existing ``.grad`` buffers, so call
    ``zero_grad`` on parameters between independent passes.
    """
    if output.shape != (1, 1):
        raise GradientError(f"backward() needs a 1x1 scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    tape = Tape.from_output(output)
    for v in tape:
        if v.parents:
            v.grad = np.zeros_like(v.data)
    output.grad = output.grad + 1.0
    for v in tape.reverse():
        if v._backward is not None:
            v._backward(v.grad)


def _accumulate(v, g):
    if v.requires_grad:
        v.grad = v.grad + g


def _reduce_to(g, shape):
    """Sum a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return np.array([[g.sum()]])
    if shape[0] == 1 and shape[1] == g.shape[1]:
        return g.sum(axis=0, keepdims=True)
    raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _broadcast_shape(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if sa == (1, 1):
        return sb
    if sb == (1, 1):
        return sa
    if sa[0] == 1 and sa[1] == sb[1]:
        return sb
    if sb[0] == 1 and sb[1] == sa[1]:
        return sa
    raise ShapeError(f"{op}: shapes {sa} and {sb} do not conform")


def add(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "add")

    def rule(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", rule)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "sub")

    def rule(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", rule)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "mul")

    def rule(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", rule)


def div(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def rule(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _reduce_to(-g * out / b.data, b.shape))

    return _make(out, (a, b), "div", rule)


def neg(a):
    a = _lift(a)
    return _make(-a.data, (a,), "neg", lambda g: _accumulate(a, -g))


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def rule(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", rule)


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)
    return _make(out, (a,), "tanh", lambda g: _accumulate(a, g * (1.0 - out * out)))


def sigmoid(a):
    a = _lift(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), "sigmoid", lambda g: _accumulate(a, g * out * (1.0 - out)))


def absolute(a):
    a = _lift(a)
    # np.sign(0) == 0 gives the zero subgradient at the origin.
    return _make(np.abs(a.data), (a,), "abs", lambda g: _accumulate(a, g * np.sign(a.data)))


def square(a):
    a = _lift(a)
    return _make(a.data * a.data, (a,), "square", lambda g: _accumulate(a, 2.0 * g * a.data))


def sqrt(a):
    a = _lift(a)
    out = np.sqrt(a.data)

    def rule(g):
        safe = np.where(out > 0.0, out, 1.0)
        _accumulate(a, np.where(out > 0.0, 0.5 * g / safe, 0.0))

    return _make(out, (a,), "sqrt", rule)


def sum(a, axis=None):
    """Full (``axis=None``) or per-axis sum, keeping 2-D shape."""
    a = _lift(a)
    if axis is None:
        out = np.array([[a.data.sum()]])
    elif axis in (0, 1):
        out = a.data.sum(axis=axis, keepdims=True)
    else:
        raise ValueError(f"axis must be None, 0 or 1, got {axis}")
    return _make(out, (a,), "sum", lambda g: _accumulate(a, np.broadcast_to(g, a.shape).copy()))


def mean(a, axis=None):
    a = _lift(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


def transpose(a):
    a = _lift(a)
    return _make(a.data.T.copy(), (a,), "transpose", lambda g: _accumulate(a, g.T))


def reshape(a, shape):
    a = _lift(a)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {tuple(shape)}")
    return _make(a.data.reshape(shape).copy(), (a,), "reshape", lambda g: _accumulate(a, g.reshape(a.shape)))


def concat(values, axis=0):
    """Concatenate along rows (``axis=0``) or columns (``axis=1``)."""
    values = [_lift(v) for v in values]
    if not values:
        raise ShapeError("concat: no operands")
    other = 1 - axis
    for v in values[1:]:
        if v.shape[other] != values[0].shape[other]:
            raise ShapeError(f"concat: shapes {values[0].shape} and {v.shape} do not conform on axis {axis}")
    sizes = [v.shape[axis] for v in values]
    bounds = np.cumsum([0] + sizes)

    def rule(g):
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            if v.requires_grad:
                _accumulate(v, g[lo:hi, :] if axis == 0 else g[:, lo:hi])

    out = np.concatenate([v.data for v in values], axis=axis)
    return _make(out, tuple(values), "concat", rule)


def pair_message(edge_pre, node_pre):
    """Fused neighbour-averaged pair message.

    ``out[i] = mean_{j != i} tanh(edge_pre[i*n+j] + node_pre[i]) * tanh(edge_pre[i*n+j] + node_pre[j])``
    """
    edge_pre, node_pre = _lift(edge_pre), _lift(node_pre)
    n, h = node_pre.shape
    if edge_pre.shape != (n * n, h):
        raise ShapeError(f"pair_message: shapes {edge_pre.shape} and {node_pre.shape} do not conform")
    out, a, b = kernels.pair_message_forward(
        np.ascontiguousarray(edge_pre.data), np.ascontiguousarray(node_pre.data)
    )

    def rule(g):
        ge, gn = kernels.pair_message_backward(np.ascontiguousarray(g), a, b)
        _accumulate(edge_pre, ge)
        _accumulate(node_pre, gn)

    return _make(out, (edge_pre, node_pre), "pair_message", rule)


def pairwise_l1(x):
    """``out[i, j] = sum_k |x[i, k] - x[j, k]|`` with zero subgradient at ties."""
    x = _lift(x)
    xd = np.ascontiguousarray(x.data)
    out = kernels.pairwise_l1_forward(xd)

    def rule(g):
        _accumulate(x, kernels.pairwise_l1_backward(np.ascontiguousarray(g), xd))

    return _make(out, (x,), "pairwise_l1", rule)


def finite_diff_check(loss_fn, params, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must rebuild the graph from ``params`` and return a 1x1
    Value. Relative error per entry is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        for idx in np.ndindex(p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + step
            plus = loss_fn().item()
            p.data[idx] = orig - step
            minus = loss_fn().item()
            p.data[idx] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                label = p.name or repr(p)
                raise GradientError(f"non-finite loss while perturbing {label} at {idx}")
            numeric = (plus - minus) / (2.0 * step)
            err = abs(ga[idx] - numeric) / max(1e-8, abs(ga[idx]) + abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
