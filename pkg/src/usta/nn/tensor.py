"""Dense tensors with a reverse-mode gradient tape.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them.  :func:`backward` walks
the graph in reverse topological order.  Gradients accumulate into ``.grad``;
callers zero them explicitly between optimisation steps.

Tensors are float64 unless created inside a :func:`precision` block.
"""

from __future__ import annotations

import contextlib

import numpy as np

_dtype = [np.float64]


def default_dtype():
    return _dtype[0]


@contextlib.contextmanager
def precision(dtype):
    """Create tensors (and everything derived from them) in ``dtype`` within the block."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"precision must be float32 or float64, got {dtype.__name__}")
    prev = _dtype[0]
    _dtype[0] = dtype
    try:
        yield
    finally:
        _dtype[0] = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=_dtype[0])
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # arithmetic sugar; scalar operands are promoted to constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    """Create an op output; it joins the graph only if some parent does."""
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=live, _backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor):
    """Populate ``.grad`` of every tensor that ``loss`` depends on."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if id(p) not in seen:
                stack.append((p, False))

    # interior nodes get fresh gradients each pass; leaves keep accumulating
    for t in order:
        if t._backward is not None:
            t.grad = None
    loss._accumulate(np.ones_like(loss.data))
    for t in reversed(order):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


# -- elementwise --------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def mul(a, b):
    a, b = _lift(a), _lift(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def tsum(a):
    def bw(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(np.sum(a.data), (a,), bw)


def relu(x):
    mask = x.data > 0

    def bw(g):
        x._accumulate(g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), bw)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        x._accumulate(g * out * (1.0 - out))

    return _node(out, (x,), bw)


def log(x):
    def bw(g):
        x._accumulate(g / x.data)

    return _node(np.log(x.data), (x,), bw)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the value was inside."""
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        x._accumulate(g * inside)

    return _node(np.clip(x.data, lo, hi), (x,), bw)


def concat_channels(a, b):
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    ca = a.shape[1]

    def bw(g):
        if a.requires_grad:
            a._accumulate(g[:, :ca])
        if b.requires_grad:
            b._accumulate(g[:, ca:])

    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), bw)
