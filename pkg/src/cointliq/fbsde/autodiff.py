"""A small reverse-mode automatic differentiation engine over numpy arrays.

Only the operations needed by the deep-BSDE rollout are provided. Constants
are plain arrays; a :class:`Tensor` records its parents only when some
ancestor requires a gradient, so gradient-free evaluation costs little more
than raw numpy.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "tensor", "concat", "tanh", "relu", "absolute", "mean", "exp"]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    # make numpy defer to the reflected operators (array - Tensor etc.)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=float)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=float)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    node.grad = None

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return _binary(self, other, np.add,
                       lambda g, a, b: g,
                       lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract,
                       lambda g, a, b: g,
                       lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary(other, self, np.subtract,
                       lambda g, a, b: g,
                       lambda g, a, b: -g)

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda g, a, b: g * b,
                       lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return _binary(self, other, np.matmul,
                       lambda g, a, b: g @ b.T,
                       lambda g, a, b: a.T @ g)

    def __rmatmul__(self, other):
        return _binary(other, self, np.matmul,
                       lambda g, a, b: g @ b.T,
                       lambda g, a, b: a.T @ g)

    def __getitem__(self, idx):
        """Basic (non-fancy) indexing only."""
        out_data = self.data[idx]
        if not self.requires_grad:
            return Tensor(out_data)

        def back(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            self._accum(full)

        return Tensor(out_data, True, (self,), back)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _binary(x, y, fn, dx, dy):
    a, b = _data(x), _data(y)
    out = fn(a, b)
    gx = isinstance(x, Tensor) and x.requires_grad
    gy = isinstance(y, Tensor) and y.requires_grad
    if not (gx or gy):
        return Tensor(out)
    parents = tuple(t for t, on in ((x, gx), (y, gy)) if on)

    def back(g):
        if gx:
            x._accum(_unbroadcast(dx(g, a, b), a.shape))
        if gy:
            y._accum(_unbroadcast(dy(g, a, b), b.shape))

    return Tensor(out, True, parents, back)


def _unary(x, value, deriv):
    if not (isinstance(x, Tensor) and x.requires_grad):
        return Tensor(value)

    def back(g):
        x._accum(g * deriv)

    return Tensor(value, True, (x,), back)


def tanh(x) -> Tensor:
    v = np.tanh(_data(x))
    return _unary(x, v, 1.0 - v * v)


def relu(x) -> Tensor:
    d = _data(x)
    return _unary(x, np.maximum(d, 0.0), (d > 0).astype(float))


def absolute(x) -> Tensor:
    d = _data(x)
    return _unary(x, np.abs(d), np.sign(d))


def exp(x) -> Tensor:
    v = np.exp(_data(x))
    return _unary(x, v, v)


def mean(x) -> Tensor:
    d = _data(x)
    n = d.size
    if not (isinstance(x, Tensor) and x.requires_grad):
        return Tensor(d.mean())

    def back(g):
        x._accum(np.full_like(d, float(g) / n))

    return Tensor(d.mean(), True, (x,), back)


def concat(parts, axis: int = -1) -> Tensor:
    """Concatenate tensors and/or arrays along ``axis``."""
    datas = [_data(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    tracked = [(i, p) for i, p in enumerate(parts) if isinstance(p, Tensor) and p.requires_grad]
    if not tracked:
        return Tensor(out)
    bounds = np.cumsum([0] + [d.shape[axis] for d in datas])

    def back(g):
        for i, p in tracked:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            p._accum(g[tuple(sl)])

    return Tensor(out, True, tuple(p for _, p in tracked), back)
