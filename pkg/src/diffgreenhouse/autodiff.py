"""Reverse-mode automatic differentiation on a recorded tape.

Values are numpy arrays.  Every differentiable operation appends one node to
the tape that owns its operands; a node stores, per operand, a function that
maps the adjoint of the result to the adjoint contribution of that operand
(a vector-Jacobian product).  ``Tape.backward`` replays the nodes in reverse
order.

The functions in this module accept plain numpy arrays as well as ``Var``
objects.  When no operand is a ``Var`` the plain numpy result is returned and
nothing is recorded, so the same model code runs both with and without a
tape.
"""
from __future__ import annotations

import gc

import numpy as np


class NumericError(ArithmeticError):
    """A non-finite value was produced by a recorded operation."""


class TapeError(RuntimeError):
    """Misuse of a gradient tape."""


class Tape:
    """Ordered record of elementary operations.

    ``nodes[i]`` is a list of ``(parent_index, vjp)`` pairs; leaves have an
    empty list.  Operands always precede their results.
    """

    def __init__(self):
        self.nodes: list[list] = []
        self.leaves: list[int] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> "Var":
        value = np.asarray(value, dtype=float)
        _check_finite(value, "leaf")
        self.nodes.append([])
        self.leaves.append(len(self.nodes) - 1)
        return Var(value, self, len(self.nodes) - 1)

    def record(self, value, parents, name) -> "Var":
        _check_finite(value, name)
        self.nodes.append(parents)
        return Var(value, self, len(self.nodes) - 1)

    def backward(self, out: "Var") -> list:
        """Adjoints of every node for the scalar ``out``; ``None`` where unreached."""
        if not self.nodes or len(self.nodes) == len(self.leaves):
            raise TapeError("backward called on an empty tape")
        if out.tape is not self:
            raise TapeError("output does not belong to this tape")
        if out.value.size != 1:
            raise TapeError(f"backward needs a scalar output, got shape {out.value.shape}")
        adj = [None] * (out.idx + 1)
        adj[out.idx] = np.ones_like(out.value)
        for i in range(out.idx, -1, -1):
            g = adj[i]
            if g is None:
                continue
            for p, vjp in self.nodes[i]:
                contrib = vjp(g)
                if adj[p] is None:
                    adj[p] = contrib
                else:
                    adj[p] = adj[p] + contrib
        return adj


def _check_finite(value, name):
    if not np.isfinite(value).all():
        raise NumericError(f"non-finite value produced by '{name}'")


class Var:
    """Array value tracked on a tape."""

    __slots__ = ("value", "tape", "idx")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, value, tape, idx):
        self.value = value
        self.tape = tape
        self.idx = idx

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)

    def __repr__(self):
        return f"Var({self.value!r})"

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
        return mul(self, -1.0)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def value(x):
    """Underlying numpy value of ``x`` (detaches a ``Var``)."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("operands belong to different tapes")
    return tape


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(name, a, b, fwd, da, db):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = fwd(av, bv)
    if tape is None:
        return out
    parents = []
    if isinstance(a, Var):
        parents.append((a.idx, lambda g: _unbroadcast(da(g, av, bv, out), av.shape)))
    if isinstance(b, Var):
        parents.append((b.idx, lambda g: _unbroadcast(db(g, av, bv, out), bv.shape)))
    return tape.record(out, parents, name)


def _unary(name, a, fwd, da):
    if not isinstance(a, Var):
        return fwd(np.asarray(a, dtype=float))
    av = a.value
    out = fwd(av)
    return a.tape.record(out, [(a.idx, lambda g: da(g, av, out))], name)


def add(a, b):
    return _binary("add", a, b, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)


def mul(a, b):
    return _binary("mul", a, b, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


def div(a, b):
    return _binary(
        "div", a, b, np.divide, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b
    )


def maximum(a, b):
    """Elementwise max; the gradient goes to the selected operand, ties to ``a``."""
    return _binary(
        "maximum",
        a,
        b,
        np.maximum,
        lambda g, a, b, o: g * (a >= b),
        lambda g, a, b, o: g * (a < b),
    )


def minimum(a, b):
    """Elementwise min; the gradient goes to the selected operand, ties to ``a``."""
    return _binary(
        "minimum",
        a,
        b,
        np.minimum,
        lambda g, a, b, o: g * (a <= b),
        lambda g, a, b, o: g * (a > b),
    )


def power(a, k):
    k = float(k)
    return _unary("power", a, lambda x: x**k, lambda g, x, o: g * k * x ** (k - 1.0))


def exp(a):
    return _unary("exp", a, np.exp, lambda g, x, o: g * o)


def log(a):
    return _unary("log", a, np.log, lambda g, x, o: g / x)


def sqrt(a):
    return _unary("sqrt", a, np.sqrt, lambda g, x, o: g * 0.5 / o)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    return _unary("sigmoid", a, _sigmoid, lambda g, x, o: g * o * (1.0 - o))


def softplus(a):
    """log(1 + e^x), evaluated without overflow."""
    return _unary("softplus", a, lambda x: np.logaddexp(0.0, x), lambda g, x, o: g * _sigmoid(x))


def getitem(a, key):
    if not isinstance(a, Var):
        return np.asarray(a, dtype=float)[key]
    av = a.value
    out = av[key]
    basic = _is_basic(key)

    def vjp(g):
        z = np.zeros_like(av)
        if basic:
            z[key] = g
        else:
            np.add.at(z, key, g)
        return z

    return a.tape.record(np.array(out, copy=True), [(a.idx, vjp)], "getitem")


def _is_basic(key):
    keys = key if isinstance(key, tuple) else (key,)
    return all(k is Ellipsis or k is None or isinstance(k, (int, np.integer, slice)) for k in keys)


def swapaxes(a, i, j):
    return _unary("swapaxes", a, lambda x: np.swapaxes(x, i, j), lambda g, x, o: np.swapaxes(g, i, j))


def reshape(a, shape):
    return _unary("reshape", a, lambda x: x.reshape(shape), lambda g, x, o: g.reshape(x.shape))


def sum(a, axis=None):
    def vjp(g, x, o):
        if axis is None:
            return np.broadcast_to(g, x.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()

    return _unary("sum", a, lambda x: np.sum(x, axis=axis), vjp)


def mean(a, axis=None):
    n = value(a).size if axis is None else value(a).shape[axis]
    return sum(a, axis=axis) / float(n)


def matmul(a, b):
    return _binary(
        "matmul",
        a,
        b,
        np.matmul,
        lambda g, a, b, o: g @ np.swapaxes(b, -1, -2),
        lambda g, a, b, o: np.swapaxes(a, -1, -2) @ g,
    )


def matvec(m, v):
    """``m @ v`` for stacks of matrices ``(..., n, k)`` and vectors ``(..., k)``."""
    return _binary(
        "matvec",
        m,
        v,
        lambda m, v: np.einsum("...ij,...j->...i", m, v),
        lambda g, m, v, o: g[..., :, None] * v[..., None, :],
        lambda g, m, v, o: np.einsum("...ij,...i->...j", m, g),
    )


def stack(items, axis=-1):
    """Stack equally-broadcastable operands along a new axis."""
    vals = [value(x) for x in items]
    shape = np.broadcast_shapes(*(v.shape for v in vals))
    out = np.stack([np.broadcast_to(v, shape) for v in vals], axis=axis)
    tape = _tape_of(*items)
    if tape is None:
        return out
    parents = []
    for k, x in enumerate(items):
        if isinstance(x, Var):
            parents.append(
                (x.idx, lambda g, k=k, s=x.value.shape: _unbroadcast(np.take(g, k, axis=axis), s))
            )
    return tape.record(out, parents, "stack")


def assemble(tail_shape, entries):
    """Build an array of shape ``batch + tail_shape`` from sparse entries.

    ``entries`` maps an index tuple within ``tail_shape`` to a value (array or
    ``Var``) broadcastable to the batch shape.  Unlisted entries are zero.
    """
    keys = list(entries)
    vals = [value(entries[k]) for k in keys]
    batch = np.broadcast_shapes(*(v.shape for v in vals)) if vals else ()
    out = np.zeros(batch + tuple(tail_shape))
    for k, v in zip(keys, vals):
        out[(Ellipsis,) + k] = v
    tape = _tape_of(*entries.values())
    if tape is None:
        return out
    parents = []
    for k in keys:
        x = entries[k]
        if isinstance(x, Var):
            parents.append(
                (x.idx, lambda g, k=k, s=x.value.shape: _unbroadcast(g[(Ellipsis,) + k], s))
            )
    return tape.record(out, parents, "assemble")


def embed(a, tail_shape, offset):
    """Place ``a``'s trailing block at ``offset`` inside zeros of ``tail_shape``."""
    av = value(a)
    k = len(tail_shape)
    sl = tuple(slice(o, o + n) for o, n in zip(offset, av.shape[-k:]))
    out = np.zeros(av.shape[:-k] + tuple(tail_shape))
    out[(Ellipsis,) + sl] = av
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, [(a.idx, lambda g: g[(Ellipsis,) + sl])], "embed")


def custom(name, out, inputs):
    """Record a hand-written primitive.

    ``inputs`` is a list of ``(operand, vjp)`` pairs; operands that are not
    ``Var`` are ignored.  Returns ``out`` unchanged when nothing is tracked.
    """
    tape = _tape_of(*(x for x, _ in inputs))
    if tape is None:
        return out
    parents = [(x.idx, vjp) for x, vjp in inputs if isinstance(x, Var)]
    return tape.record(out, parents, name)


def run_with_gradient(program, theta_star):
    """Evaluate ``program(theta)`` and its gradient by reverse accumulation.

    Returns ``(loss, grad)`` with ``loss`` a float and ``grad`` an array shaped
    like ``theta_star``.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    tape = Tape()
    leaf = tape.leaf(theta_star)
    # Tape closures form no reference cycles; the cyclic collector only adds
    # pauses that grow with the tape length.
    enabled = gc.isenabled()
    gc.disable()
    try:
        out = program(leaf)
        if not isinstance(out, Var):
            _check_finite(np.asarray(out), "program output")
            return float(out), np.zeros_like(theta_star)
        adj = tape.backward(out)
    finally:
        if enabled:
            gc.enable()
    g = adj[leaf.idx]
    grad = np.zeros_like(theta_star) if g is None else np.asarray(g, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    return float(out.value), grad


def finite_difference_gradient(f, theta_star, step=1e-6):
    """Central-difference gradient of the scalar function ``f``."""
    if step <= 0:
        raise ValueError("step must be positive")
    theta_star = np.asarray(theta_star, dtype=float)
    grad = np.zeros_like(theta_star)
    for j in range(theta_star.size):
        e = np.zeros_like(theta_star)
        e.flat[j] = step
        grad.flat[j] = (float(f(theta_star + e)) - float(f(theta_star - e))) / (2.0 * step)
    return grad
