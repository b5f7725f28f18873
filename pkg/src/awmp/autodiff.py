"""Small dense reverse-mode automatic differentiation on top of numpy.

A :class:`Tape` records every operation whose inputs require gradients.
:meth:`Tape.backward` walks the record in reverse and accumulates gradients
into each node.  Tensors created without a tape (or from constants only) are
not recorded, so the same functions serve both the training path and the
cheap no-gradient inference path.

All arithmetic is float64.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "tanh",
    "atanh",
    "exp",
    "log",
    "relu",
    "softplus",
    "square",
    "sum",
    "mean",
    "softmax",
    "log_softmax",
    "logsumexp",
    "minimum",
    "broadcast_to",
    "concat",
    "reshape",
    "clip",
    "index",
    "grad_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class Tensor:
    """Immutable float64 array with an optional link to a recording tape."""

    __slots__ = ("data", "tape", "parents", "backward_fn", "requires_grad", "grad", "name")

    def __init__(self, data, tape=None, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.data = data
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    __array_priority__ = 1000

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

    def __getitem__(self, key):
        return index(self, key)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Leaves are created with :meth:`leaf`; network parameters are bound once per
    tape through :meth:`params` so a network used several times in the same
    pass accumulates into a single set of leaves.
    """

    def __init__(self):
        self.nodes = []
        self._bound = {}

    def leaf(self, data, name=None):
        t = Tensor(np.asarray(data, dtype=np.float64), self, requires_grad=True, name=name)
        self.nodes.append(t)
        return t

    def params(self, net):
        """Leaf tensors for every parameter array of ``net`` (cached per tape)."""
        key = id(net)
        if key not in self._bound:
            self._bound[key] = (net, [self.leaf(p, name=net.name) for p in net.params])
        return self._bound[key][1]

    def record(self, t):
        self.nodes.append(t)
        return t

    def backward(self, output):
        """Accumulate d(output)/d(node) into ``node.grad`` for every node.

        Leaves that are not on any path to ``output`` end with an exact zero
        gradient.
        """
        if output.data.size != 1:
            raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.data)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node.backward_fn is None:
                continue
            pgrads = node.backward_fn(g)
            for parent, pg in zip(node.parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg
        for node in self.nodes:
            if node.grad is None and node.backward_fn is None:
                node.grad = np.zeros_like(node.data)

    def grad(self, net):
        """Flat gradient for ``net`` laid out like ``net.flat``."""
        if id(net) not in self._bound:
            return np.zeros_like(net.flat)
        leaves = self._bound[id(net)][1]
        return np.concatenate([
            (l.grad if l.grad is not None else np.zeros_like(l.data)).ravel() for l in leaves
        ])


def as_tensor(x):
    if x.__class__ is Tensor:
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward_fn):
    for p in parents:
        if p.requires_grad:
            t = Tensor(data, p.tape, parents, backward_fn, True)
            p.tape.nodes.append(t)
            return t
    return Tensor(data)


def _binary(op, fn, a, b):
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _make(ad @ bd, (a, b), backward)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("add", np.add, a, b)
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(g, sb) if b.requires_grad else None)

    return _make(out, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("sub", np.subtract, a, b)
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g, sa), (_unbroadcast(-g, sb) if b.requires_grad else None)

    return _make(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("mul", np.multiply, a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(out, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("div", np.divide, a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return _make(out, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    # reuse the forward value: d tanh = 1 - tanh^2
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def atanh(a):
    a = as_tensor(a)
    ad = a.data
    return _make(np.arctanh(ad), (a,), lambda g: (g / (1.0 - ad * ad),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (np.where(out > 0.0, g, 0.0),))


def softplus(a):
    """log(1 + e^x) evaluated without overflow."""
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)

    def backward(g):
        return (g * np.exp(ad - out),)

    return _make(out, (a,), backward)


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / n)


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    ad = a.data
    m = ad.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(ad - m).sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out_k = m + np.log(s)  # an all -inf row gives -inf
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(ad - out_k),)

    return _make(out, (a,), backward)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    ad = a.data
    m = ad.max(axis=axis, keepdims=True)
    shifted = ad - m
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward)


def softmax(a, axis=-1):
    a = as_tensor(a)
    ad = a.data
    e = np.exp(ad - ad.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = _binary("minimum", np.less_equal, a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.where(pick_a, g, 0.0)
        return (_unbroadcast(ga, ad.shape), _unbroadcast(g - ga, bd.shape))

    return _make(np.where(pick_a, ad, bd), (a, b), backward)


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None
    sa = a.shape
    return _make(out, (a,), lambda g: (_unbroadcast(g, sa),))


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(ts), backward)


def reshape(a, shape):
    a = as_tensor(a)
    sa = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {sa} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(sa),))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _make(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def index(a, key):
    a = as_tensor(a)
    sa = a.shape

    def backward(g):
        full = np.zeros(sa)
        np.add.at(full, key, g)
        return (full,)

    return _make(a.data[key], (a,), backward)


def grad_check(f, params, eps=1e-5):
    """Max relative error between the tape gradient and central differences.

    Parameters
    ----------
    f : callable
        ``f(tape, leaves) -> Tensor`` returning a scalar.  Must be
        deterministic given the leaf values.
    params : list of ndarray
        Parameter values; they are copied and not modified.

    Returns
    -------
    float
        ``max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)`` over
        every scalar parameter.
    """
    values = [np.array(p, dtype=np.float64) for p in params]
    tape = Tape()
    leaves = [tape.leaf(v) for v in values]
    out = f(tape, leaves)
    tape.backward(out)
    analytic = [l.grad.copy() for l in leaves]

    def evaluate():
        return float(f(None, [Tensor(v) for v in values]).data)

    worst = 0.0
    for v, ga in zip(values, analytic):
        flat = v.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = evaluate()
            flat[i] = orig - eps
            fm = evaluate()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(gflat[i] - num) / max(1e-8, abs(gflat[i]) + abs(num))
            if math.isnan(err):
                return math.inf
            worst = max(worst, err)
    return worst
