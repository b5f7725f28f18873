"""MLPs, Adam, Polyak target updates and the binary checkpoint format.

Every network keeps its parameters in one flat float64 buffer; the per-layer
weight and bias arrays are views into it.  Optimizers and target updates then
operate on a single vector per network.

Checkpoint layout (all integers little-endian uint32, floats little-endian
float64), one record per network, records concatenated in a file::

    magic    8 bytes  b"AWMPNET\\0"
    version  uint32   (currently 1)
    name_len uint32, name bytes (utf-8)
    n_arrays uint32
    per array: ndim uint32, then ndim dims as uint32
    payload  row-major float64 values of every array, in order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

MAGIC = b"AWMPNET\0"
VERSION = 1

DEFAULT_HIDDEN = (400, 400)


class Mlp:
    """Fully connected network with ReLU hidden layers and a linear output.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``(3, 400, 400, 1)``.
    rng : numpy.random.Generator
        Source for the fan-in uniform initialisation.
    out_scale : float
        Multiplier on the final layer's initial weights.  Policy and prior
        heads use ``1e-2`` so they start close to uniform.
    name : str
        Used in error messages and checkpoints.
    """

    def __init__(self, sizes, rng, out_scale=1.0, name="mlp"):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.name = name
        self.shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self.flat = np.zeros(sum(int(np.prod(s)) for s in self.shapes))
        self.params = self._views(self.flat)
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            fan_in = self.sizes[i]
            bound = 1.0 / np.sqrt(fan_in)
            w, b = self.params[2 * i], self.params[2 * i + 1]
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
            if i == n_layers - 1:
                w *= out_scale
                b *= out_scale

    def _views(self, flat):
        views, offset = [], 0
        for shape in self.shapes:
            n = int(np.prod(shape))
            views.append(flat[offset:offset + n].reshape(shape))
            offset += n
        return views

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def __call__(self, x, tape=None):
        """Forward pass.  With a tape the parameters are recorded as leaves."""
        if tape is None:
            ws = [ad.Tensor(p) for p in self.params]
        else:
            ws = tape.params(self)
        return self.apply(ws, x)

    def apply(self, ws, x):
        x = ad.as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ad.ShapeError(f"{self.name}: input width {x.shape[-1]} != expected {self.in_dim}")
        n_layers = len(ws) // 2
        h = x
        for i in range(n_layers):
            h = ad.add(ad.matmul(h, ws[2 * i]), ws[2 * i + 1])
            if i < n_layers - 1:
                h = ad.relu(h)
        return h

    def predict(self, x):
        """Plain numpy forward, no tape."""
        h = np.asarray(x, dtype=np.float64)
        if h.shape[-1] != self.in_dim:
            raise ad.ShapeError(f"{self.name}: input width {h.shape[-1]} != expected {self.in_dim}")
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i]
            h += self.params[2 * i + 1]
            if i < n_layers - 1:
                np.maximum(h, 0.0, out=h)
        return h

    def copy(self, name=None):
        clone = object.__new__(Mlp)
        clone.sizes = self.sizes
        clone.name = name or self.name
        clone.shapes = list(self.shapes)
        clone.flat = self.flat.copy()
        clone.params = clone._views(clone.flat)
        return clone

    def load_flat(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.flat.shape:
            raise ad.ShapeError(f"{self.name}: expected {self.flat.size} values, got {values.size}")
        self.flat[...] = values


@dataclass
class AdamState:
    """Adam moments for one flat parameter vector."""

    size: int
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    name: str = "params"
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state, params, grads):
    """In-place bias-corrected Adam update of the flat vector ``params``."""
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ad.ShapeError(f"adam_step[{state.name}]: grads {grads.shape} vs params {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError(f"adam_step: non-finite gradient for network '{state.name}'")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def polyak_update(target, online, tau):
    """target <- tau * online + (1 - tau) * target, in place on flat vectors."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"polyak tau must be in (0, 1], got {tau}")
    t = target.flat if isinstance(target, Mlp) else target
    o = online.flat if isinstance(online, Mlp) else online
    if tau == 1.0:
        t[...] = o
    else:
        t *= 1.0 - tau
        t += tau * o
    return target


def write_record(fh, name, arrays):
    name_b = name.encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<I", len(arrays)))
    for a in arrays:
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_record(fh):
    """Read one record; returns ``None`` at end of file."""
    magic = fh.read(8)
    if not magic:
        return None
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    version, name_len = struct.unpack("<II", fh.read(8))
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    name = fh.read(name_len).decode("utf-8")
    (n_arrays,) = struct.unpack("<I", fh.read(4))
    shapes = []
    for _ in range(n_arrays):
        (ndim,) = struct.unpack("<I", fh.read(4))
        shapes.append(struct.unpack(f"<{ndim}I", fh.read(4 * ndim)))
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        buf = fh.read(8 * n)
        if len(buf) != 8 * n:
            raise ValueError(f"truncated checkpoint record '{name}'")
        arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64))
    return name, arrays


def save_networks(path, nets):
    """Write ``{name: Mlp}`` to one checkpoint file."""
    with open(path, "wb") as fh:
        for name, net in nets.items():
            write_record(fh, name, net.params)


def load_networks(path):
    """Return ``{name: [arrays]}`` from a checkpoint file."""
    out = {}
    with open(path, "rb") as fh:
        while (rec := read_record(fh)) is not None:
            out[rec[0]] = rec[1]
    return out


def restore(net, arrays):
    if [a.shape for a in arrays] != [tuple(s) for s in net.shapes]:
        raise ad.ShapeError(f"{net.name}: checkpoint shapes do not match network layout")
    for dst, src in zip(net.params, arrays):
        dst[...] = src


def grad_check_nets(loss_fn, nets, eps=1e-5):
    """Relative gradient error for losses built from whole networks.

    ``loss_fn(tape)`` builds a scalar from ``nets`` (``tape`` is ``None`` for
    the finite-difference evaluations).  Each entry of every ``net.flat`` is
    perturbed in place and restored; the error measure matches
    :func:`awmp.autodiff.grad_check`.
    """
    tape = ad.Tape()
    out = loss_fn(tape)
    tape.backward(out)
    worst = 0.0
    for net in nets:
        analytic = tape.grad(net)
        flat = net.flat
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(loss_fn(None).data)
            flat[i] = orig - eps
            fm = float(loss_fn(None).data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(analytic[i] - num) / max(1e-8, abs(analytic[i]) + abs(num)))
    return worst
