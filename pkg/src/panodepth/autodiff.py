"""A small reverse-mode autodiff engine on top of numpy.

Ops record themselves on the active :class:`Tape`; ``tape.backward(loss)``
walks the records in reverse and accumulates ``.grad`` on leaf tensors::

    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = (x * x).sum()
    tape.backward(y)        # x.grad == 2 * x.data

Outside a tape nothing is recorded, so the same code runs forward-only.
All data is float64.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, NonFiniteError, UsageError

# finite-value assertion after every op; switch off for timing runs only
DEBUG = True

ABS_EPS = 1e-6

_TAPES: list = []


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if self._tape is None:
            raise UsageError("tensor was not produced on a tape")
        self._tape.backward(self, grad)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, key: getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class _Record:
    name: str
    out: Tensor
    inputs: tuple
    vjp: Callable


@dataclass
class Tape:
    """Ordered list of recorded ops; use as a context manager."""

    records: list = field(default_factory=list)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, out: Tensor, grad=None):
        if out._tape is not self:
            raise UsageError("backward called on a tensor that is not on this tape")
        if grad is None:
            if out.size != 1:
                raise UsageError("implicit backward needs a scalar output")
            grad = np.ones_like(out.data)
        grads = {id(out): np.asarray(grad, dtype=np.float64)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                gi = _unbroadcast(gi, t.shape)
                if t._tape is self:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
                else:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi


def current_tape():
    return _TAPES[-1] if _TAPES else None


@contextmanager
def no_grad():
    """Suspend recording inside an active tape."""
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _make(name, data, inputs, vjp):
    out = Tensor(data)
    if DEBUG and not np.isfinite(out.data).all():
        raise NonFiniteError(f"{name} produced a non-finite value")
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.records.append(_Record(name, out, tuple(inputs), vjp))
    return out


def _check_broadcast(name, a, b):
    if a.shape == b.shape or not a.shape or not b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise InvalidInputError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make("div", out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(a):
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def sin(a):
    a = as_tensor(a)
    return _make("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    return _make("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def atan2(y, x):
    y, x = as_tensor(y), as_tensor(x)
    _check_broadcast("atan2", y, x)

    def vjp(g):
        r2 = x.data * x.data + y.data * y.data
        return g * x.data / r2, -g * y.data / r2

    return _make("atan2", np.arctan2(y.data, x.data), (y, x), vjp)


def clamp(a, lo=-np.inf, hi=np.inf):
    """Clip to [lo, hi]; gradient 1 inside the closed interval, 0 outside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def abs(a, eps=ABS_EPS):  # noqa: A001 - mirrors numpy naming
    """Smoothed absolute value sqrt(x^2 + eps^2) - eps (zero at zero)."""
    a = as_tensor(a)
    root = np.sqrt(a.data * a.data + eps * eps)
    return _make("abs", root - eps, (a,), lambda g: (g * a.data / root,))


# -- reductions and shape ---------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make("sum", out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(out.size, 1) if a.size else 1
    return _make("mean", out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / count,))


def reshape(a, shape):
    a = as_tensor(a)
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise InvalidInputError("transpose expects a 2-D tensor")
    return _make("transpose", a.data.T, (a,), lambda g: (g.T,))


def getitem(a, key):
    a = as_tensor(a)

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    return _make("getitem", a.data[key], (a,), vjp)


def take(a, indices, axis):
    """``np.take`` with a scatter-add backward (indices may repeat)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim

    def vjp(g):
        ga = np.zeros_like(a.data)
        key = (slice(None),) * axis + (indices,)
        np.add.at(ga, key, g)
        return (ga,)

    return _make("take", np.take(a.data, indices, axis=axis), (a,), vjp)


def stack(tensors: Sequence, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make("stack", out, tensors, vjp)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def conv1x1(weight, x):
    """1x1 convolution: (Co x Ci) weights applied to a Ci x H x W map."""
    weight, x = as_tensor(weight), as_tensor(x)
    if weight.ndim != 2 or x.ndim != 3 or weight.shape[1] != x.shape[0]:
        raise InvalidInputError(f"conv1x1: weight {weight.shape} vs input {x.shape}")
    out = np.einsum("oc,chw->ohw", weight.data, x.data)

    def vjp(g):
        return np.einsum("ohw,chw->oc", g, x.data), np.einsum("oc,ohw->chw", weight.data, g)

    return _make("conv1x1", out, (weight, x), vjp)


def softmax_rows(a):
    """Row-wise softmax of a 2-D tensor (max-subtracted)."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise InvalidInputError("softmax_rows expects a 2-D tensor")
    z = np.exp(a.data - a.data.max(axis=1, keepdims=True))
    out = z / z.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make("softmax_rows", out, (a,), vjp)


def avg_pool2(a):
    """2x2 average pooling over the last two axes (both must be even)."""
    a = as_tensor(a)
    h, w = a.shape[-2:]
    if h % 2 or w % 2:
        raise InvalidInputError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    lead = a.shape[:-2]
    out = a.data.reshape(lead + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))

    def vjp(g):
        up = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)
        return (up / 4.0,)

    return _make("avg_pool2", out, (a,), vjp)


# -- bilinear sampling ------------------------------------------------------

def _bilinear_corners(tx, ty, height, width):
    """Flat corner indices, weights and weight derivatives.

    Columns wrap around (panorama seam); rows clamp to [0, H-1], where the
    derivative w.r.t. ``ty`` is zero.
    """
    x0f = np.floor(tx)
    fx = tx - x0f
    x0 = x0f.astype(np.intp) % width
    x1 = (x0 + 1) % width
    yc = np.clip(ty, 0.0, height - 1.0)
    y_live = ((ty >= 0.0) & (ty <= height - 1.0)).astype(np.float64)
    y0 = np.minimum(np.floor(yc).astype(np.intp), height - 2)
    fy = yc - y0
    y1 = y0 + 1
    idx = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1])
    gx, gy = 1.0 - fx, 1.0 - fy
    w = np.stack([gx * gy, fx * gy, gx * fy, fx * fy])
    dwdx = np.stack([-gy, gy, -fy, fy])
    dwdy = np.stack([-gx, -fx, gx, fx]) * y_live
    return idx, w, dwdx, dwdy


def _sampling_args(name, values, tx, ty):
    values, tx, ty = as_tensor(values), as_tensor(tx), as_tensor(ty)
    if values.ndim != 3:
        raise InvalidInputError(f"{name}: expected C x H x W values, got {values.shape}")
    if tx.shape != ty.shape or tx.shape != values.shape[1:]:
        raise InvalidInputError(
            f"{name}: coordinate shapes {tx.shape}/{ty.shape} do not match {values.shape[1:]}"
        )
    return values, tx, ty


def bilinear_splat(values, tx, ty):
    """Scatter every source pixel to continuous target coordinates.

    ``values`` is C x H x W; ``tx``/``ty`` (H x W) are target column/row
    coordinates with pixel centers at integers. Returns the C x H x W
    accumulation (not normalized).
    """
    values, tx, ty = _sampling_args("bilinear_splat", values, tx, ty)
    c, h, w = values.shape
    n = h * w
    idx, wts, dwdx, dwdy = _bilinear_corners(tx.data.reshape(-1), ty.data.reshape(-1), h, w)
    src = values.data.reshape(c, n)
    flat = (idx[None, :, :] + (np.arange(c) * n)[:, None, None]).reshape(-1)
    contrib = (wts[None, :, :] * src[:, None, :]).reshape(-1)
    out = np.bincount(flat, weights=contrib, minlength=c * n).reshape(c, h, w)

    def vjp(g):
        gk = g.reshape(c, n)[:, idx]  # C x 4 x N
        gvals = (gk * wts[None]).sum(axis=1).reshape(c, h, w)
        gsum = (gk * src[:, None, :]).sum(axis=0)  # 4 x N
        gtx = (gsum * dwdx).sum(axis=0).reshape(h, w)
        gty = (gsum * dwdy).sum(axis=0).reshape(h, w)
        return gvals, gtx, gty

    return _make("bilinear_splat", out, (values, tx, ty), vjp)


def bilinear_gather(values, tx, ty):
    """Read ``values`` (C x H x W) at continuous coordinates ``tx``/``ty``."""
    values, tx, ty = _sampling_args("bilinear_gather", values, tx, ty)
    c, h, w = values.shape
    n = h * w
    idx, wts, dwdx, dwdy = _bilinear_corners(tx.data.reshape(-1), ty.data.reshape(-1), h, w)
    img = values.data.reshape(c, n)
    corners = img[:, idx]  # C x 4 x N
    out = (corners * wts[None]).sum(axis=1).reshape(c, h, w)

    def vjp(g):
        gflat = g.reshape(c, n)
        flat = (idx[None, :, :] + (np.arange(c) * n)[:, None, None]).reshape(-1)
        contrib = (wts[None, :, :] * gflat[:, None, :]).reshape(-1)
        gvals = np.bincount(flat, weights=contrib, minlength=c * n).reshape(c, h, w)
        gsum = (corners * gflat[:, None, :]).sum(axis=0)
        gtx = (gsum * dwdx).sum(axis=0).reshape(h, w)
        gty = (gsum * dwdy).sum(axis=0).reshape(h, w)
        return gvals, gtx, gty

    return _make("bilinear_gather", out, (values, tx, ty), vjp)


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: list
    tolerance: float
    step: float

    @property
    def max_error(self):
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self):
        return all(e < self.tolerance for e in self.errors)


def numeric_grad(f, arrays, index, h):
    """Central differences of scalar ``f`` w.r.t. ``arrays[index]``."""
    base = arrays[index]
    grad = np.zeros_like(base)
    with no_grad():
        for pos in np.ndindex(base.shape):
            orig = base[pos]
            base[pos] = orig + h
            fp = float(as_tensor(f(*[Tensor(a) for a in arrays])).data)
            base[pos] = orig - h
            fm = float(as_tensor(f(*[Tensor(a) for a in arrays])).data)
            base[pos] = orig
            grad[pos] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(f, inputs, h=1e-5, tol=1e-4, floor=1e-7, wrt=None):
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    The error for each input is max|analytic - numeric| divided by the larger
    of the two gradients' max-norms, floored at ``floor``. ``wrt`` restricts
    which input positions are checked (default: all).
    """
    if not 1e-7 <= h <= 1e-3:
        raise InvalidInputError(f"finite-difference step {h} outside [1e-7, 1e-3]")
    arrays = [np.array(as_tensor(x).data, dtype=np.float64) for x in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    leaves = [Tensor(a.copy(), requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    with Tape() as tape:
        out = as_tensor(f(*leaves))
    if out.size != 1:
        raise UsageError(f"grad_check needs a scalar function, got shape {out.shape}")
    if out._tape is not tape:
        raise UsageError("function output does not depend on any checked input")
    tape.backward(out)
    errors = []
    for i in wrt:
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arrays[i])
        numeric = numeric_grad(f, arrays, i, h)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
        errors.append(float(np.abs(analytic - numeric).max(initial=0.0) / scale))
    return GradCheckReport(errors, tol, h)
