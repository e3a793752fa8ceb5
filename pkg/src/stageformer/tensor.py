"""Reverse-mode automatic differentiation over dense float64 arrays.

Everything downstream (attention, encoder/decoder, heads, losses) is built
from the primitives here.  The design is define-by-run: each op that touches
a tensor with ``requires_grad`` appends a backward closure to a global tape,
and ``Tensor.backward()`` replays the tape in reverse.  The tape is consumed
by backward and rebuilt on the next forward pass.

All data is float64.  Shapes are plain tuples; broadcasting is supported for
the elementwise ops (add/sub/mul/div) and matmul batch dims.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "ShapeError",
    "tensor",
    "reset_tape",
    "tape_size",
    "concat",
    "grad_check",
    "GradCheckReport",
    "kaiming_uniform",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN/Inf from finite inputs."""


# When True every op validates that its output is finite.  Cheap at desk
# scale; can be switched off for benchmarking.
CHECK_FINITE = True


class Tape:
    """Ordered record of backward closures, appended in execution order."""

    def __init__(self):
        self.records: list[Callable[[], None]] = []

    def add(self, fn: Callable[[], None]) -> None:
        self.records.append(fn)

    def replay_backward(self) -> None:
        for fn in reversed(self.records):
            fn()
        self.records.clear()

    def __len__(self):
        return len(self.records)


_TAPE = Tape()


def reset_tape() -> None:
    """Drop all recorded operations (start of a fresh training step)."""
    _TAPE.records.clear()


def tape_size() -> int:
    return len(_TAPE)


def _check_finite(data: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Tensor:
    """Dense float64 array, optionally participating in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        """Populate ``grad`` of every reachable requires_grad tensor.

        Only valid on scalar tensors.  Consumes the tape.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor that requires no grad")
        self.grad = self.grad + np.ones_like(self.data)
        _TAPE.replay_backward()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def tensor(x, requires_grad: bool = False) -> Tensor:
    """Coerce ``x`` to a Tensor (no-op if it already is one)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad = t.grad + g


def _make(data: np.ndarray, inputs: Sequence[Tensor],
          backward: Callable[[Tensor], None], op: str) -> Tensor:
    """Wrap an op output; register on the tape when any input needs grad."""
    _check_finite(data, op)
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    if rg:
        _TAPE.add(lambda: backward(out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    data = a.data + b.data

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    data = a.data - b.data

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-out.grad, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    data = a.data * b.data

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data),
                                   b.shape))

    return _make(data, (a, b), backward, "div")


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(
            f"matmul needs a >=1-d lhs and >=2-d rhs, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            al = a.data[..., :, None] if a.ndim == 1 else np.swapaxes(a.data, -1, -2)
            gl = g[..., None, :] if a.ndim == 1 else g
            gb = np.matmul(al, gl)
            _accum(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = tensor(x)
    mask = x.data > 0
    data = np.where(mask, x.data, 0.0)

    def backward(out):
        if x.requires_grad:
            _accum(x, out.grad * mask)

    return _make(data, (x,), backward, "relu")


def absolute(x) -> Tensor:
    x = tensor(x)
    data = np.abs(x.data)

    def backward(out):
        if x.requires_grad:
            _accum(x, out.grad * np.sign(x.data))

    return _make(data, (x,), backward, "abs")


def sigmoid(x) -> Tensor:
    x = tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(out):
        if x.requires_grad:
            _accum(x, out.grad * data * (1.0 - data))

    return _make(data, (x,), backward, "sigmoid")


def log(x, clamp: float = 1e-12) -> Tensor:
    """Natural log with the input clamped at ``clamp`` from below.

    Clamped entries get zero gradient (the clamp is a flat region).
    """
    x = tensor(x)
    clamped = np.maximum(x.data, clamp)
    data = np.log(clamped)
    live = x.data > clamp

    def backward(out):
        if x.requires_grad:
            _accum(x, out.grad * np.where(live, 1.0 / clamped, 0.0))

    return _make(data, (x,), backward, "log")


def softmax(x, axis: int = -1) -> Tensor:
    x = tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(out):
        if x.requires_grad:
            g = out.grad
            _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (x,), backward, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"log_softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(out):
        if x.requires_grad:
            g = out.grad
            _accum(x, g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    return _make(ls, (x,), backward, "log_softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learnable scale/shift."""
    x, gamma, beta = tensor(x), tensor(gamma), tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm scale/shift shape {gamma.shape}/{beta.shape} "
            f"does not match feature dim of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gamma.data * xhat + beta.data

    def backward(out):
        g = out.grad
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, x.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx - m1 - xhat * m2))

    return _make(data, (x, gamma, beta), backward, "layer_norm")


# ---------------------------------------------------------------------------
# Reductions, shaping, indexing
# ---------------------------------------------------------------------------

def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(out):
        if x.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.shape).copy())

    return _make(data, (x,), backward, "sum")


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])

    def backward(out):
        if x.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.shape) / count)

    return _make(data, (x,), backward, "mean")


def cumsum(x, axis: int = -1) -> Tensor:
    x = tensor(x)
    data = np.cumsum(x.data, axis=axis)

    def backward(out):
        if x.requires_grad:
            g = np.flip(np.cumsum(np.flip(out.grad, axis), axis), axis)
            _accum(x, g)

    return _make(data, (x,), backward, "cumsum")


def reshape(x, shape) -> Tensor:
    x = tensor(x)
    data = x.data.reshape(shape)

    def backward(out):
        if x.requires_grad:
            _accum(x, out.grad.reshape(x.shape))

    return _make(data, (x,), backward, "reshape")


def transpose(x, axes=None) -> Tensor:
    x = tensor(x)
    data = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(out):
        if x.requires_grad:
            _accum(x, np.transpose(out.grad, inv))

    return _make(data, (x,), backward, "transpose")


def getitem(x, idx) -> Tensor:
    x = tensor(x)
    data = x.data[idx]

    def backward(out):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.add.at(g, idx, out.grad)
            _accum(x, g)

    return _make(np.array(data, copy=True), (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(out):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, out.grad[tuple(sl)])

    return _make(data, ts, backward, "concat")


# ---------------------------------------------------------------------------
# Convolution and interpolation
# ---------------------------------------------------------------------------

def conv1d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution: x (T, C_in), w (k, C_in, C_out), b (C_out,)."""
    x, w, b = tensor(x), tensor(w), tensor(b)
    if stride < 1:
        raise ShapeError(f"conv1d stride must be >= 1, got {stride}")
    if x.ndim != 2 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d shape mismatch: x {x.shape}, w {w.shape}")
    k = w.shape[0]
    t_in = x.shape[0]
    xp = np.pad(x.data, ((padding, padding), (0, 0)))
    t_out = (t_in + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ShapeError(
            f"conv1d output empty: T={t_in}, k={k}, stride={stride}, pad={padding}")
    data = np.broadcast_to(b.data, (t_out, w.shape[2])).copy()
    segs = []
    for j in range(k):
        seg = xp[j:j + (t_out - 1) * stride + 1:stride]
        segs.append(seg)
        data += seg @ w.data[j]

    def backward(out):
        g = out.grad
        if b.requires_grad:
            _accum(b, g.sum(axis=0))
        if w.requires_grad:
            gw = np.stack([segs[j].T @ g for j in range(k)])
            _accum(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[j:j + (t_out - 1) * stride + 1:stride] += g @ w.data[j].T
            _accum(x, gxp[padding:padding + t_in])

    return _make(data, (x, w, b), backward, "conv1d")


def deform_gather(values, positions) -> Tensor:
    """Linear-interpolation gather along the time axis, per head.

    values: (T, H, D); positions: (N, H, K) fractional time indices.
    Returns (N, H, K, D).  Positions outside [0, T-1] read zero-padded
    values; the gradient w.r.t. positions is the local slope.
    """
    v, p = tensor(values), tensor(positions)
    if v.ndim != 3 or p.ndim != 3 or v.shape[1] != p.shape[1]:
        raise ShapeError(
            f"deform_gather shape mismatch: values {v.shape}, positions {p.shape}")
    t_len = v.shape[0]
    i0 = np.floor(p.data).astype(np.int64)
    i1 = i0 + 1
    w1 = p.data - i0
    m0 = ((i0 >= 0) & (i0 < t_len))[..., None]
    m1 = ((i1 >= 0) & (i1 < t_len))[..., None]
    c0 = np.clip(i0, 0, t_len - 1)
    c1 = np.clip(i1, 0, t_len - 1)
    hh = np.broadcast_to(np.arange(v.shape[1])[None, :, None], p.shape)
    v0 = v.data[c0, hh] * m0
    v1 = v.data[c1, hh] * m1
    data = (1.0 - w1)[..., None] * v0 + w1[..., None] * v1

    def backward(out):
        g = out.grad
        if v.requires_grad:
            gv = np.zeros_like(v.data)
            np.add.at(gv, (c0, hh), ((1.0 - w1)[..., None] * m0) * g)
            np.add.at(gv, (c1, hh), (w1[..., None] * m1) * g)
            _accum(v, gv)
        if p.requires_grad:
            _accum(p, ((v1 - v0) * g).sum(axis=-1))

    return _make(data, (v, p), backward, "deform_gather")


def interp_gather(values, positions) -> Tensor:
    """Gather ``values`` at fractional ``positions`` with linear interpolation.

    values: (T,) or (T, E); positions: scalar or any-shape array.  Output
    shape is positions.shape (+ E when values carry a feature axis).
    Out-of-range positions read zeros (one cell past either boundary the
    contribution and its source-gradient vanish entirely).
    """
    v, p = tensor(values), tensor(positions)
    if v.ndim not in (1, 2):
        raise ShapeError(f"interp_gather values must be 1-d or 2-d, got {v.shape}")
    flat_v = reshape(v, (v.shape[0], 1, -1))
    flat_p = reshape(p, (-1, 1, 1))
    out = deform_gather(flat_v, flat_p)
    if v.ndim == 1:
        return reshape(out, p.shape)
    return reshape(out, p.shape + (v.shape[1],))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    analytic: np.ndarray
    numeric: np.ndarray


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central
    finite differences.

    The relative error per entry is |a - n| / max(|a|, |n|, 1e-3); the
    floor keeps near-zero gradients from inflating the ratio beyond what
    finite-difference roundoff can resolve.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    x = tensor(x)
    reset_tape()
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued f, got {out.shape}")
    out.backward()
    analytic = probe.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.copy().ravel()
    nflat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig - eps
        lo = f(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)
    reset_tape()

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    return GradCheckReport(max_rel_error=max_rel, passed=max_rel <= tol,
                           analytic=analytic, numeric=numeric)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int,
                    requires_grad: bool = True) -> Tensor:
    """Uniform init scaled by 1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape),
                  requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = True) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)
