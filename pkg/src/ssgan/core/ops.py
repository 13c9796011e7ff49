"""Differentiable operations on :class:`~ssgan.core.tensor.Tensor`.

Every function computes its forward value with numpy and, when an input is
tracked, records a backward closure on the input's tape. Convolutions use
the cross-correlation convention (no kernel flip) and are lowered to a
single matrix product through an im2col view.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DegenerateStatisticsError, ShapeError
from .tensor import Tensor, record

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.2


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: extents differ {a.shape} vs {b.shape}")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: extents differ {a.shape} vs {b.shape}")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: extents differ {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c: float) -> Tensor:
    a = _t(a)
    c = a.dtype.type(c)
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def square(a) -> Tensor:
    a = _t(a)
    ad = a.data
    return record("square", ad * ad, (a,), lambda g: (2 * ad * g,))


def exp(a) -> Tensor:
    a = _t(a)
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _t(a)
    ad = a.data
    return record("log", np.log(ad), (a,), lambda g: (g / ad,))


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); the gradient is zero where the floor is active."""
    a = _t(a)
    keep = a.data >= floor
    out = np.where(keep, a.data, a.dtype.type(floor))
    return record("clamp_min", out, (a,), lambda g: (g * keep,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _t(a)
    old = a.shape
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat_rows(parts: Sequence) -> Tensor:
    """Stack tensors along the leading axis."""
    ts = [_t(t) for t in parts]
    if not ts:
        raise ShapeError("concat_rows needs at least one tensor")
    tail = ts[0].shape[1:]
    for t in ts[1:]:
        if t.shape[1:] != tail:
            raise ShapeError(f"concat_rows: trailing extents {t.shape[1:]} vs {tail}")
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])
    out = np.concatenate([t.data for t in ts], axis=0)
    return record("concat_rows", out, ts,
                  lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts))))


def slice_rows(a, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of the leading axis."""
    a = _t(a)
    n = a.shape[0]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice_rows: [{start}, {stop}) outside [0, {n})")
    shape, dt = a.shape, a.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dt)
        full[start:stop] = g
        return (full,)

    return record("slice_rows", a.data[start:stop], (a,), bwd)


def total(a) -> Tensor:
    """Sum of all elements as a one-element tensor."""
    a = _t(a)
    shape, dt = a.shape, a.dtype
    out = np.asarray(a.data.sum(dtype=dt), dtype=dt).reshape(1)
    return record("sum", out, (a,), lambda g: (np.full(shape, g[0], dtype=dt),))


def mean(a) -> Tensor:
    a = _t(a)
    shape, dt, n = a.shape, a.dtype, a.data.size
    out = np.asarray(a.data.sum(dtype=dt) / n, dtype=dt).reshape(1)
    return record("mean", out, (a,), lambda g: (np.full(shape, g[0] / n, dtype=dt),))


def masked_mean(a, mask: np.ndarray) -> Tensor:
    """Mean over the elements where ``mask`` is true."""
    a = _t(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"masked_mean: mask {mask.shape} vs tensor {a.shape}")
    n = int(mask.sum())
    if n == 0:
        raise ShapeError("masked_mean: mask selects no element")
    dt = a.dtype
    out = np.asarray(a.data[mask].sum(dtype=dt) / n, dtype=dt).reshape(1)
    w = mask.astype(dt) / dt.type(n)
    return record("masked_mean", out, (a,), lambda g: (w * g[0],))


def linear_combination(terms: Sequence[tuple]) -> Tensor:
    """sum_i c_i * t_i over one-element tensors ``[(c_i, t_i), ...]``."""
    coeffs = [float(c) for c, _ in terms]
    ts = [_t(t) for _, t in terms]
    dt = ts[0].dtype
    out = np.zeros(1, dtype=dt)
    for c, t in zip(coeffs, ts):
        if t.data.size != 1:
            raise ShapeError("linear_combination takes one-element tensors")
        out = out + dt.type(c) * t.data.reshape(1)
    return record(
        "lincomb", out, ts,
        lambda g: tuple((dt.type(c) * g).reshape(t.shape) for c, t in zip(coeffs, ts)),
    )


# ---------------------------------------------------------------------------
# activations and channel-wise probability ops
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = _t(x)
    pos = x.data > 0
    return record("relu", np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def leaky_relu(x, alpha: float = LEAKY_SLOPE) -> Tensor:
    if not 0 < alpha < 1:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {alpha}")
    x = _t(x)
    a = x.dtype.type(alpha)
    slope = np.where(x.data > 0, x.dtype.type(1), a)
    return record("leaky_relu", x.data * slope, (x,), lambda g: (g * slope,))


def tanh(x) -> Tensor:
    x = _t(x)
    y = np.tanh(x.data)
    return record("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def activation(x, kind: str, alpha: float = LEAKY_SLOPE) -> Tensor:
    """Dispatch on ``kind`` in {"relu", "leaky_relu", "tanh"}."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    raise ConfigError(f"unknown activation {kind!r}")


def _softmax(z: np.ndarray, axis: int = 1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_channels(logits) -> Tensor:
    """Per-pixel softmax over the channel axis of an (N, K, H, W) tensor."""
    logits = _t(logits)
    if logits.data.ndim != 4:
        raise ShapeError(f"softmax_channels expects (N, K, H, W), got {logits.shape}")
    if logits.shape[1] < 2:
        raise ShapeError("softmax_channels needs at least two channels")
    p = _softmax(logits.data)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return record("softmax", p, (logits,), bwd)


def logsumexp_channels(x, channels: Optional[Sequence[int]] = None) -> Tensor:
    """log(sum(exp(x[:, c]))) over the chosen channels, giving (N, H, W)."""
    x = _t(x)
    if x.data.ndim != 4:
        raise ShapeError(f"logsumexp_channels expects (N, K, H, W), got {x.shape}")
    idx = list(range(x.shape[1])) if channels is None else list(channels)
    sub = x.data[:, idx]
    m = sub.max(axis=1, keepdims=True)
    e = np.exp(sub - m)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s))[:, 0]
    w = e / s
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, idx] = w * g[:, None]
        return (gx,)

    return record("logsumexp", out, (x,), bwd)


def take_channels(x, labels: np.ndarray) -> Tensor:
    """x[n, labels[n, h, w], h, w] for every pixel, giving (N, H, W)."""
    x = _t(x)
    labels = np.asarray(labels, dtype=np.int64)
    n, k, h, w = x.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"take_channels: labels {labels.shape} vs logits {x.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError("take_channels: label outside channel range")
    sel = labels[:, None]
    out = np.take_along_axis(x.data, sel, axis=1)[:, 0]
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, sel, g[:, None], axis=1)
        return (gx,)

    return record("take_channels", out, (x,), bwd)


# ---------------------------------------------------------------------------
# dense projection
# ---------------------------------------------------------------------------

def dense(x, weight, bias) -> Tensor:
    """x @ weight + bias for x (N, D), weight (D, M), bias (M,)."""
    x, weight, bias = _t(x), _t(weight), _t(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} vs {weight.shape[1]} outputs")
    xd, wd = x.data, weight.data
    out = xd @ wd + bias.data
    return record("dense", out, (x, weight, bias), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(x: np.ndarray, kh: int, kw: int, s: int, p: int, ho: int, wo: int) -> np.ndarray:
    """Rows are output positions (n, i, j); columns are (c, di, dj)."""
    n, c = x.shape[:2]
    win = sliding_window_view(_pad(x, p), (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def _col2im(cols: np.ndarray, n: int, c: int, h: int, w: int,
            kh: int, kw: int, s: int, p: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back onto the image."""
    blocks = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for di in range(kh):
        for dj in range(kw):
            out[:, :, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s] += blocks[:, :, di, dj]
    if p:
        out = out[:, :, p : p + h, p : p + w]
    return out


def _check_conv_args(stride: int, padding: int):
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigError(f"padding must be non-negative, got {padding}")


def conv2d(x, kernels, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate (N, Cin, H, W) with kernels (Cout, Cin, kH, kW)."""
    x, kernels, bias = _t(x), _t(kernels), _t(bias)
    _check_conv_args(stride, padding)
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-axis input and kernels, got {x.shape}, {kernels.shape}")
    n, c, h, w = x.shape
    co, ci, kh, kw = kernels.shape
    if ci != c:
        raise ShapeError(f"conv2d: channel axis mismatch, input has {c}, kernels expect {ci}")
    if bias.shape != (co,):
        raise ShapeError(f"conv2d: bias axis has {bias.shape}, expected ({co},)")
    if h + 2 * padding < kh:
        raise ShapeError(f"conv2d: height axis {h} (+2*{padding}) smaller than kernel {kh}")
    if w + 2 * padding < kw:
        raise ShapeError(f"conv2d: width axis {w} (+2*{padding}) smaller than kernel {kw}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConfigError(f"conv2d: output would be empty ({ho}x{wo})")
    cols = _im2col(x.data, kh, kw, stride, padding, ho, wo)
    kmat = kernels.data.reshape(co, -1)
    out = (cols @ kmat.T).reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    out = out + bias.data[None, :, None, None]

    def bwd(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gk = (gm.T @ cols).reshape(kernels.shape)
        gx = _col2im(gm @ kmat, n, c, h, w, kh, kw, stride, padding, ho, wo)
        return gx, gk, gm.sum(axis=0)

    return record("conv2d", np.ascontiguousarray(out), (x, kernels, bias), bwd)


def conv2d_transpose(x, kernels, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Fractionally-strided convolution, the adjoint of :func:`conv2d`.

    ``kernels`` has extents (Cin, Cout, kH, kW); the output height is
    (H - 1) * stride - 2 * padding + kH.
    """
    x, kernels, bias = _t(x), _t(kernels), _t(bias)
    _check_conv_args(stride, padding)
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d_transpose expects 4-axis input and kernels, got {x.shape}, {kernels.shape}")
    n, ci, h, w = x.shape
    kci, co, kh, kw = kernels.shape
    if kci != ci:
        raise ShapeError(f"conv2d_transpose: channel axis mismatch, input has {ci}, kernels expect {kci}")
    if bias.shape != (co,):
        raise ShapeError(f"conv2d_transpose: bias axis has {bias.shape}, expected ({co},)")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d_transpose: computed output extent {ho}x{wo} is not positive")
    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, ci)
    kmat = kernels.data.reshape(ci, -1)
    out = _col2im(xm @ kmat, n, co, ho, wo, kh, kw, stride, padding, h, w)
    out += bias.data[None, :, None, None]

    def bwd(g):
        gcols = _im2col(g, kh, kw, stride, padding, h, w)
        gx = (gcols @ kmat.T).reshape(n, h, w, ci).transpose(0, 3, 1, 2)
        gk = (xm.T @ gcols).reshape(kernels.shape)
        return np.ascontiguousarray(gx), gk, g.sum(axis=(0, 2, 3))

    return record("conv2d_transpose", out, (x, kernels, bias), bwd)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class RunningStats:
    """Per-channel running mean and variance owned by a normalization layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(x, gamma, beta, running: Optional[RunningStats], mode: str = "train",
               momentum: float = BN_MOMENTUM, eps: float = BN_EPS,
               update_running: bool = True, running_rows: Optional[int] = None) -> Tensor:
    """Normalize each channel of (N, C, H, W) or (N, C) then apply gamma, beta.

    In train mode the statistics come from the batch and, when
    ``update_running`` is set, are folded into ``running`` as
    ``running = momentum * running + (1 - momentum) * batch``.
    ``running_rows`` restricts that fold to the first rows of the batch
    (normalization itself still uses every row).
    In infer mode only ``running`` is used.
    """
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    if x.data.ndim not in (2, 4):
        raise ShapeError(f"batch_norm expects (N, C) or (N, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must be ({c},), got {gamma.shape}, {beta.shape}")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.data.ndim == 2 else (1, c, 1, 1)
    dt = x.dtype
    xd = x.data
    if mode == "train":
        count = xd.size // c
        if count < 2:
            raise DegenerateStatisticsError(
                f"batch_norm in train mode needs at least 2 values per channel, got {count}")
        # float64 accumulation keeps constant channels exactly zero-variance
        mu64 = xd.mean(axis=axes, dtype=np.float64)
        var = xd.var(axis=axes, dtype=np.float64).astype(dt)
        mu = mu64.astype(dt)
        if running is not None and update_running:
            r_mu, r_var = mu, var
            if running_rows is not None and running_rows != xd.shape[0]:
                if not 0 < running_rows <= xd.shape[0] or running_rows * count // xd.shape[0] < 2:
                    raise DegenerateStatisticsError(f"running_rows={running_rows} out of range")
                head = xd[:running_rows]
                r_mu = head.mean(axis=axes, dtype=np.float64).astype(dt)
                r_var = head.var(axis=axes, dtype=np.float64).astype(dt)
            running.mean[...] = momentum * running.mean + (1 - momentum) * r_mu
            running.var[...] = momentum * running.var + (1 - momentum) * r_var
    elif mode == "infer":
        if running is None:
            raise ConfigError("batch_norm in infer mode needs running statistics")
        mu = running.mean.astype(dt, copy=False)
        var = running.var.astype(dt, copy=False)
        count = None
    else:
        raise ConfigError(f"unknown batch_norm mode {mode!r}")
    inv = (1.0 / np.sqrt(var + dt.type(eps))).astype(dt)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    g_ = gamma.data.reshape(bshape)
    out = xhat * g_ + beta.data.reshape(bshape)

    def bwd(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        if count is None:
            dx = dxhat * inv.reshape(bshape)
        else:
            dx = (inv.reshape(bshape) / count) * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        return dx.astype(dt, copy=False), dgamma, dbeta

    return record("batch_norm", out.astype(dt, copy=False), (x, gamma, beta), bwd)
