"""NCHW tensor primitives with exact analytic backward passes.

A "tensor" here is a plain numpy array of shape (n, c, h, w): float32 for
normal compute, float64 when checking gradients. Every op is a pure
function of its inputs, with one exception: batch_norm in train mode
updates the running statistics stored on its BnParams in place.

Convolution output size follows the usual floor convention
(h + 2*pad - k) // stride + 1. Max pooling takes a *total* padding amount,
split floor-left (pad=1 pads only bottom/right), which is what the
size-2/stride-1 dimension-preserving pool needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class DimensionError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(ValueError):
    """Structurally invalid layer configuration."""


LEAKY_SLOPE = 0.1


@dataclass
class ConvParams:
    """Cross-correlation parameters; weights shaped (out_c, in_c // groups, k, k)."""

    weights: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    pad: int = 0
    groups: int = 1

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.01

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _check_4d(x: np.ndarray, what: str = "input") -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what} must be 4-D (n, c, h, w), got shape {x.shape}")


def _pad_nchw(x: np.ndarray, top: int, bottom: int, left: int, right: int,
              value: float = 0.0) -> np.ndarray:
    if top == bottom == left == right == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)),
                  constant_values=value)


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Padded input (n, c, hp, wp) -> patch matrix (n, c*k*k, oh*ow)."""
    n, c, _, _ = xp.shape
    if k == 1 and stride == 1:
        return xp.reshape(n, c, oh * ow)
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, k, k, oh, ow),
        (s0, s1, s2, s3, s2 * stride, s3 * stride), writeable=False)
    return win.reshape(n, c * k * k, oh * ow)


def _col2im(dcols: np.ndarray, n: int, c: int, hp: int, wp: int,
            k: int, stride: int, oh: int, ow: int, dtype) -> np.ndarray:
    dxp = np.zeros((n, c, hp, wp), dtype)
    if k == 1 and stride == 1:
        dxp += dcols.reshape(n, c, oh, ow)
        return dxp
    v = dcols.reshape(n, c, k, k, oh, ow)
    s = stride
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += v[:, :, i, j]
    return dxp


def _conv_geometry(x: np.ndarray, p: ConvParams) -> tuple[int, int]:
    n, c, h, w = x.shape
    k = p.kernel
    if c != p.in_channels:
        raise DimensionError(
            f"conv expects {p.in_channels} input channels, got {c}")
    if p.groups < 1 or c % p.groups or p.out_channels % p.groups:
        raise ConfigError(
            f"groups={p.groups} must divide in_c={c} and out_c={p.out_channels}")
    oh = (h + 2 * p.pad - k) // p.stride + 1
    ow = (w + 2 * p.pad - k) // p.stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"conv output {oh}x{ow} not positive for input {h}x{w}, "
            f"k={k} stride={p.stride} pad={p.pad}")
    return oh, ow


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Grouped 2-D cross-correlation."""
    _check_4d(x)
    n, c, h, w = x.shape
    oc, icg, k, _ = p.weights.shape
    oh, ow = _conv_geometry(x, p)
    g = p.groups
    xp = _pad_nchw(x, p.pad, p.pad, p.pad, p.pad)
    if g == 1:
        cols = _im2col(xp, k, p.stride, oh, ow)
        y = np.matmul(p.weights.reshape(oc, -1), cols).reshape(n, oc, oh, ow)
    elif icg == 1 and oc == c:
        # depthwise: accumulate one kernel tap at a time, all vectorized
        s = p.stride
        wk = p.weights.reshape(c, k, k)
        y = np.zeros((n, c, oh, ow), np.result_type(x, p.weights))
        for i in range(k):
            for j in range(k):
                y += wk[:, i, j].reshape(1, c, 1, 1) * \
                    xp[:, :, i:i + s * oh:s, j:j + s * ow:s]
    else:
        ocg = oc // g
        parts = []
        for gi in range(g):
            cols = _im2col(xp[:, gi * icg:(gi + 1) * icg], k, p.stride, oh, ow)
            wg = p.weights[gi * ocg:(gi + 1) * ocg].reshape(ocg, -1)
            parts.append(np.matmul(wg, cols))
        y = np.concatenate(parts, axis=1).reshape(n, oc, oh, ow)
    if p.bias is not None:
        y = y + p.bias.reshape(1, oc, 1, 1)
    return y


def conv2d_backward(dy: np.ndarray, x: np.ndarray, p: ConvParams
                    ) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Gradients (dx, dweights, dbias) of sum(dy * conv2d(x, p))."""
    n, c, h, w = x.shape
    oc, icg, k, _ = p.weights.shape
    g = p.groups
    s = p.stride
    oh, ow = dy.shape[2], dy.shape[3]
    hp, wp = h + 2 * p.pad, w + 2 * p.pad
    xp = _pad_nchw(x, p.pad, p.pad, p.pad, p.pad)
    if g == 1:
        cols = _im2col(xp, k, s, oh, ow)
        dyf = dy.reshape(n, oc, oh * ow)
        dw = np.tensordot(dyf, cols, axes=([0, 2], [0, 2])).reshape(p.weights.shape)
        dcols = np.matmul(p.weights.reshape(oc, -1).T, dyf)
        dxp = _col2im(dcols, n, c, hp, wp, k, s, oh, ow, x.dtype)
    elif icg == 1 and oc == c:
        wk = p.weights.reshape(c, k, k)
        dw = np.zeros_like(p.weights).reshape(c, k, k)
        dxp = np.zeros((n, c, hp, wp), x.dtype)
        for i in range(k):
            for j in range(k):
                xs = xp[:, :, i:i + s * oh:s, j:j + s * ow:s]
                dw[:, i, j] = (dy * xs).sum(axis=(0, 2, 3))
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += \
                    wk[:, i, j].reshape(1, c, 1, 1) * dy
        dw = dw.reshape(p.weights.shape)
    else:
        ocg = oc // g
        dw = np.zeros_like(p.weights)
        dxp = np.zeros((n, c, hp, wp), x.dtype)
        for gi in range(g):
            csl = slice(gi * icg, (gi + 1) * icg)
            osl = slice(gi * ocg, (gi + 1) * ocg)
            cols = _im2col(xp[:, csl], k, s, oh, ow)
            dyf = dy[:, osl].reshape(n, ocg, oh * ow)
            dw[osl] = np.tensordot(dyf, cols, axes=([0, 2], [0, 2])
                                   ).reshape(ocg, icg, k, k)
            dcols = np.matmul(p.weights[osl].reshape(ocg, -1).T, dyf)
            dxp[:, csl] = _col2im(dcols, n, icg, hp, wp, k, s, oh, ow, x.dtype)
    db = dy.sum(axis=(0, 2, 3)) if p.bias is not None else None
    dx = dxp[:, :, p.pad:p.pad + h, p.pad:p.pad + w]
    return dx, dw, db


def batch_norm_infer(x: np.ndarray, p: BnParams) -> np.ndarray:
    _check_4d(x)
    if x.shape[1] != p.channels:
        raise DimensionError(
            f"batch_norm expects {p.channels} channels, got {x.shape[1]}")
    scale = p.gamma / np.sqrt(p.running_var + p.eps)
    shift = p.beta - p.running_mean * scale
    return x * scale.reshape(1, -1, 1, 1) + shift.reshape(1, -1, 1, 1)


def batch_norm_train(x: np.ndarray, p: BnParams) -> np.ndarray:
    """Normalize with batch statistics; EMA-update running stats in place."""
    _check_4d(x)
    if x.shape[1] != p.channels:
        raise DimensionError(
            f"batch_norm expects {p.channels} channels, got {x.shape[1]}")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    xhat = (x - mean.reshape(1, -1, 1, 1)) / \
        np.sqrt(var + p.eps).reshape(1, -1, 1, 1)
    y = p.gamma.reshape(1, -1, 1, 1) * xhat + p.beta.reshape(1, -1, 1, 1)
    m = p.momentum
    p.running_mean[:] = (1.0 - m) * p.running_mean + m * mean
    p.running_var[:] = (1.0 - m) * p.running_var + m * var
    return y


def batch_norm(x: np.ndarray, p: BnParams, mode: str = "infer") -> np.ndarray:
    if mode == "infer":
        return batch_norm_infer(x, p)
    if mode == "train":
        return batch_norm_train(x, p)
    raise ConfigError(f"unknown batch_norm mode {mode!r}")


def batch_norm_train_backward(dy: np.ndarray, x: np.ndarray, p: BnParams
                              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dgamma, dbeta) for the batch-statistics path."""
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    ivar = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * ivar.reshape(1, -1, 1, 1)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * p.gamma.reshape(1, -1, 1, 1)
    sum_dxhat = dxhat.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    dx = (ivar.reshape(1, -1, 1, 1) / m) * \
        (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "leaky":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "linear":
        return x
    raise ConfigError(f"unknown activation {kind!r}")


def activation_backward(dy: np.ndarray, x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "leaky":
        return dy * np.where(x > 0, 1.0, LEAKY_SLOPE).astype(x.dtype)
    if kind == "sigmoid":
        s = sigmoid(x)
        return dy * s * (1.0 - s)
    if kind == "linear":
        return dy
    raise ConfigError(f"unknown activation {kind!r}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _pool_windows(x: np.ndarray, size: int, stride: int, pad: int):
    n, c, h, w = x.shape
    pt, pl = pad // 2, pad // 2
    pb, pr = pad - pt, pad - pl
    oh = (h + pad - size) // stride + 1
    ow = (w + pad - size) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"maxpool output {oh}x{ow} not positive for input {h}x{w}")
    xp = _pad_nchw(x, pt, pb, pl, pr, value=-np.inf)
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, oh, ow, size, size),
        (s0, s1, s2 * stride, s3 * stride, s2, s3), writeable=False)
    return win.reshape(n, c, oh, ow, size * size), xp.shape, (pt, pl), oh, ow


def maxpool2d(x: np.ndarray, size: int, stride: int, pad: int = 0) -> np.ndarray:
    """Per-window maximum. `pad` is the total padding, split floor-left."""
    _check_4d(x)
    win, _, _, _, _ = _pool_windows(x, size, stride, pad)
    return win.max(axis=-1)


def maxpool2d_backward(dy: np.ndarray, x: np.ndarray, size: int, stride: int,
                       pad: int = 0) -> np.ndarray:
    """Route dy to each window's argmax (first index wins on ties)."""
    n, c, h, w = x.shape
    win, (_, _, hp, wp), (pt, pl), oh, ow = _pool_windows(x, size, stride, pad)
    arg = win.argmax(axis=-1)
    ki, kj = np.divmod(arg, size)
    oy = np.arange(oh).reshape(1, 1, oh, 1)
    ox = np.arange(ow).reshape(1, 1, 1, ow)
    flat = (oy * stride + ki) * wp + (ox * stride + kj)
    dxp = np.zeros((n, c, hp * wp), x.dtype)
    ni = np.arange(n).reshape(n, 1, 1, 1)
    ci = np.arange(c).reshape(1, c, 1, 1)
    np.add.at(dxp, (ni, ci, flat), dy)
    return dxp.reshape(n, c, hp, wp)[:, :, pt:pt + h, pl:pl + w]


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    _check_4d(x)
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def upsample_nearest_backward(dy: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return dy
    n, c, hf, wf = dy.shape
    h, w = hf // factor, wf // factor
    return dy.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))


def concat_channels(xs: list[np.ndarray]) -> np.ndarray:
    if not xs:
        raise DimensionError("concat needs at least one input")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise DimensionError(
                f"concat inputs disagree on (n, h, w): {ref} vs {x.shape}")
    if len(xs) == 1:
        return xs[0]
    return np.concatenate(xs, axis=1)


def concat_channels_backward(dy: np.ndarray, widths: list[int]) -> list[np.ndarray]:
    bounds = np.cumsum(widths)[:-1]
    return np.split(dy, bounds, axis=1)


def reorg_permutation(channels: int, groups: int) -> np.ndarray:
    """Gather indices of the reshape-(g, c/g)-transpose channel shuffle."""
    if groups < 1 or channels % groups:
        raise ConfigError(
            f"reorganize groups={groups} must divide channels={channels}")
    return np.arange(channels).reshape(groups, channels // groups).T.ravel()


def channel_reorganize(x: np.ndarray, groups: int = 2) -> np.ndarray:
    _check_4d(x)
    return x[:, reorg_permutation(x.shape[1], groups)]


def channel_reorganize_backward(dy: np.ndarray, groups: int) -> np.ndarray:
    perm = reorg_permutation(dy.shape[1], groups)
    return dy[:, np.argsort(perm)]


def shortcut_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"shortcut shapes differ: {a.shape} vs {b.shape}")
    return a + b


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(forward: Callable[[np.ndarray], np.ndarray],
                   vjp: Callable[[np.ndarray, np.ndarray], np.ndarray],
                   x: np.ndarray,
                   tolerance: float = 1e-4,
                   step: float = 1e-5,
                   seed: int = 0) -> GradCheckReport:
    """Compare an analytic vector-Jacobian product against central differences.

    ``forward`` maps x to y; ``vjp(dy, x)`` must return dL/dx for L = sum(dy*y).
    Run in float64: central differences with the default step leave ~1e-9
    of noise, far below the 1e-4 acceptance tolerance. Relative error uses
    a unit floor in the denominator so near-zero gradients compare on an
    absolute scale.
    """
    if x.dtype != np.float64:
        raise ConfigError("gradient_check requires a float64 input")
    rng = np.random.default_rng(seed)
    y = forward(x)
    dy = rng.standard_normal(y.shape)
    analytic = vjp(dy, x)
    numeric = np.zeros_like(x)
    flat = x.ravel()
    nflat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float((forward(x) * dy).sum())
        flat[i] = orig - step
        lo = float((forward(x) * dy).sum())
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    err = float((np.abs(analytic - numeric) / denom).max())
    return GradCheckReport(max_rel_error=err, tolerance=tolerance)
