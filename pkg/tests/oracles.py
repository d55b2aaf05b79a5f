"""Independent reference implementations used only by the test suite.

Everything here is written the slow, obvious way (nested loops, exhaustive
search, bit twiddling) so it shares no code path with the package.
"""

from __future__ import annotations

import struct

import numpy as np


def conv2d_naive(x, weights, bias=None, stride=1, pad=0, groups=1):
    n, c, h, w = x.shape
    oc, icg, k, _ = weights.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    y = np.zeros((n, oc, oh, ow), x.dtype)
    ocg = oc // groups
    for b in range(n):
        for o in range(oc):
            g = o // ocg
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(icg):
                        for i in range(k):
                            for j in range(k):
                                acc += weights[o, ci, i, j] * \
                                    xp[b, g * icg + ci, oy * stride + i, ox * stride + j]
                    if bias is not None:
                        acc += bias[o]
                    y[b, o, oy, ox] = acc
    return y


def maxpool2d_naive(x, size, stride, pad=0):
    n, c, h, w = x.shape
    pt = pad // 2
    pl = pad // 2
    oh = (h + pad - size) // stride + 1
    ow = (w + pad - size) // stride + 1
    hp, wp = h + pad, w + pad
    xp = np.full((n, c, hp, wp), -np.inf, x.dtype)
    xp[:, :, pt:pt + h, pl:pl + w] = x
    y = np.zeros((n, c, oh, ow), x.dtype)
    for b in range(n):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    y[b, ci, oy, ox] = xp[b, ci,
                                          oy * stride:oy * stride + size,
                                          ox * stride:ox * stride + size].max()
    return y


def upsample_naive(x, factor):
    n, c, h, w = x.shape
    y = np.zeros((n, c, h * factor, w * factor), x.dtype)
    for i in range(h * factor):
        for j in range(w * factor):
            y[:, :, i, j] = x[:, :, i // factor, j // factor]
    return y


def shuffle_reshape_transpose(x, groups):
    """Channel shuffle as the literal reshape/transpose, for comparison."""
    n, c, h, w = x.shape
    return x.reshape(n, groups, c // groups, h, w).transpose(0, 2, 1, 3, 4) \
            .reshape(n, c, h, w)


def iou_rasterized(a, b, cells=2048):
    """Count-based IoU of two center-form boxes on a fine uniform grid."""
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    lo_x, hi_x = min(ax1, bx1), max(ax2, bx2)
    lo_y, hi_y = min(ay1, by1), max(ay2, by2)
    if hi_x <= lo_x or hi_y <= lo_y:
        return 0.0
    xs = lo_x + (np.arange(cells) + 0.5) * (hi_x - lo_x) / cells
    ys = lo_y + (np.arange(cells) + 0.5) * (hi_y - lo_y) / cells
    gx, gy = np.meshgrid(xs, ys)
    in_a = (gx >= ax1) & (gx <= ax2) & (gy >= ay1) & (gy <= ay2)
    in_b = (gx >= bx1) & (gx <= bx2) & (gy >= by1) & (gy <= by2)
    inter = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    return inter / union if union else 0.0


def nms_bruteforce(boxes, scores, thresh, iou_fn):
    """Greedy NMS by explicit pairwise checks against every kept box."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        ok = True
        for j in kept:
            if iou_fn(boxes[i], boxes[j]) > thresh:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept


def float_to_half_bits(x: float) -> int:
    """IEEE binary16 bits of a python float, round-to-nearest-even."""
    bits = struct.unpack("<Q", struct.pack("<d", float(x)))[0]
    sign = (bits >> 63) & 1
    exp = (bits >> 52) & 0x7FF
    man = bits & ((1 << 52) - 1)
    hsign = sign << 15
    if exp == 0x7FF:  # inf / nan
        if man:
            return hsign | 0x7E00
        return hsign | 0x7C00
    if exp == 0 and man == 0:
        return hsign
    e = exp - 1023  # unbiased exponent (f64 subnormals are far below half range)
    if e >= 16:
        return hsign | 0x7C00  # overflow -> inf (caller clamps)
    if e >= -14:
        shift = 42
        mant_full = man
        half_exp = e + 15
    else:
        extra = -14 - e
        if extra > 11:
            return hsign  # underflows past the smallest subnormal's round point
        shift = 42 + extra
        mant_full = man | (1 << 52)
        half_exp = 0
    keep = mant_full >> shift
    rem = mant_full & ((1 << shift) - 1)
    tie = 1 << (shift - 1)
    if rem > tie or (rem == tie and (keep & 1)):
        keep += 1
    if half_exp == 0:
        if keep >= 1 << 10:  # rounded up into the normal range
            return hsign | (1 << 10)
        return hsign | keep
    if keep >= 1 << 11:  # mantissa overflowed into the exponent
        keep >>= 1
        half_exp += 1
    if half_exp >= 31:
        return hsign | 0x7C00
    return hsign | (half_exp << 10) | (keep & 0x3FF)


def half_bits_to_float(h: int) -> float:
    sign = -1.0 if (h >> 15) & 1 else 1.0
    exp = (h >> 10) & 0x1F
    man = h & 0x3FF
    if exp == 0x1F:
        return sign * (float("nan") if man else float("inf"))
    if exp == 0:
        return sign * man * 2.0 ** -24
    return sign * (1.0 + man / 1024.0) * 2.0 ** (exp - 15)


def fp16_roundtrip_oracle(x: float) -> float:
    """Reference FP16 quantizer with saturation at +/-65504."""
    if x != x:
        return x
    v = half_bits_to_float(float_to_half_bits(x))
    if v == float("inf"):
        return 65504.0
    if v == float("-inf"):
        return -65504.0
    return v
