"""The closed operator set of the network, with forward and backward rules.

Each op validates shapes, computes the forward result, and (when a tape is
active) records a vector-Jacobian rule.  Kernels are plain numpy; convolution
lowers to a windowed tensordot so the contraction runs through BLAS.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Parameter, Tensor, active_tape


def _record(name, inputs, output, backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None:
        tape.record(name, inputs, output, backward_fn)
    return output


def _check_finite(name: str, arr: np.ndarray) -> None:
    if __debug__ and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in output of {name}")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding; weight is (Cout, Cin, kH, kW)."""
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d weight must be rank 4, got {weight.shape}")
    cout, cin, kh, kw = weight.shape
    n, c, h, w = x.shape
    if c != cin:
        raise ValueError(
            f"conv2d channel mismatch: input shape {x.shape} vs weight shape {weight.shape}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel extents must be odd, got ({kh},{kw})")
    if bias.shape != (1, cout, 1, 1):
        raise ValueError(f"conv2d bias must have shape (1,{cout},1,1), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride={stride}, padding={padding} out of range")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(
            f"conv2d zero-sized output for input {x.shape}, kernel ({kh},{kw}), "
            f"stride {stride}, padding {padding}"
        )

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_nhwc = np.tensordot(win, weight.data, axes=((1, 4, 5), (1, 2, 3)))
    out_data = np.ascontiguousarray(np.moveaxis(out_nhwc, 3, 1)) + bias.data
    _check_finite("conv2d", out_data)
    out = Tensor(out_data)

    def bwd(gout: np.ndarray, need):
        gx = gw = gb = None
        if need[1]:
            gw = np.tensordot(gout, win, axes=((0, 2, 3), (0, 2, 3)))
        if need[2]:
            gb = gout.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)
        if need[0]:
            # Transpose conv: dilate by stride, full-correlate with flipped kernel.
            if stride > 1:
                gd = np.zeros((n, cout, (oh - 1) * stride + 1, (ow - 1) * stride + 1), dtype=gout.dtype)
                gd[:, :, ::stride, ::stride] = gout
            else:
                gd = gout
            gdp = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wflip = weight.data[:, :, ::-1, ::-1].astype(gout.dtype)
            gwin = sliding_window_view(gdp, (kh, kw), axis=(2, 3))
            core = np.tensordot(gwin, wflip, axes=((1, 4, 5), (0, 2, 3)))
            core = np.moveaxis(core, 3, 1)
            gxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=gout.dtype)
            gxp[:, :, : core.shape[2], : core.shape[3]] = core
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        return gx, gw, gb

    return _record("conv2d", (x, weight, bias), out, bwd)


# ---------------------------------------------------------------------------
# resampling


def down2(x: Tensor) -> Tensor:
    """Halve H and W by 2x2 mean pooling; extents must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"down2 requires even spatial extents, got {x.shape}")
    out_data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(out_data)

    def bwd(gout: np.ndarray, need):
        if not need[0]:
            return (None,)
        g = np.repeat(np.repeat(gout, 2, axis=2), 2, axis=3)
        return (g * 0.25,)

    return _record("down2", (x,), out, bwd)


def _bilinear_matrix(size: int, dtype) -> np.ndarray:
    """(2*size, size) interpolation matrix, align-corners=false, edge clamped."""
    src = (np.arange(2 * size, dtype=np.float64) + 0.5) / 2.0 - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = np.clip(i0 + 1, 0, size - 1)
    i0 = np.clip(i0, 0, size - 1)
    mat = np.zeros((2 * size, size), dtype=np.float64)
    rows = np.arange(2 * size)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat.astype(dtype)


_BILINEAR_CACHE: dict[tuple[int, str], np.ndarray] = {}


def _bilinear(size: int, dtype) -> np.ndarray:
    key = (size, np.dtype(dtype).str)
    mat = _BILINEAR_CACHE.get(key)
    if mat is None:
        mat = _bilinear_matrix(size, dtype)
        _BILINEAR_CACHE[key] = mat
    return mat


def up2(x: Tensor) -> Tensor:
    """Double H and W by bilinear interpolation (align-corners=false)."""
    n, c, h, w = x.shape
    ah = _bilinear(h, x.dtype)
    aw = _bilinear(w, x.dtype)
    # out[..., i, j] = sum_{y,x} ah[i,y] * aw[j,x] * in[..., y, x]
    tmp = np.tensordot(x.data, ah, axes=(2, 1))  # (N,C,W,2H)
    out_data = np.tensordot(tmp, aw, axes=(2, 1))  # (N,C,2H,2W)
    out = Tensor(np.ascontiguousarray(out_data))

    def bwd(gout: np.ndarray, need):
        if not need[0]:
            return (None,)
        tmp_g = np.tensordot(gout, ah, axes=(2, 0))  # (N,C,2W,H)
        g = np.tensordot(tmp_g, aw, axes=(2, 0))  # (N,C,H,W)
        return (np.ascontiguousarray(g),)

    return _record("up2", (x,), out, bwd)


def resample(x: Tensor, mode: str) -> Tensor:
    if mode == "down2-average":
        return down2(x)
    if mode == "up2-bilinear":
        return up2(x)
    raise ValueError(f"unknown resample mode {mode!r}")


# ---------------------------------------------------------------------------
# pointwise


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(gout, need):
        return (gout if need[0] else None, gout if need[1] else None)

    return _record("add", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(gout, need):
        ga = gout * b.data if need[0] else None
        gb = gout * a.data if need[1] else None
        return ga, gb

    return _record("mul", (a, b), out, bwd)


def scalar_mul(s: float, x: Tensor) -> Tensor:
    if math.isnan(s):
        raise ValueError("scalar_mul: NaN scale factor")
    s = float(s)
    out = Tensor(x.data * x.dtype.type(s))

    def bwd(gout, need):
        return (gout * x.dtype.type(s) if need[0] else None,)

    return _record("scalar_mul", (x,), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scalar_mul(-1.0, b))


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def bwd(gout, need):
        return (gout * (x.data > 0) if need[0] else None,)

    return _record("relu", (x,), out, bwd)


def prelu(x: Tensor, slope: Parameter) -> Tensor:
    """Per-channel parametric ReLU; slope has shape (1, C, 1, 1)."""
    n, c, h, w = x.shape
    if slope.shape != (1, c, 1, 1):
        raise ValueError(f"prelu slope must have shape (1,{c},1,1), got {slope.shape}")
    neg = x.data < 0
    out = Tensor(np.where(neg, x.data * slope.data, x.data))

    def bwd(gout, need):
        gx = gslope = None
        if need[0]:
            gx = gout * np.where(neg, np.broadcast_to(slope.data, x.shape), x.dtype.type(1))
        if need[1]:
            gslope = (gout * np.where(neg, x.data, 0)).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        return gx, gslope

    return _record("prelu", (x, slope), out, bwd)


def charb_atom(x: Tensor, eps: float) -> Tensor:
    """Elementwise sqrt(x^2 + eps^2), the smooth-L1 atom."""
    if eps <= 0:
        raise ValueError(f"charb_atom: eps must be positive, got {eps}")
    e = x.dtype.type(eps)
    root = np.sqrt(x.data * x.data + e * e)
    out = Tensor(root)

    def bwd(gout, need):
        return (gout * (x.data / root) if need[0] else None,)

    return _record("charb_atom", (x,), out, bwd)


# ---------------------------------------------------------------------------
# channel concat / split


def channel_concat(a: Tensor, b: Tensor) -> Tensor:
    na, ca, ha, wa = a.shape
    nb, cb, hb, wb = b.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ValueError(f"channel_concat: incompatible shapes {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=1))

    def bwd(gout, need):
        ga = np.ascontiguousarray(gout[:, :ca]) if need[0] else None
        gb = np.ascontiguousarray(gout[:, ca:]) if need[1] else None
        return ga, gb

    return _record("channel_concat", (a, b), out, bwd)


def channel_split(x: Tensor, c0: int) -> tuple[Tensor, Tensor]:
    n, c, h, w = x.shape
    if not 0 < c0 < c:
        raise ValueError(f"channel_split: c0={c0} out of range for C={c}")
    first = Tensor(np.ascontiguousarray(x.data[:, :c0]))
    second = Tensor(np.ascontiguousarray(x.data[:, c0:]))

    def bwd_first(gout, need):
        if not need[0]:
            return (None,)
        g = np.zeros_like(x.data)
        g[:, :c0] = gout
        return (g,)

    def bwd_second(gout, need):
        if not need[0]:
            return (None,)
        g = np.zeros_like(x.data)
        g[:, c0:] = gout
        return (g,)

    _record("channel_split.first", (x,), first, bwd_first)
    _record("channel_split.second", (x,), second, bwd_second)
    return first, second


def empty_like(x: Tensor) -> Tensor:
    """A zero-channel tensor sharing N,H,W with x (degenerate split side)."""
    n, _, h, w = x.shape
    return Tensor(np.zeros((n, 0, h, w), dtype=x.dtype))


# ---------------------------------------------------------------------------
# reductions (scalar losses are (1,1,1,1) tensors)


def reduce_sum(x: Tensor) -> Tensor:
    total = x.data.sum(dtype=np.float64)
    out = Tensor(np.full((1, 1, 1, 1), total, dtype=x.dtype))

    def bwd(gout, need):
        if not need[0]:
            return (None,)
        return (np.full(x.shape, gout.reshape(()), dtype=x.dtype),)

    return _record("reduce_sum", (x,), out, bwd)


def reduce_mean(x: Tensor) -> Tensor:
    count = x.data.size
    if count == 0:
        raise ValueError("reduce_mean of an empty tensor")
    mean = x.data.sum(dtype=np.float64) / count
    out = Tensor(np.full((1, 1, 1, 1), mean, dtype=x.dtype))

    def bwd(gout, need):
        if not need[0]:
            return (None,)
        scale = np.float64(gout.reshape(())) / count
        return (np.full(x.shape, scale, dtype=x.dtype),)

    return _record("reduce_mean", (x,), out, bwd)
