"""Differentiable operations on :class:`~expocorr.core.tensor.Tensor`.

Every op computes its forward value with numpy and registers a closure that
maps the output gradient to one gradient per parent (``None`` where a parent
takes no gradient). Layouts follow NCHW for images.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import Tensor


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    out = a.data + b.data
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    out = a.data - b.data
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def power(x: Tensor, exponent: float) -> Tensor:
    out = x.data**exponent
    return Tensor._from_op(out, (x,), lambda g: (g * exponent * x.data ** (exponent - 1),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g / x.data,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.abs(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * np.sign(x.data),))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)
    return Tensor._from_op(out, (x,), lambda g: (np.where(positive, g, slope * g),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where the clamp is active."""
    inside = (x.data >= lo) & (x.data <= hi)
    out = np.clip(x.data, lo, hi)
    return Tensor._from_op(out, (x,), lambda g: (g * inside,))


def logit(x: Tensor, eps: float = 1e-3) -> Tensor:
    p = clip(x, eps, 1.0 - eps)
    return log(div(p, sub(1.0, p)))


# -- reductions and shape ops --------------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return Tensor._from_op(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size // max(np.asarray(out).size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape),)

    return Tensor._from_op(np.asarray(out), (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(x.shape),))


def index(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing; fancy indexing is not supported."""
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] += g
        return (full,)

    return Tensor._from_op(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        grads = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Tensor._from_op(out, tensors, backward)


def crop_to(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height x width`` window of an NCHW tensor."""
    if x.shape[2] == height and x.shape[3] == width:
        return x
    if x.shape[2] < height or x.shape[3] < width:
        raise ValueError(f"cannot crop {x.shape} to {height}x{width}")
    return index(x, (slice(None), slice(None), slice(0, height), slice(0, width)))


# -- convolution -----------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``weight[F,C,kH,kW]`` (zero padding)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got input {x.shape} and kernel {weight.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = weight.shape
    if c != kc:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs kernel {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride {stride} / padding {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(f"conv2d kernel {weight.shape} larger than padded input {x.shape} (padding {padding})")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)

    # im2col in channels-last order; the column matrix is reused for the kernel gradient
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    xh = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    windows = sliding_window_view(xh, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(f, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, f)
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        gx = gw = gb = None
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(f, kh, kw, c).transpose(0, 3, 1, 2)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, c)
            gxp = np.zeros(xh.shape, dtype=x.dtype)
            h_span = stride * (ho - 1) + 1
            w_span = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + h_span : stride, j : j + w_span : stride] += dcols[:, :, :, i, j]
            gx = np.ascontiguousarray(gxp[:, padding : padding + h, padding : padding + w].transpose(0, 3, 1, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


# -- bilinear x2 upsampling ----------------------------------------------------------
#
# Half-pixel centres (corners not aligned): output sample i maps to source
# coordinate i/2 - 1/4, so even outputs blend 3/4 of x[k] with 1/4 of x[k-1]
# and odd outputs 3/4 of x[k] with 1/4 of x[k+1], clamped at the borders.


def upsample2x_axis(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    prev = np.concatenate([a[:1], a[:-1]], axis=0)
    nxt = np.concatenate([a[1:], a[-1:]], axis=0)
    even = 0.75 * a + 0.25 * prev
    odd = 0.75 * a + 0.25 * nxt
    out = np.stack([even, odd], axis=1).reshape((2 * a.shape[0],) + a.shape[1:])
    return np.moveaxis(out, 0, axis)


def upsample2x_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, 0)
    ge, go = g[0::2], g[1::2]
    da = 0.75 * (ge + go)
    da[:-1] += 0.25 * ge[1:]
    da[0] += 0.25 * ge[0]
    da[1:] += 0.25 * go[:-1]
    da[-1] += 0.25 * go[-1]
    return np.moveaxis(da, 0, axis)


def upsample2x_array(a: np.ndarray, axes: tuple[int, int]) -> np.ndarray:
    """Bilinear x2 upsampling of a plain array over two spatial axes."""
    return upsample2x_axis(upsample2x_axis(a, axes[0]), axes[1])


def upsample_bilinear2x(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"upsample_bilinear2x expects NCHW input, got {x.shape}")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"empty spatial dims in {x.shape}")
    out = upsample2x_array(x.data, (2, 3))
    return Tensor._from_op(
        out, (x,), lambda g: (upsample2x_axis_adjoint(upsample2x_axis_adjoint(g, 3), 2),)
    )


# -- fixed-kernel filtering ------------------------------------------------------------


def filter_valid(x: Tensor, taps: np.ndarray, axis: int) -> Tensor:
    """Valid-extent correlation of ``x`` with constant 1-d ``taps`` along ``axis``."""
    taps = np.asarray(taps, dtype=x.dtype)
    k = len(taps)
    size = x.shape[axis]
    n = size - k + 1
    if n < 1:
        raise ValueError(f"filter of {k} taps longer than axis {axis} of {x.shape}")
    moved = np.moveaxis(x.data, axis, 0)
    out = taps[0] * moved[0:n]
    for i in range(1, k):
        out = out + taps[i] * moved[i : i + n]
    out = np.moveaxis(out, 0, axis)

    def backward(g):
        gm = np.moveaxis(g, axis, 0)
        full = np.zeros((size,) + gm.shape[1:], dtype=g.dtype)
        for i in range(k):
            full[i : i + n] += taps[i] * gm
        return (np.moveaxis(full, 0, axis),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward)
