"""Differentiable network primitives: convolutions, batch norm, pooling, activations."""

from __future__ import annotations

from typing import Optional, Tuple, Union

import numpy as np

from . import kernels
from .tensor import Tensor, is_guided

IntOr3 = Union[int, Tuple[int, int, int]]


def _triple(v: IntOr3) -> Tuple[int, int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise ValueError(f"expected 3 values, got {v!r}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def conv_output_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv_transpose_output_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + k


def _pad5(x: np.ndarray, pad) -> np.ndarray:
    if not any(pad):
        return x
    return np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in pad))


def _crop5(x: np.ndarray, pad) -> np.ndarray:
    if not any(pad):
        return x
    return x[:, :, pad[0]:x.shape[2] - pad[0], pad[1]:x.shape[3] - pad[1], pad[2]:x.shape[4] - pad[2]]


def conv3d(x: Tensor, weight: Tensor, stride: IntOr3 = 1, pad: IntOr3 = 0) -> Tensor:
    """Cross-correlation of (N, Cin, D, H, W) with (Cout, Cin, kd, kh, kw) weights.

    Zero padding on both sides of every spatial axis. Output extents follow
    ``floor((D + 2*pad - k) / stride) + 1``.
    """
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError(f"conv3d expects 5-d input and weight, got {x.shape} and {weight.shape}")
    n, cin = x.shape[:2]
    cout, wcin = weight.shape[:2]
    if cin != wcin:
        raise ValueError(f"channel mismatch: input has {cin}, weight expects {wcin}")
    ksize = weight.shape[2:]
    stride = _triple(stride)
    pad = _triple(pad)
    if min(stride) < 1:
        raise ValueError("stride must be >= 1")
    oshape = tuple(conv_output_extent(s, k, st, p) for s, k, st, p in zip(x.shape[2:], ksize, stride, pad))
    if min(oshape) < 1:
        raise ValueError(f"non-positive output extent {oshape} for input {x.shape[2:]} and kernel {ksize}")

    xp = _pad5(x.data, pad)
    cols = kernels.im2col(xp, ksize, stride, oshape)
    w2 = weight.data.reshape(cout, -1)
    out = np.matmul(w2, cols).reshape((n, cout) + oshape)
    pshape = xp.shape

    def back(g):
        g2 = g.reshape(n, cout, -1)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gcols = np.matmul(w2.T, g2)
        gx = _crop5(kernels.col2im(gcols, pshape, ksize, stride, oshape), pad)
        return gx, gw

    return Tensor._make(out, (x, weight), back, "conv3d")


def conv3d_transpose(x: Tensor, weight: Tensor, stride: IntOr3 = 1, pad: IntOr3 = 0) -> Tensor:
    """Transposed convolution; the linear adjoint of :func:`conv3d`.

    ``weight`` has layout (Cin, Cout, kd, kh, kw). Output extents follow
    ``(D - 1) * stride - 2 * pad + k``.
    """
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError(f"conv3d_transpose expects 5-d input and weight, got {x.shape} and {weight.shape}")
    n, cin = x.shape[:2]
    wcin, cout = weight.shape[:2]
    if cin != wcin:
        raise ValueError(f"channel mismatch: input has {cin}, weight expects {wcin}")
    ksize = weight.shape[2:]
    stride = _triple(stride)
    pad = _triple(pad)
    if min(stride) < 1:
        raise ValueError("stride must be >= 1")
    ishape = x.shape[2:]
    full = tuple((s - 1) * st + k for s, k, st in zip(ishape, ksize, stride))
    oshape = tuple(f - 2 * p for f, p in zip(full, pad))
    if min(oshape) < 1:
        raise ValueError(f"non-positive output extent {oshape}")

    w2 = weight.data.reshape(cin, -1)
    x2 = x.data.reshape(n, cin, -1)
    cols = np.matmul(w2.T, x2)
    out = _crop5(kernels.col2im(cols, (n, cout) + full, ksize, stride, ishape), pad)

    def back(g):
        gp = _pad5(g, pad)
        gcols = kernels.im2col(gp, ksize, stride, ishape)
        gx = np.matmul(w2, gcols).reshape(x.shape)
        gw = np.tensordot(x2, gcols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        return gx, gw

    return Tensor._make(np.ascontiguousarray(out), (x, weight), back, "conv3d_transpose")


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation, computed as a depth-1 :func:`conv3d`."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    x5 = x.reshape(x.shape[:2] + (1,) + x.shape[2:])
    w5 = weight.reshape(weight.shape[:2] + (1,) + weight.shape[2:])
    out = conv3d(x5, w5, stride=(1, stride, stride), pad=(0, pad, pad))
    return out.reshape(out.shape[:2] + out.shape[3:])


class RunningStats:
    """Per-channel running mean and variance for batch normalization."""

    def __init__(self, channels: int, momentum: float = 0.1, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    state: Optional[RunningStats] = None,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    Training mode uses the biased batch variance and, when ``state`` is
    given, updates its running statistics (unbiased variance) with its
    momentum. Eval mode normalizes with ``state``.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    count = x.size // c

    if training:
        if count < 2:
            raise ValueError(f"batch norm in training mode needs >= 2 values per channel, got {count}")
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        if state is not None:
            m = state.momentum
            state.mean[...] = (1 - m) * state.mean + m * mean
            state.var[...] = (1 - m) * state.var + m * var * (count / (count - 1))
    else:
        if state is None:
            raise ValueError("eval-mode batch norm needs running statistics")
        mean = state.mean.astype(x.dtype)
        var = state.var.astype(x.dtype)
        centered = x.data - mean.reshape(bshape)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std.reshape(bshape)
    g = gamma.data.reshape(bshape)
    out = xhat * g + beta.data.reshape(bshape)

    def back(grad):
        dgamma = (grad * xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * g
        if training:
            dx = (inv_std.reshape(bshape) / count) * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return Tensor._make(out, (x, gamma, beta), back, "batch_norm")


def relu(x: Tensor) -> Tensor:
    a = x.data
    pos = a > 0

    def back(g):
        if is_guided():
            return (g * (pos & (g > 0)),)
        return (g * pos,)

    return Tensor._make(np.where(pos, a, 0).astype(a.dtype), (x,), back, "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky relu slope must lie in (0, 1), got {slope}")
    a = x.data
    pos = a > 0
    scale = np.where(pos, 1.0, slope).astype(a.dtype)

    def back(g):
        if is_guided():
            return (g * (pos & (g > 0)),)
        return (g * scale,)

    return Tensor._make(a * scale, (x,), back, "leaky_relu")


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    """``log(sigmoid(x))`` without overflow for large |x|."""
    a = x.data
    out = np.minimum(a, 0) - np.log1p(np.exp(-np.abs(a)))
    s = _sigmoid(a)
    return Tensor._make(out.astype(a.dtype), (x,), lambda g: (g * (1.0 - s),), "log_sigmoid")


def maxpool3d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping max pooling with cubic window and stride ``k``.

    Extents that are not multiples of ``k`` are padded with -inf on the high
    side. The gradient goes to the first maximal element of each window.
    """
    if x.ndim != 5:
        raise ValueError(f"maxpool3d expects a 5-d input, got {x.shape}")
    k = int(k)
    n, c, d, h, w = x.shape
    od, oh, ow = -(-d // k), -(-h // k), -(-w // k)
    a = x.data
    if (od * k, oh * k, ow * k) != (d, h, w):
        a = np.pad(a, ((0, 0), (0, 0), (0, od * k - d), (0, oh * k - h), (0, ow * k - w)),
                   constant_values=-np.inf)
    win = a.reshape(n, c, od, k, oh, k, ow, k).transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, od, oh, ow, k ** 3)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gp = gw.reshape(n, c, od, oh, ow, k, k, k).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        gp = gp.reshape(n, c, od * k, oh * k, ow * k)
        return (np.ascontiguousarray(gp[:, :, :d, :h, :w]),)

    return Tensor._make(np.ascontiguousarray(out), (x,), back, "maxpool3d")
