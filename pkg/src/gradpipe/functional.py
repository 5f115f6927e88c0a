"""Fused differentiable kernels used by the layers in :mod:`gradpipe.nn`."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, make_result


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape (B, d_in)."""
    if x.ndim != 2:
        raise ValueError(f"linear expects a rank-2 input, got shape {x.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear expects {weight.shape[1]} input features, got {x.shape[1]}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out += bias.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, backward, "linear")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    z = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward, "log_softmax")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """Row-wise gather ``x[i, index[i]]`` for a rank-2 ``x``."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[rows, index] = g
        return (gx,)

    return make_result(x.data[rows, index], (x,), backward, "pick")


def embedding(table: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    n, d = table.shape
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"embedding index out of range [0, {n})")

    def backward(g):
        gt = np.zeros((n, d), dtype=g.dtype)
        np.add.at(gt, index.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return make_result(table.data[index], (table,), backward, "embedding")


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    for i in range(kh):
        for j in range(kw):
            yield i, j, (slice(None), slice(None),
                         slice(i, i + stride * (ho - 1) + 1, stride),
                         slice(j, j + stride * (wo - 1) + 1, stride))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"conv2d expects (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if c != cin:
        raise ValueError(f"conv2d expects {cin} input channels, got {c}")
    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.data.dtype)
    for i, j, sl in _windows(xp, kh, kw, stride, ho, wo):
        cols[:, :, i, j] = xp[sl]
    wd = weight.data
    out = np.tensordot(cols, wd, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.tensordot(wd, g, axes=([0], [1])).transpose(3, 0, 1, 2, 4, 5)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i, j, sl in _windows(xp, kh, kw, stride, ho, wo):
                gxp[sl] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, backward, "conv2d")


def max_pool2d(x: Tensor, kernel_size: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max pooling; ties send the gradient to the first element in row-major window order."""
    if x.ndim != 4:
        raise ValueError(f"max_pool2d expects (B, C, H, W), got {x.shape}")
    stride = stride or kernel_size
    k = kernel_size
    b, c, h, w = x.shape
    ho = conv_output_extent(h, k, stride, padding)
    wo = conv_output_extent(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"pooling window {k} larger than padded input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    wins = np.empty((k * k, b, c, ho, wo), dtype=x.data.dtype)
    for i, j, sl in _windows(xp, k, k, stride, ho, wo):
        wins[i * k + j] = xp[sl]
    arg = wins.argmax(axis=0)
    out = np.take_along_axis(wins, arg[None], axis=0)[0]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i, j, sl in _windows(xp, k, k, stride, ho, wo):
            gxp[sl] += g * (arg == i * k + j)
        return (gxp[:, :, padding:padding + h, padding:padding + w],)

    return make_result(out, (x,), backward, "max_pool2d")
