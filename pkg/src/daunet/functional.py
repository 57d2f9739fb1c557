"""Spatial ops on rank-4 tensors: convolution, pooling, normalization, concat.

conv2d lowers each forward pass to a batched matmul via im2col; the backward
scatters column gradients back with one strided add per kernel tap, so no
python loop ever touches a pixel. conv_transpose2d is the exact adjoint of
conv2d. All spatial padding is zero padding.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor


class ShapeError(ValueError):
    """Raised when operand dimensions disagree; message names the dimension."""


def _check(cond, msg):
    if not cond:
        raise ShapeError(msg)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of NCHW input with (C_out, C_in, k, k) weights."""
    _check(x.ndim == 4, f"conv2d input must be rank 4, got rank {x.ndim}")
    n, c_in, h, w = x.shape
    c_out, c_in_w, k, k2 = weight.shape
    _check(k == k2, f"conv2d kernel must be square, got {k}x{k2}")
    _check(c_in == c_in_w, f"conv2d channel mismatch: input C={c_in}, weight C_in={c_in_w}")
    hp, wp = h + 2 * padding, w + 2 * padding
    _check(hp >= k and wp >= k, f"conv2d spatial dims {hp}x{wp} smaller than kernel {k}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    # (N, C_in, ho, wo, k, k) view, strided for free
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c_in * k * k)
    wmat = weight.data.reshape(c_out, c_in * k * k)
    out_data = (cols @ wmat.T).transpose(0, 2, 1).reshape(n, c_out, ho, wo)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, c_out, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.reshape(n, c_out, ho * wo).transpose(0, 2, 1)  # (N, ho*wo, C_out)
        if weight.requires_grad:
            dw = np.einsum("npf,npc->fc", gmat, cols, optimize=True)
            weight._accumulate(dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, ho, wo, c_in, k, k).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros((n, c_in, hp, wp))
            for ky in range(k):
                for kx in range(k):
                    dxp[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += dcols[..., ky, kx]
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            x._accumulate(dxp)

    return Tensor._make(out_data, parents, backward)


def conv_transpose2d(x, weight, bias=None, stride=2):
    """Transposed convolution; weight is (C_in, C_out, k, k), C_in = input channels.

    Exact adjoint of conv2d with the same weight (axes swapped), zero padding.
    """
    _check(x.ndim == 4, f"conv_transpose2d input must be rank 4, got rank {x.ndim}")
    n, c_in, hi, wi = x.shape
    c_in_w, c_out, k, k2 = weight.shape
    _check(k == k2, f"conv_transpose2d kernel must be square, got {k}x{k2}")
    _check(c_in == c_in_w, f"conv_transpose2d channel mismatch: input C={c_in}, weight C_in={c_in_w}")
    ho = stride * (hi - 1) + k
    wo = stride * (wi - 1) + k

    out_data = np.zeros((n, c_out, ho, wo))
    for ky in range(k):
        for kx in range(k):
            out_data[:, :, ky:ky + stride * hi:stride, kx:kx + stride * wi:stride] += np.einsum(
                "nihw,io->nohw", x.data, weight.data[:, :, ky, kx], optimize=True)
    if bias is not None:
        out_data += bias.data.reshape(1, c_out, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        dx = np.zeros(x.shape) if x.requires_grad else None
        dw = np.zeros(weight.shape) if weight.requires_grad else None
        for ky in range(k):
            for kx in range(k):
                gslice = g[:, :, ky:ky + stride * hi:stride, kx:kx + stride * wi:stride]
                if dx is not None:
                    dx += np.einsum("nohw,io->nihw", gslice, weight.data[:, :, ky, kx], optimize=True)
                if dw is not None:
                    dw[:, :, ky, kx] = np.einsum("nihw,nohw->io", x.data, gslice, optimize=True)
        if dx is not None:
            x._accumulate(dx)
        if dw is not None:
            weight._accumulate(dw)

    return Tensor._make(out_data, parents, backward)


def maxpool2d(x):
    """2x2 stride-2 max pooling; gradient goes to the first max in row-major order."""
    _check(x.ndim == 4, f"maxpool2d input must be rank 4, got rank {x.ndim}")
    n, c, h, w = x.shape
    _check(h % 2 == 0, f"maxpool2d H must be even, got {h}")
    _check(w % 2 == 0, f"maxpool2d W must be even, got {w}")
    ho, wo = h // 2, w // 2
    windows = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    # argmax returns the first maximal index; flat window order is row-major.
    idx = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        dwin = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        x._accumulate(dx)

    return Tensor._make(out_data, (x,), backward)


def concat_channels(a, b):
    """Concatenate along the channel axis, a's channels first."""
    _check(a.ndim == 4 and b.ndim == 4, "concat_channels needs rank-4 inputs")
    _check(a.shape[0] == b.shape[0], f"concat_channels N mismatch: {a.shape[0]} vs {b.shape[0]}")
    _check(a.shape[2] == b.shape[2], f"concat_channels H mismatch: {a.shape[2]} vs {b.shape[2]}")
    _check(a.shape[3] == b.shape[3], f"concat_channels W mismatch: {a.shape[3]} vs {b.shape[3]}")
    ca = a.shape[1]
    out_data = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[:, :ca])
        if b.requires_grad:
            b._accumulate(g[:, ca:])

    return Tensor._make(out_data, (a, b), backward)


def batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over N, H, W.

    Training mode normalizes with the biased batch variance and folds the
    batch stats into the running buffers (unbiased variance, momentum 0.1);
    eval mode normalizes with the running buffers. running_mean/running_var
    are plain ndarrays mutated in place, outside the autodiff graph.
    """
    _check(x.ndim == 4, f"batchnorm2d input must be rank 4, got rank {x.ndim}")
    c = x.shape[1]
    _check(gamma.shape == (c,), f"batchnorm2d gamma length {gamma.shape} != C={c}")
    _check(beta.shape == (c,), f"batchnorm2d beta length {beta.shape} != C={c}")
    gamma4 = gamma.reshape(1, c, 1, 1)
    beta4 = beta.reshape(1, c, 1, 1)
    if training:
        m = x.mean(axis=(0, 2, 3), keepdims=True)
        d = x - m
        var = (d * d).mean(axis=(0, 2, 3), keepdims=True)
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var.data * (count / max(count - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * m.data.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(c)
        xhat = d * (var + eps) ** -0.5
    else:
        rm = Tensor(running_mean.reshape(1, c, 1, 1))
        rv = Tensor(running_var.reshape(1, c, 1, 1))
        xhat = (x - rm) * (rv + eps) ** -0.5
    return xhat * gamma4 + beta4
