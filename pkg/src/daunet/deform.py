"""Modulated deformable convolution (DCNv2 style), k=3, stride 1, pad 1.

The offset/modulation branch is an ordinary 3x3 convolution producing 27
channels: 18 raw offsets laid out [dy, dx] per tap with taps row-major over
the kernel grid, then 9 modulation logits squashed by a sigmoid. The core op
gathers all 9 taps for all output positions with one vectorized bilinear
read per neighbor and writes its own backward, including the piecewise-linear
coordinate gradient that feeds the branch.
"""

import numpy as np

from .functional import ShapeError, _check, conv2d
from .tensor import Tensor

# Row-major 3x3 tap displacements from (-1,-1) to (1,1).
TAPS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def slice_channels(x, start, stop):
    """View of channels [start, stop); backward pads the complement with zeros."""
    out_data = x.data[:, start:stop]

    def backward(g):
        if x.requires_grad:
            dx = np.zeros(x.shape)
            dx[:, start:stop] = g
            x._accumulate(dx)

    return Tensor._make(out_data, (x,), backward)


def bilinear_sample(plane, y, x):
    """Sample one (y, x) from a 2d Tensor plane; out-of-range neighbors read 0.

    Scalar convenience used in tests and docs; the core op below inlines the
    same arithmetic over whole fields.
    """
    h, w = plane.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    wy, wx = y - y0, x - x0
    total = 0.0
    weights = {}
    for (yy, xx, ww) in [(y0, x0, (1 - wy) * (1 - wx)), (y0, x0 + 1, (1 - wy) * wx),
                         (y0 + 1, x0, wy * (1 - wx)), (y0 + 1, x0 + 1, wy * wx)]:
        if 0 <= yy < h and 0 <= xx < w:
            total += ww * plane.data[yy, xx]
            weights[(yy, xx)] = ww

    def backward(g):
        if plane.requires_grad:
            dp = np.zeros(plane.shape)
            for (yy, xx), ww in weights.items():
                dp[yy, xx] = ww * g
            plane._accumulate(dp)

    return Tensor._make(np.asarray(total), (plane,), backward)


def offset_mod_branch(f, branch_weight, branch_bias):
    """Run the offset/modulation branch conv and split its 3K^2 channels."""
    k2 = branch_weight.shape[0] // 3
    _check(branch_weight.shape[0] == 3 * k2,
           f"branch must emit 3*K^2 channels, got {branch_weight.shape[0]}")
    raw = conv2d(f, branch_weight, branch_bias, stride=1, padding=1)
    offsets = slice_channels(raw, 0, 2 * k2)
    modulation = slice_channels(raw, 2 * k2, 3 * k2).sigmoid()
    return offsets, modulation


def _gather_neighbors(x_data, sy, sx):
    """Bilinear pieces for every (n, tap, position) sample point.

    x_data: (N, C, H, W); sy, sx: (N, 9, P) real coordinates.
    Returns (corner values g00,g01,g10,g11 each (N, C, 9, P), wy, wx, gather
    index arrays) with out-of-range corners already zeroed.
    """
    n, c, h, w = x_data.shape
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    wy = sy - y0
    wx = sx - x0
    x_flat = x_data.reshape(n, c, h * w)
    nn = np.arange(n)[:, None, None]

    corners = []
    idxs = []
    for yy, xx in [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)]:
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        idx = np.where(valid, yy * w + xx, 0)
        # advanced indexing (N,9,P) over axes 0,2 with the channel slice kept:
        # result lands as (N, 9, P, C), moved back to (N, C, 9, P).
        vals = x_flat[nn, :, idx].transpose(0, 3, 1, 2)
        vals = vals * valid[:, None, :, :]
        corners.append(vals)
        idxs.append((idx, valid))
    return corners, wy, wx, idxs


def deform_conv2d(x, weight, bias, offsets, modulation):
    """Modulated deformable 3x3 convolution, stride 1, pad 1.

    x: (N, C_in, H, W); weight: (C_out, C_in, 3, 3); bias: (C_out) or None;
    offsets: (N, 18, H, W); modulation: (N, 9, H, W), already in [0, 1].
    Differentiable w.r.t. every tensor argument.
    """
    _check(x.ndim == 4, f"deform_conv2d input must be rank 4, got rank {x.ndim}")
    n, c_in, h, w = x.shape
    c_out, c_in_w, k, k2 = weight.shape
    if k != 3 or k2 != 3:
        raise ShapeError(f"deform_conv2d supports only 3x3 kernels, got {k}x{k2}")
    _check(c_in == c_in_w, f"deform_conv2d channel mismatch: input C={c_in}, weight C_in={c_in_w}")
    _check(offsets.shape == (n, 18, h, w),
           f"offsets must be (N,18,H,W)=({n},18,{h},{w}), got {offsets.shape}")
    _check(modulation.shape == (n, 9, h, w),
           f"modulation must be (N,9,H,W)=({n},9,{h},{w}), got {modulation.shape}")

    p = h * w
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    base_y = gy.ravel()  # (P,)
    base_x = gx.ravel()
    off = offsets.data.reshape(n, 18, p)
    dy_taps = np.array([t[0] for t in TAPS], dtype=np.float64)
    dx_taps = np.array([t[1] for t in TAPS], dtype=np.float64)
    sy = base_y[None, None, :] + dy_taps[None, :, None] + off[:, 0::2, :]  # (N, 9, P)
    sx = base_x[None, None, :] + dx_taps[None, :, None] + off[:, 1::2, :]

    (g00, g01, g10, g11), wy, wx, idxs = _gather_neighbors(x.data, sy, sx)
    wy_c = wy[:, None, :, :]
    wx_c = wx[:, None, :, :]
    v = ((1 - wy_c) * (1 - wx_c) * g00 + (1 - wy_c) * wx_c * g01
         + wy_c * (1 - wx_c) * g10 + wy_c * wx_c * g11)  # (N, C_in, 9, P)

    mod = modulation.data.reshape(n, 9, p)
    vm = v * mod[:, None, :, :]
    w_mat = weight.data.reshape(c_out, c_in, 9)
    out_flat = np.einsum("fct,nctp->nfp", w_mat, vm, optimize=True)
    if bias is not None:
        out_flat = out_flat + bias.data.reshape(1, c_out, 1)
    out_data = out_flat.reshape(n, c_out, h, w)

    parents = [x, weight, offsets, modulation]
    if bias is not None:
        parents.append(bias)

    def backward(g):
        gf = g.reshape(n, c_out, p)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gf.sum(axis=(0, 2)))
        if weight.requires_grad:
            dw = np.einsum("nfp,nctp->fct", gf, vm, optimize=True)
            weight._accumulate(dw.reshape(weight.shape))
        need_x = x.requires_grad
        need_off = offsets.requires_grad
        need_mod = modulation.requires_grad
        if not (need_x or need_off or need_mod):
            return
        dvm = np.einsum("nfp,fct->nctp", gf, w_mat, optimize=True)
        if need_mod:
            dmod = (dvm * v).sum(axis=1)  # (N, 9, P)
            modulation._accumulate(dmod.reshape(n, 9, h, w))
        dv = dvm * mod[:, None, :, :]
        if need_x:
            dx_flat = np.zeros((n, p, c_in))
            nn = np.arange(n)[:, None, None]
            corner_weights = [(1 - wy_c) * (1 - wx_c), (1 - wy_c) * wx_c,
                              wy_c * (1 - wx_c), wy_c * wx_c]
            for (idx, valid), cw in zip(idxs, corner_weights):
                contrib = (dv * cw * valid[:, None, :, :]).transpose(0, 2, 3, 1)  # (N,9,P,C)
                np.add.at(dx_flat, (nn, idx), contrib)
            x._accumulate(dx_flat.transpose(0, 2, 1).reshape(n, c_in, h, w))
        if need_off:
            # d v / d sy and d v / d sx with the right-continuous floor convention.
            dv_dwy = (-(1 - wx_c) * g00 - wx_c * g01 + (1 - wx_c) * g10 + wx_c * g11)
            dv_dwx = (-(1 - wy_c) * g00 + (1 - wy_c) * g01 - wy_c * g10 + wy_c * g11)
            dsy = (dv * dv_dwy).sum(axis=1)  # (N, 9, P)
            dsx = (dv * dv_dwx).sum(axis=1)
            doff = np.empty((n, 18, p))
            doff[:, 0::2, :] = dsy
            doff[:, 1::2, :] = dsx
            offsets._accumulate(doff.reshape(n, 18, h, w))

    return Tensor._make(out_data, tuple(parents), backward)


def deform_conv2d_block(x, main_weight, main_bias, branch_weight, branch_bias):
    """Branch + core in one call: predict offsets/modulation from x, then convolve."""
    offsets, modulation = offset_mod_branch(x, branch_weight, branch_bias)
    return deform_conv2d(x, main_weight, main_bias, offsets, modulation)


def export_offsets(field, path_csv, path_pgm=None, batch_index=0):
    """Write one batch element of an OffsetField to CSV and a PGM heatmap.

    CSV columns: y, x, tap, dy, dx (row-major positions, taps 0..8 within).
    The heatmap is the per-pixel mean L2 norm of the 9 tap offsets, min-max
    normalized to 0..255 (a constant field maps to all zeros).
    """
    from .pgmio import write_pgm

    data = field.data if isinstance(field, Tensor) else np.asarray(field, dtype=np.float64)
    if data.ndim != 4 or data.shape[1] % 2 != 0:
        raise ShapeError(f"offset field must be (N, 2*K^2, H, W), got {data.shape}")
    el = data[batch_index]
    k2 = el.shape[0] // 2
    h, w = el.shape[1], el.shape[2]
    try:
        with open(path_csv, "w") as f:
            f.write("y,x,tap,dy,dx\n")
            for y in range(h):
                for x in range(w):
                    for t in range(k2):
                        dy = repr(float(el[2 * t, y, x]))
                        dx = repr(float(el[2 * t + 1, y, x]))
                        f.write(f"{y},{x},{t},{dy},{dx}\n")
    except OSError as e:
        raise OSError(f"offset CSV export failed for {path_csv}: {e}") from e

    if path_pgm is not None:
        mag = np.sqrt(el[0::2] ** 2 + el[1::2] ** 2).mean(axis=0)  # (H, W)
        lo, hi = mag.min(), mag.max()
        if hi > lo:
            img = np.round((mag - lo) / (hi - lo) * 255.0).astype(np.uint8)
        else:
            img = np.zeros((h, w), dtype=np.uint8)
        write_pgm(path_pgm, img)
    return path_csv


def read_offsets_csv(path):
    """Parse an export_offsets CSV back into a (2*K^2, H, W) array."""
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "y,x,tap,dy,dx":
            raise ValueError(f"unexpected offset CSV header in {path}: {header}")
        for line in f:
            y, x, t, dy, dx = line.strip().split(",")
            rows.append((int(y), int(x), int(t), float(dy), float(dx)))
    h = max(r[0] for r in rows) + 1
    w = max(r[1] for r in rows) + 1
    k2 = max(r[2] for r in rows) + 1
    out = np.zeros((2 * k2, h, w))
    for y, x, t, dy, dx in rows:
        out[2 * t, y, x] = dy
        out[2 * t + 1, y, x] = dx
    return out
