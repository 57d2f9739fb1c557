"""Synthetic phantoms, geometric augmentation, and quadrant corruption.

Each sample is a pure function of (seed, index): a large rotated ellipse
(class 0) and, in two-class mode, a small disc (class 1) placed along a
random ray at a center distance that provably clears the ellipse (the disc
center sits at least max-semi-axis + margin from the ellipse center, and
every ellipse point lies within the max semi-axis). All structures stay
within 0.4 * size of the image center, so zooming up to 1.2x and rotating
about the center never push content out of frame.

Masks are exact analytic rasterizations: a pixel belongs to a class iff its
integer-coordinate center lies inside the shape.
"""

from dataclasses import dataclass

import numpy as np

from .rng import stream_rng
from .tensor import Tensor

QUADRANTS = ("TL", "TR", "BL", "BR")

# Geometry fractions of image size. Extent from image center is bounded by
# offset + a_hi + margin + 2*r_hi = 0.035 + 0.21 + 0.015 + 0.15 = 0.41 minus
# the shared r term; see _place_blob. Smallest feature diameter is
# 2 * r_lo = 0.125 * size (8 px at the desk size of 64).
_CENTER_JITTER = 0.035
_A_RANGE = (0.15, 0.21)       # large-ellipse major semi-axis
_B_RANGE = (0.10, 0.15)       # large-ellipse minor semi-axis
_R_RANGE = (0.0625, 0.075)    # small-disc radius
_MARGIN = 0.015
_BG_LEVEL = (0.22, 0.28)
_ELLIPSE_LEVEL = (0.56, 0.64)
_BLOB_LEVEL = (0.82, 0.90)
_SPECKLE_STRENGTH = 0.15


@dataclass(frozen=True)
class PhantomConfig:
    image_size: int = 64
    num_fg_classes: int = 2
    noise_std: float = 0.05
    speckle: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.image_size % 4 != 0:
            raise ValueError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.num_fg_classes not in (1, 2):
            raise ValueError(f"num_fg_classes must be 1 or 2, got {self.num_fg_classes}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass
class Sample:
    image: Tensor   # (1, H, W), values in [0, 1]
    mask: Tensor    # (C, H, W), values in {0, 1}


def ellipse_mask(size, cy, cx, a, b, theta):
    """Pixels whose centers lie inside the rotated ellipse (closed boundary)."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = ys - cy, xs - cx
    u = np.cos(theta) * dy + np.sin(theta) * dx
    v = -np.sin(theta) * dy + np.cos(theta) * dx
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def gen_phantom(cfg, index):
    """Render sample `index`; bit-identical for identical (cfg.seed, index)."""
    rng = stream_rng(cfg.seed, "phantom", index)
    size = cfg.image_size
    c0 = (size - 1) / 2.0

    cy = c0 + rng.uniform(-_CENTER_JITTER, _CENTER_JITTER) * size
    cx = c0 + rng.uniform(-_CENTER_JITTER, _CENTER_JITTER) * size
    a = rng.uniform(*_A_RANGE) * size
    b = rng.uniform(*_B_RANGE) * size
    theta = rng.uniform(0.0, np.pi)
    big = ellipse_mask(size, cy, cx, a, b, theta)

    planes = [big]
    blob = None
    if cfg.num_fg_classes == 2:
        r = rng.uniform(*_R_RANGE) * size
        phi = rng.uniform(0.0, 2 * np.pi)
        # Disc center distance a + r + margin from the ellipse center: every
        # ellipse point is within a of that center, so the shapes cannot touch.
        d = a + r + _MARGIN * size
        bcy, bcx = cy + d * np.sin(phi), cx + d * np.cos(phi)
        blob = ellipse_mask(size, bcy, bcx, r, r, 0.0)
        planes.append(blob)
        assert not (big & blob).any(), "phantom classes must not overlap"

    for plane in planes:
        assert plane.any(), "phantom class region left the frame"

    img = np.full((size, size), rng.uniform(*_BG_LEVEL))
    img[big] = rng.uniform(*_ELLIPSE_LEVEL)
    if blob is not None:
        img[blob] = rng.uniform(*_BLOB_LEVEL)
    if cfg.speckle:
        img = img * (1.0 + _SPECKLE_STRENGTH * rng.standard_normal((size, size)))
    if cfg.noise_std > 0:
        img = img + rng.normal(0.0, cfg.noise_std, (size, size))
    img = np.clip(img, 0.0, 1.0)

    mask = np.stack([p.astype(np.float64) for p in planes])
    return Sample(image=Tensor(img[None]), mask=Tensor(mask))


# -- augmentation -----------------------------------------------------------------

def _warp_coords(size, zoom, angle_deg):
    """Inverse-mapping source coordinates for rotate-then-zoom about the center."""
    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = ys - c, xs - c
    t = np.deg2rad(angle_deg)
    sy = (np.cos(t) * dy - np.sin(t) * dx) / zoom + c
    sx = (np.sin(t) * dy + np.cos(t) * dx) / zoom + c
    return sy, sx


def _sample_bilinear(plane, sy, sx):
    h, w = plane.shape
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    wy, wx = sy - y0, sx - x0
    out = np.zeros_like(sy)
    for yy, xx, ww in [(y0, x0, (1 - wy) * (1 - wx)), (y0, x0 + 1, (1 - wy) * wx),
                       (y0 + 1, x0, wy * (1 - wx)), (y0 + 1, x0 + 1, wy * wx)]:
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        idx_y = np.clip(yy, 0, h - 1)
        idx_x = np.clip(xx, 0, w - 1)
        out += ww * plane[idx_y, idx_x] * valid
    return out


def _sample_nearest(plane, sy, sx):
    h, w = plane.shape
    ry = np.floor(sy + 0.5).astype(np.int64)
    rx = np.floor(sx + 0.5).astype(np.int64)
    valid = (ry >= 0) & (ry < h) & (rx >= 0) & (rx < w)
    idx_y = np.clip(ry, 0, h - 1)
    idx_x = np.clip(rx, 0, w - 1)
    return plane[idx_y, idx_x] * valid


def apply_geometric(sample, zoom, angle_deg, flip):
    """Deterministic zoom/rotate/flip; bilinear image, nearest-neighbor mask.

    zoom 1 with angle 0 bypasses the warp, and the flip is an exact index
    reversal, so identity draws reproduce the sample bit for bit.
    """
    img = sample.image.data
    mask = sample.mask.data
    size = img.shape[-1]
    if zoom != 1.0 or angle_deg != 0.0:
        sy, sx = _warp_coords(size, zoom, angle_deg)
        img = np.stack([_sample_bilinear(p, sy, sx) for p in img])
        mask = np.stack([_sample_nearest(p, sy, sx) for p in mask])
    else:
        img = img.copy()
        mask = mask.copy()
    if flip:
        img = img[:, :, ::-1].copy()
        mask = mask[:, :, ::-1].copy()
    for c in range(mask.shape[0]):
        assert mask[c].any(), "augmentation erased a phantom class"
    return Sample(image=Tensor(img), mask=Tensor(mask))


def augment(sample, seed):
    """Random zoom [0.8, 1.2], rotation [-15, 15] degrees, hflip p=0.5."""
    rng = np.random.default_rng(seed)
    zoom = rng.uniform(0.8, 1.2)
    angle = rng.uniform(-15.0, 15.0)
    flip = bool(rng.uniform() < 0.5)
    return apply_geometric(sample, zoom, angle, flip)


# -- corruption and splits -----------------------------------------------------------

def quadrant_mask(image, quadrant):
    """Zero one H/2 x W/2 quadrant of (..., H, W); mask/labels are untouched."""
    if quadrant not in QUADRANTS:
        raise ValueError(f"quadrant must be one of {QUADRANTS}, got {quadrant!r}")
    is_tensor = isinstance(image, Tensor)
    data = image.data if is_tensor else np.asarray(image, dtype=np.float64)
    h, w = data.shape[-2], data.shape[-1]
    if h % 2 or w % 2:
        raise ValueError(f"quadrant_mask needs even spatial dims, got {h}x{w}")
    out = data.copy()
    ys = slice(0, h // 2) if quadrant in ("TL", "TR") else slice(h // 2, h)
    xs = slice(0, w // 2) if quadrant in ("TL", "BL") else slice(w // 2, w)
    out[..., ys, xs] = 0.0
    return Tensor(out) if is_tensor else out


def make_splits(n_train, n_val, n_test):
    """Disjoint consecutive index ranges [0, train), [train, train+val), ..."""
    for name, n in [("n_train", n_train), ("n_val", n_val), ("n_test", n_test)]:
        if n <= 0:
            raise ValueError(f"{name} must be positive, got {n}")
    train = list(range(n_train))
    val = list(range(n_train, n_train + n_val))
    test = list(range(n_train + n_val, n_train + n_val + n_test))
    return train, val, test


def epoch_batches(indices, batch_size, seed, epoch):
    """Seeded per-epoch shuffle, then consecutive batches (last may be short)."""
    order = stream_rng(seed, "shuffle", epoch).permutation(len(indices))
    shuffled = [indices[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


def export_sample_pgm(sample, path_image, mask_paths=None):
    """Write the image (and per-class masks as 0/255) as binary PGMs."""
    from .pgmio import float_to_pgm, write_pgm

    write_pgm(path_image, float_to_pgm(sample.image.data[0]))
    if mask_paths is not None:
        for c, mp in enumerate(mask_paths):
            write_pgm(mp, (sample.mask.data[c] > 0.5).astype(np.uint8) * 255)
