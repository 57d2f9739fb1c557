"""Hybrid segmentation loss: per-class soft Dice plus weighted BCE.

Both parts consume raw logits. The BCE is evaluated in the logit-stable form

    l = (1 - g) * z + (w*g + 1 - g) * softplus(-z)

which equals -[w*g*log sigmoid(z) + (1-g)*log(1 - sigmoid(z))] but never
exponentiates a positive argument. The foreground weight defaults to the
batch's negative/positive pixel ratio, clamped to [1, 100].
"""

from dataclasses import dataclass

import numpy as np

from .functional import ShapeError, _check
from .tensor import Tensor, softplus


@dataclass(frozen=True)
class LossConfig:
    bce_pos_weight: float | None = None   # None = auto per batch
    dice_smooth: float = 1.0
    class_weights: tuple | None = None    # None = all ones

    def __post_init__(self):
        if self.bce_pos_weight is not None and self.bce_pos_weight < 1:
            raise ValueError(f"bce_pos_weight must be >= 1, got {self.bce_pos_weight}")
        if self.dice_smooth <= 0:
            raise ValueError(f"dice_smooth must be positive, got {self.dice_smooth}")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ValueError("class_weights must all be positive")


def _check_pair(logits, target):
    _check(logits.shape == target.shape,
           f"loss shape mismatch: logits {logits.shape} vs target {target.shape}")
    _check(logits.ndim == 4, f"loss inputs must be rank 4, got rank {logits.ndim}")


def _class_weights(cfg, c):
    if cfg.class_weights is None:
        return np.ones(c)
    _check(len(cfg.class_weights) == c,
           f"class_weights length {len(cfg.class_weights)} != num classes {c}")
    return np.asarray(cfg.class_weights, dtype=np.float64)


def dice_loss(logits, target, cfg=LossConfig()):
    """1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s) per (sample, class), averaged
    over the batch with class_weights across classes."""
    _check_pair(logits, target)
    n, c = logits.shape[0], logits.shape[1]
    s = cfg.dice_smooth
    w = _class_weights(cfg, c)
    p = logits.sigmoid()
    inter = (p * target).sum(axis=(2, 3))              # (N, C)
    denom = p.sum(axis=(2, 3)) + target.sum(axis=(2, 3))
    dice = (inter * 2.0 + s) / (denom + s)
    per_nc = 1.0 - dice
    weighted = per_nc * Tensor(w.reshape(1, c))
    return weighted.sum() * (1.0 / (n * w.sum()))


def resolve_pos_weight(target_data, cfg):
    """The BCE foreground weight: configured value, or neg/pos clamped to [1, 100]."""
    if cfg.bce_pos_weight is not None:
        return float(cfg.bce_pos_weight)
    pos = float(np.count_nonzero(target_data))
    neg = target_data.size - pos
    if pos == 0:
        return 100.0
    return float(np.clip(neg / pos, 1.0, 100.0))


def weighted_bce_loss(logits, target, cfg=LossConfig()):
    """Mean over pixels of -[w*g*log sigmoid(z) + (1-g)*log(1-sigmoid(z))]."""
    _check_pair(logits, target)
    w = resolve_pos_weight(target.data, cfg)
    g = target
    coef = g * (w - 1.0) + 1.0                # w*g + (1-g)
    per_pixel = (1.0 - g) * logits + coef * softplus(-logits)
    return per_pixel.mean()


def hybrid_loss(logits, target, cfg=LossConfig()):
    """Equal-weight sum of dice_loss and weighted_bce_loss."""
    return dice_loss(logits, target, cfg) + weighted_bce_loss(logits, target, cfg)


def binarize(logits):
    """Hard per-class masks: sigmoid(z) > 0.5, i.e. z > 0 (exactly 0 -> False)."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return data > 0.0
