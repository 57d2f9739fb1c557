"""UNet and DAUNet assembly, parameter accounting, and the summary dump.

Both architectures share one skeleton: encoder stages at base*(1,2,4,8),
a base*16 bottleneck, transposed-conv decoder with skip concatenation, and a
final 1x1 conv to per-class logits. DAUNet swaps the bottleneck for the
compress-deform-expand-SimAM block and gates every skip (plus every decoder
stage output) with SimAM.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import functional as F
from .layers import Conv2d, DeformBottleneck, DoubleConv, Module, SimAM, UpBlock
from .rng import stream_rng
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    num_classes: int = 2
    base_channels: int = 64
    depth: int = 4
    use_deform_bottleneck: bool = False
    use_simam: bool = False
    image_size: int = 256

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.num_classes < 1:
            raise ValueError("in_channels and num_classes must be >= 1")
        if self.image_size % (1 << self.depth) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^depth = {1 << self.depth}")
        if self.use_deform_bottleneck and (self.base_channels << self.depth) % 4 != 0:
            raise ValueError("bottleneck channels must be divisible by 4 to compress to a quarter")


class SegModel(Module):
    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        rng = stream_rng(seed, "init")
        widths = [cfg.base_channels << i for i in range(cfg.depth)]   # encoder
        bottleneck_c = cfg.base_channels << cfg.depth

        prev = cfg.in_channels
        for i, c in enumerate(widths, start=1):
            setattr(self, f"enc{i}", DoubleConv(prev, c, rng))
            prev = c
        if cfg.use_deform_bottleneck:
            self.bottleneck = DeformBottleneck(prev, bottleneck_c, rng, cfg.use_simam)
        else:
            self.bottleneck = DoubleConv(prev, bottleneck_c, rng)
        prev = bottleneck_c
        for i, c in enumerate(reversed(widths), start=1):
            setattr(self, f"dec{i}", UpBlock(prev, c, rng))
            prev = c
        self.head = Conv2d(prev, cfg.num_classes, 1, rng)
        if cfg.use_simam:
            self.skip_attend = SimAM()
            self.dec_attend = SimAM()

    def forward(self, x, trace=None):
        cfg = self.cfg
        if x.ndim != 4:
            raise F.ShapeError(f"model input must be rank 4, got rank {x.ndim}")
        if x.shape[1] != cfg.in_channels:
            raise F.ShapeError(
                f"model input channels {x.shape[1]} != in_channels {cfg.in_channels}")
        if x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
            raise F.ShapeError(
                f"model input spatial {x.shape[2]}x{x.shape[3]} != image_size {cfg.image_size}")

        def record(name, t):
            if trace is not None:
                trace.append((name, t.shape))

        skips = []
        for i in range(1, cfg.depth + 1):
            x = getattr(self, f"enc{i}")(x)
            record(f"enc{i}", x)
            skips.append(x)
            x = F.maxpool2d(x)
        x = self.bottleneck(x)
        record("bottleneck", x)
        for i in range(1, cfg.depth + 1):
            skip = skips[-i]
            if cfg.use_simam:
                skip = self.skip_attend(skip)
            x = getattr(self, f"dec{i}")(x, skip)
            if cfg.use_simam:
                x = self.dec_attend(x)
            record(f"dec{i}", x)
        x = self.head(x)
        record("head", x)
        return x

    def bottleneck_offsets(self, x):
        """Predicted offset field (N, 18, h, w) at the deformable bottleneck.

        Replays the encoder and the bottleneck's compress stage, then runs the
        offset/modulation branch. Returns None when the bottleneck is the
        plain double conv.
        """
        from .deform import offset_mod_branch

        if not self.cfg.use_deform_bottleneck:
            return None
        for i in range(1, self.cfg.depth + 1):
            x = getattr(self, f"enc{i}")(x)
            x = F.maxpool2d(x)
        b = self.bottleneck
        x = b.bn1(b.compress(x)).relu()
        offsets, _ = offset_mod_branch(x, b.deform.branch_weight, b.deform.branch_bias)
        return offsets

    def block_param_counts(self):
        counts = {}
        for name, p in self.named_parameters():
            block = name.split(".", 1)[0]
            counts[block] = counts.get(block, 0) + p.size
        return counts

    def summary(self):
        """Text table: block name, output shape, parameters per block, total."""
        trace = []
        probe = Tensor(np.zeros((1, self.cfg.in_channels, self.cfg.image_size, self.cfg.image_size)))
        was_training = self.training
        self.eval()
        self.forward(probe, trace=trace)
        self.train(was_training)
        counts = self.block_param_counts()
        rows = [("block", "output shape", "params")]
        for name, shape in trace:
            rows.append((name, "x".join(str(d) for d in shape), f"{counts.get(name, 0):,}"))
        rows.append(("total", "", f"{self.param_count():,}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = []
        for i, r in enumerate(rows):
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            if i == 0:
                lines.append("-" * (sum(widths) + 4))
        return "\n".join(lines)


def build_model(cfg, seed=0):
    """Model per the config flags; verifies the deformable branch zero-init."""
    model = SegModel(cfg, seed=seed)
    if cfg.use_deform_bottleneck:
        deform = model.bottleneck.deform
        assert np.all(deform.branch_weight.data == 0.0), "deform branch weight must start at zero"
        assert np.all(deform.branch_bias.data == 0.0), "deform branch bias must start at zero"
    return model


def build_unet(cfg, seed=0):
    """Baseline UNet: both architecture flags forced off."""
    return build_model(replace(cfg, use_deform_bottleneck=False, use_simam=False), seed=seed)


def build_daunet(cfg, seed=0):
    """Full DAUNet: deformable bottleneck and SimAM forced on."""
    return build_model(replace(cfg, use_deform_bottleneck=True, use_simam=True), seed=seed)
