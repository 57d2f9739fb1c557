"""Module system and the layers DAUNet is assembled from.

A Module owns parameters (trainable Tensors), buffers (plain ndarrays such
as batchnorm running stats), and submodules; all three are discovered by
attribute registration and addressed by dotted path names. Parameter names
are a function of construction order only, so two models built from the same
config always agree on names; the checkpoint contract relies on this.
"""

import numpy as np

from . import functional as F
from .deform import deform_conv2d_block
from .simam import SimamConfig, simam_attend
from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield (prefix + name, b)
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, flag=True):
        for m in self.modules():
            object.__setattr__(m, "training", flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def param_count(self):
        """Trainable parameter elements; running stats and buffers excluded."""
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _fan_in_uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(_fan_in_uniform(rng, (c_out, c_in, k, k), c_in * k * k),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, rng, k=2, stride=2, bias=True):
        super().__init__()
        self.stride = stride
        self.weight = Tensor(_fan_in_uniform(rng, (c_in, c_out, k, k), c_in * k * k),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(c))
        self.register_buffer("running_var", np.ones(c))

    def forward(self, x):
        return F.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, momentum=self.momentum, eps=self.eps)


class DeformConv2d(Module):
    """Modulated deformable 3x3 conv with its zero-initialized offset branch."""

    def __init__(self, c_in, c_out, rng):
        super().__init__()
        self.weight = Tensor(_fan_in_uniform(rng, (c_out, c_in, 3, 3), c_in * 9),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.branch_weight = Tensor(np.zeros((27, c_in, 3, 3)), requires_grad=True)
        self.branch_bias = Tensor(np.zeros(27), requires_grad=True)

    def forward(self, x):
        return deform_conv2d_block(x, self.weight, self.bias, self.branch_weight, self.branch_bias)


class SimAM(Module):
    """Parameter-free attention; owns nothing but its config."""

    def __init__(self, cfg=SimamConfig()):
        super().__init__()
        self.cfg = cfg

    def forward(self, x):
        return simam_attend(x, self.cfg)


class DoubleConv(Module):
    """[conv3x3 -> batchnorm -> relu] twice; the classical UNet stage."""

    def __init__(self, c_in, c_out, rng):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, rng, padding=1)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(c_out)

    def forward(self, x):
        x = self.bn1(self.conv1(x)).relu()
        return self.bn2(self.conv2(x)).relu()


class DeformBottleneck(Module):
    """compress(1x1) -> deform(3x3) -> expand(1x1), BN+relu after each conv,
    optional SimAM last with no activation after it."""

    def __init__(self, c_in, c_out, rng, use_simam):
        super().__init__()
        mid = c_out // 4
        self.compress = Conv2d(c_in, mid, 1, rng)
        self.bn1 = BatchNorm2d(mid)
        self.deform = DeformConv2d(mid, mid, rng)
        self.bn2 = BatchNorm2d(mid)
        self.expand = Conv2d(mid, c_out, 1, rng)
        self.bn3 = BatchNorm2d(c_out)
        if use_simam:
            self.attend = SimAM()
        self.use_simam = use_simam

    def forward(self, x):
        x = self.bn1(self.compress(x)).relu()
        x = self.bn2(self.deform(x)).relu()
        x = self.bn3(self.expand(x)).relu()
        if self.use_simam:
            x = self.attend(x)
        return x


class UpBlock(Module):
    """Transposed-conv upsample, concat skip (skip channels first), DoubleConv."""

    def __init__(self, c_in, c_out, rng):
        super().__init__()
        self.up = ConvTranspose2d(c_in, c_out, rng)
        self.conv = DoubleConv(2 * c_out, c_out, rng)

    def forward(self, x, skip):
        x = self.up(x)
        return self.conv(F.concat_channels(skip, x))
