"""Parameter-free SimAM attention.

Per neuron t in a (batch, channel) plane of M = H*W values, with mu_t the
mean of the other M-1 neurons:

    E_t = (x_t - mu_t)^2 + lam * sum_{i != t} (x_i - mu_t)^2
    a_t = sigmoid(1 / (E_t + eps))
    out = x * a_t

The energy is computed from two plane reductions (sum, sum of squares) in
O(1) per neuron rather than the literal O(M) leave-one-out sum:
sum_i (x_i - mu_t)^2 = S2 - 2*mu_t*S + M*mu_t^2, then the i = t term is
subtracted. The weighted sum is kept unnormalized, exactly as stated; note
it grows with M, so lam's influence differs across feature-map resolutions.
"""

from dataclasses import dataclass

from .functional import ShapeError, _check
from .tensor import Tensor


@dataclass(frozen=True)
class SimamConfig:
    lam: float = 1e-4
    eps: float = 1e-8

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.eps <= 0:
            raise ValueError(f"epsilon must be positive, got {self.eps}")


def simam_energy(x, cfg=SimamConfig()):
    """Leave-one-out energy map, same shape as x, differentiable."""
    _check(x.ndim == 4, f"simam_energy input must be rank 4, got rank {x.ndim}")
    n, c, h, w = x.shape
    m = h * w
    if m < 2:
        raise ShapeError("simam_energy needs at least 2 spatial positions per channel")
    s = x.sum(axis=(2, 3), keepdims=True)
    s2 = (x * x).sum(axis=(2, 3), keepdims=True)
    mu = (s - x) * (1.0 / (m - 1))            # leave-one-out mean, per neuron
    d = x - mu
    d2 = d * d
    # sum_i (x_i - mu_t)^2 over ALL i, from the plane reductions
    total = s2 - mu * s * 2.0 + mu * mu * float(m)
    rest = total - d2                          # drop the i = t term
    return d2 + rest * cfg.lam


def simam_attend(x, cfg=SimamConfig()):
    """Refine x by its attention map: x * sigmoid(1 / (E + eps)). Zero parameters."""
    e = simam_energy(x, cfg)
    a = ((e + cfg.eps) ** -1.0).sigmoid()
    return x * a


def attention_map(x, cfg=SimamConfig()):
    """The attention weights alone, for inspection and export."""
    e = simam_energy(x, cfg)
    return ((e + cfg.eps) ** -1.0).sigmoid()
