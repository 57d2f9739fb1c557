"""Desk-scale segmentation toolkit.

A trainable NumPy implementation of a UNet with a deformable-convolution
bottleneck and parameter-free attention, plus the losses, surface-distance
metrics, synthetic data, and experiment drivers needed to study it end to end
on a single CPU.
"""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad", "__version__"]
