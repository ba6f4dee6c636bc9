"""
Tensor core

Minimal float32 tensor library with reverse-mode autodiff and the pinned
SplitMix64 generator used for every random draw in the package.
"""

from . import ops
from .rng import Rng
from .tensor import Tensor, is_grad_enabled, no_grad

__all__ = ["Tensor", "Rng", "ops", "no_grad", "is_grad_enabled"]
