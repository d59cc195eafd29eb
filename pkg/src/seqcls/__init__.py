"""Sequence classification over pre-extracted frame features.

Two trainable temporal pooling heads (attention pooling and a separable
temporal-convolution stack), a mean-pool baseline, score fusion, a binary
feature-sequence format with a synthetic planted-signal generator, and a
training harness, all on a small reverse-mode differentiation core.
"""

from .autodiff import Value, backward, fd_check, rng, zero_grads
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    ShapeError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "Value",
    "backward",
    "fd_check",
    "rng",
    "zero_grads",
    "ConfigError",
    "DataError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "UsageError",
    "__version__",
]
