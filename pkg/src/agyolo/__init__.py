"""Compact CPU object-detection toolkit built around tiny two-head YOLO variants."""

__version__ = "0.1.0"

from .ops import (
    BnParams,
    ConfigError,
    ConvParams,
    DimensionError,
)

__all__ = [
    "BnParams",
    "ConfigError",
    "ConvParams",
    "DimensionError",
    "__version__",
]
