"""Footstep detection from paired audio + geophone signals via siamese metric learning."""

from .errors import (
    ConfigError,
    FormatError,
    InvalidInput,
    NumericsError,
    SenseSiameseError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "SenseSiameseError",
    "ConfigError",
    "ShapeError",
    "InvalidInput",
    "NumericsError",
    "FormatError",
    "__version__",
]
