"""Saliency-guided blind image quality assessment."""

__version__ = "0.1.0"

from .errors import (
    FormatError,
    InsufficientDataError,
    InvalidInputError,
    InvalidStateError,
    SaliqaError,
    UndefinedMetricError,
)

__all__ = [
    "__version__",
    "SaliqaError",
    "InvalidInputError",
    "InsufficientDataError",
    "InvalidStateError",
    "UndefinedMetricError",
    "FormatError",
]
