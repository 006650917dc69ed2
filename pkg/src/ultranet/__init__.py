"""ultranet: ultrametric reaction networks on p-adic state trees."""

__version__ = "0.1.0"

from .errors import (
    ClassificationError,
    NumericError,
    UltranetError,
    UsageError,
    ValidationError,
)

__all__ = [
    "ClassificationError",
    "NumericError",
    "UltranetError",
    "UsageError",
    "ValidationError",
]
