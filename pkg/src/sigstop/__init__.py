"""Signature-based primal/dual Monte Carlo pricing of Bermudan puts under rough volatility."""

__version__ = "0.1.0"

from .errors import (AcceptanceError, ConfigError, DimensionError, DomainError,
                     GridError, NumericalError, SigstopError, TruncationError)

__all__ = [
    "__version__",
    "SigstopError", "ConfigError", "GridError", "DomainError",
    "DimensionError", "TruncationError", "NumericalError", "AcceptanceError",
]
