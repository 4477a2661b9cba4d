"""Exception types shared across the package."""


class SigstopError(Exception):
    """Base class for all package errors."""


class ConfigError(SigstopError, ValueError):
    """Invalid configuration or parameter combination."""


class GridError(SigstopError, ValueError):
    """Time grids that are non-increasing, misaligned or mismatched."""


class DomainError(SigstopError, ValueError):
    """Inputs outside the mathematical domain of an operation."""


class DimensionError(SigstopError, ValueError):
    """Shape or alphabet mismatch between algebraic objects."""


class TruncationError(SigstopError, ValueError):
    """A word or functional exceeds the truncation level of a signature."""


class NumericalError(SigstopError, RuntimeError):
    """Numerical failure (non-PSD covariance, overflow, divergence)."""


class AcceptanceError(SigstopError, RuntimeError):
    """A pricing-invariant check requested via --check failed."""
