"""
errors.py - Exception hierarchy shared by every module.

All failures raised on purpose derive from `SurrogateError` so the CLI and the
HTTP server can map them onto exit codes / status codes in one place.
"""

from typing import Dict, Optional


class SurrogateError(Exception):
    """Base class for every error raised deliberately by this package."""


class InvalidArgumentError(SurrogateError, ValueError):
    """Shapes, ranges or other argument preconditions were violated."""


class DegenerateReflectionError(SurrogateError):
    """A Householder slice was exactly the zero vector."""


class DegenerateRetractionError(SurrogateError):
    """W + xi is rank deficient, so the QR retraction is undefined."""


class NumericalConditioningError(SurrogateError):
    """Cholesky factorization failed even after the maximum jitter."""


class SamplerInitializationError(SurrogateError):
    """No finite starting point was found for the sampler."""


class TrainingError(SurrogateError):
    """Training failed as a whole (e.g. every MO-AS restart failed)."""

    def __init__(self, message: str, failure_counts: Optional[Dict[str, int]] = None):
        super().__init__(message)
        self.failure_counts = failure_counts or {}


class DataError(SurrogateError, ValueError):
    """Malformed dataset content; carries the offending location when known."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class UndefinedMetricError(SurrogateError):
    """A metric is mathematically undefined for the given inputs."""


class UsageError(SurrogateError):
    """Configuration or command-line usage is invalid."""
