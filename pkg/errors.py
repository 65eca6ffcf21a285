"""
Exception hierarchy for the feature-convex certification toolkit.

Every error raised on purpose by this package derives from FeatureConvexError,
so callers (and the CLI) can tell our failures apart from programming errors.
"""

from typing import Any, Optional


class FeatureConvexError(Exception):
    """Base class for all errors raised by this package."""


class RejectedInputError(FeatureConvexError, ValueError):
    """An input tensor has the wrong shape or dimension."""

    def __init__(self, message: str, expected: Any = None, actual: Any = None):
        if expected is not None or actual is not None:
            message = f"{message} (expected {expected}, got {actual})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class ContractViolationError(FeatureConvexError):
    """An API was called in a way its contract forbids."""


class ConfigurationError(FeatureConvexError, ValueError):
    """Invalid configuration or unusable data (e.g. a single-class dataset)."""


class UnsupportedNormError(ConfigurationError):
    """Only the l1, l2 and l-infinity norms are supported."""

    def __init__(self, p: Any):
        super().__init__(f"Unsupported norm p={p!r}; use 1, 2 or inf")
        self.p = p


class NumericError(FeatureConvexError, ArithmeticError):
    """A logit, gradient or tensor became NaN or infinite."""


class ModelFormatError(FeatureConvexError):
    """A model file could not be parsed."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message)
        self.offset = offset


class ModelVersionError(ModelFormatError):
    """A model file has the wrong magic string or format version."""


class DataFormatError(FeatureConvexError):
    """A dataset file (IDX or CSV) is malformed."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message)
        self.offset = offset


class DataConsistencyError(DataFormatError):
    """Image and label files disagree on the number of samples."""
