"""
Custom exceptions for the mbpre library.
"""

from typing import Optional


class MbpreError(Exception):
    """
    Base exception for all mbpre errors.

    The CLI maps subclasses to exit codes. When an mbpre error wraps a
    lower-level failure, such as a jsonschema violation or an OSError on an
    artifact, that failure is kept in ``original_exception``.
    """

    def __init__(self, message: str, original_exception: Optional[Exception] = None):
        super().__init__(message)
        self.original_exception = original_exception


class EigenMismatchError(MbpreError):
    """Raised when v is not a common left eigenvector of a mean matrix."""

    def __init__(
        self,
        message: str,
        ratios: Optional[list] = None,
        original_exception: Optional[Exception] = None,
    ):
        """
        Initialize with a message and the offending component ratios.

        Args:
            message: Error message
            ratios: The values (vM)_j / v_j that failed to agree
            original_exception: Wrapped lower-level error, if any
        """
        super().__init__(message, original_exception)
        self.ratios = ratios


class DomainError(MbpreError, ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class DegenerateShiftError(MbpreError):
    """Raised when a formula needs a positive shift vector but D_n vanishes."""


class RejectionExhaustedError(MbpreError):
    """Raised when environment construction keeps failing its checks."""

    def __init__(
        self,
        message: str,
        attempts: int = 0,
        original_exception: Optional[Exception] = None,
    ):
        """
        Initialize with a message and the number of attempts made.

        Args:
            message: Error message
            attempts: Number of redraws performed before giving up
            original_exception: Wrapped lower-level error, if any
        """
        super().__init__(message, original_exception)
        self.attempts = attempts


class UnsupportedFamilyError(MbpreError):
    """Raised when a distribution family has no analytic treatment."""


class MissingRenewalTableError(MbpreError):
    """Raised when a conditioned expectation is requested without V."""


class ZeroMassConditionError(MbpreError):
    """Raised when conditioning on an event of zero quenched probability."""


class TailNotConvergedError(MbpreError):
    """Raised when a truncated series has not settled below its bound."""

    def __init__(
        self,
        message: str,
        tail: float = float("nan"),
        bound: float = float("nan"),
        original_exception: Optional[Exception] = None,
    ):
        """
        Initialize with a message and the observed tail diagnostic.

        Args:
            message: Error message
            tail: Observed last-term to total ratio
            bound: Configured bound that was exceeded
            original_exception: Wrapped lower-level error, if any
        """
        super().__init__(message, original_exception)
        self.tail = tail
        self.bound = bound


class RegimeMismatchError(MbpreError):
    """Raised when an estimator is applied to a model of the wrong regime."""

    def __init__(
        self,
        message: str,
        expected: Optional[str] = None,
        actual: Optional[str] = None,
        original_exception: Optional[Exception] = None,
    ):
        """
        Initialize with a message and the expected/actual regimes.

        Args:
            message: Error message
            expected: Regime the operation requires
            actual: Regime reported by classify
            original_exception: Wrapped lower-level error, if any
        """
        super().__init__(message, original_exception)
        self.expected = expected
        self.actual = actual


class ConfigError(MbpreError, ValueError):
    """Raised when an experiment or model configuration is invalid."""


class ArtifactIOError(MbpreError, OSError):
    """Raised when reading or writing an artifact fails."""
