"""
Tests for the custom exceptions functionality.
"""

import pytest

from mbpre.exceptions import (
    ArtifactIOError,
    ConfigError,
    DegenerateShiftError,
    DomainError,
    EigenMismatchError,
    MbpreError,
    MissingRenewalTableError,
    RegimeMismatchError,
    RejectionExhaustedError,
    TailNotConvergedError,
    UnsupportedFamilyError,
    ZeroMassConditionError,
)


def test_exceptions_init():
    """Test basic initialization of exceptions."""
    base_exc = MbpreError("Base error")
    assert str(base_exc) == "Base error"
    assert base_exc.original_exception is None

    original = ValueError("Original error")
    base_exc_with_original = MbpreError("With original", original_exception=original)
    assert base_exc_with_original.original_exception is original


@pytest.mark.parametrize(
    "cls",
    [
        DegenerateShiftError,
        DomainError,
        UnsupportedFamilyError,
        MissingRenewalTableError,
        ZeroMassConditionError,
        ConfigError,
        ArtifactIOError,
    ],
)
def test_plain_subclasses(cls):
    """Every typed error is an MbpreError carrying its original exception."""
    original = RuntimeError("cause")
    error = cls("message", original_exception=original)
    assert isinstance(error, MbpreError)
    assert str(error) == "message"
    assert error.original_exception is original


def test_builtin_compatibility():
    """Argument and I/O errors can be caught as their builtin counterparts."""
    with pytest.raises(ValueError):
        raise DomainError("bad z")
    with pytest.raises(ValueError):
        raise ConfigError("bad config")
    with pytest.raises(OSError):
        raise ArtifactIOError("disk full")


def test_eigen_mismatch_ratios():
    """EigenMismatchError keeps the offending ratios."""
    error = EigenMismatchError("not an eigenvector", ratios=[2.0, 3.0])
    assert error.ratios == [2.0, 3.0]
    assert error.original_exception is None


def test_rejection_exhausted_attempts():
    """RejectionExhaustedError records the number of redraws."""
    error = RejectionExhaustedError("gave up", attempts=1000)
    assert error.attempts == 1000


def test_tail_not_converged_fields():
    """TailNotConvergedError records the tail and the bound."""
    error = TailNotConvergedError("tail too large", tail=1e-3, bound=1e-6)
    assert error.tail == 1e-3
    assert error.bound == 1e-6


def test_regime_mismatch_fields():
    """RegimeMismatchError records expected and actual regimes."""
    original = KeyError("x")
    error = RegimeMismatchError(
        "wrong regime",
        expected="strongly_supercritical",
        actual="intermediately_supercritical",
        original_exception=original,
    )
    assert error.expected == "strongly_supercritical"
    assert error.actual == "intermediately_supercritical"
    assert error.original_exception is original
