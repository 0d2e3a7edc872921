"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class TypeforgeError(Exception):
    """Base class for all errors raised by this package."""


class InfrastructureError(TypeforgeError):
    """Environment-level failure: unreadable roots, missing files, broken runners."""


class TransportError(TypeforgeError):
    """HTTP-level failure talking to the completion provider."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class CassetteMissError(TypeforgeError):
    """Replay mode found no recorded response for a request digest."""

    def __init__(self, digest: str):
        super().__init__(f"no cassette entry for digest {digest}")
        self.digest = digest


class ConstraintParseError(TypeforgeError):
    """Agent output could not be parsed into a constraint (recoverable: re-prompt once)."""


class ConstraintValidationError(TypeforgeError):
    """Parsed constraint violates the schema or names unknown parameters."""

    def __init__(self, message: str, offenders: tuple[str, ...] = ()):
        super().__init__(message)
        self.offenders = offenders


class ChainAnalysisError(TypeforgeError):
    """A constraint-analysis pass failed after its retry budget was exhausted."""


class GenerationError(TypeforgeError):
    """Test generation produced no usable code after its retry budget was exhausted."""


class ChainSkipped(TypeforgeError):
    """Neither constraint sequence is usable; the focal method is skipped."""
