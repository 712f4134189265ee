"""
Error types for EM Boundary Net.

Every failure the engine reports is an EngineError subclass carrying the
structured details a caller needs, plus the process exit code the CLI maps
it to.
"""

from typing import Optional, Sequence


class EngineError(Exception):
    """Base class for all engine errors."""

    exit_code: int = 2


class UsageError(EngineError):
    """Exception raised when command-line arguments are inconsistent."""

    exit_code = 1


class ShapeError(EngineError):
    """Exception raised when array shapes are incompatible."""

    def __init__(self, message: str, expected: Optional[Sequence[int]] = None,
                 actual: Optional[Sequence[int]] = None):
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None
        detail = message
        if self.expected is not None or self.actual is not None:
            detail = f"{message} (expected {self.expected}, got {self.actual})"
        super().__init__(detail)


class BoundsError(EngineError):
    """Exception raised when a window does not fit inside a volume."""

    def __init__(self, offset: Sequence[int], shape: Sequence[int], dims: Sequence[int]):
        self.offset = tuple(offset)
        self.shape = tuple(shape)
        self.dims = tuple(dims)
        super().__init__(
            f"Window offset={self.offset} shape={self.shape} exceeds volume dims {self.dims}"
        )


class SpecError(EngineError):
    """Exception raised when a network spec file is malformed or invalid."""

    def __init__(self, message: str, line_number: Optional[int] = None, line: str = ""):
        self.line_number = line_number
        self.line = line
        if line_number is not None:
            message = f"line {line_number}: {message}: {line.strip()!r}"
        super().__init__(message)


class PlanError(EngineError):
    """Exception raised when sparsity or field-of-view inference fails."""


class ConfigurationError(EngineError):
    """Exception raised for unusable run configuration (patches, stacks, stages)."""


class DataFormatError(EngineError):
    """Exception raised when a volume file or its sidecar is malformed."""

    def __init__(self, message: str, path: Optional[str] = None,
                 expected_bytes: Optional[int] = None, actual_bytes: Optional[int] = None):
        self.path = path
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes
        if expected_bytes is not None:
            message = f"{message}: expected {expected_bytes} bytes, found {actual_bytes}"
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class CheckpointError(EngineError):
    """Exception raised when a checkpoint cannot be read or does not match its spec."""


class UndefinedScoreError(EngineError):
    """Exception raised when a score has no countable pixels."""

    exit_code = 3


class NumericalError(EngineError):
    """Exception raised when training or inference produces non-finite values."""

    exit_code = 3
