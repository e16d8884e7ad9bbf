"""
Exception hierarchy for histotnet.

Every error raised on purpose by the package derives from HistoTNetError.
The CLI maps ValidationError (and subclasses) to exit code 2 and anything
else to exit code 1.
"""
from typing import Optional


class HistoTNetError(Exception):
    """Base class for all package errors."""
    pass


class ValidationError(HistoTNetError, ValueError):
    """Raised when an input violates a documented invariant."""
    pass


class FormatError(ValidationError):
    """Raised when a file cannot be decoded."""

    def __init__(self, message: str, offset: int = 0, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (byte offset {offset})")


class PayloadLengthError(FormatError):
    """Raised when a binary payload is shorter or longer than its header declares."""
    pass


class ConfigError(ValidationError):
    """Raised for malformed configuration files or unknown keys."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class UndefinedScoreError(ValidationError):
    """Raised when a metric is undefined for the given inputs (e.g. zero denominator)."""
    pass


class GradientError(HistoTNetError):
    """Raised when an optimizer receives non-finite gradients."""
    pass


__all__ = [
    "HistoTNetError",
    "ValidationError",
    "FormatError",
    "PayloadLengthError",
    "ConfigError",
    "UndefinedScoreError",
    "GradientError",
]
