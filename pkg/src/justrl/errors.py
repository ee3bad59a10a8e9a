"""Exception types shared across the package."""

from __future__ import annotations


class JustRLError(Exception):
    """Base class for all package errors."""


class ConfigError(JustRLError, ValueError):
    """Invalid configuration or argument combination."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class DomainError(JustRLError, ValueError):
    """A token id or other value outside its allowed range."""


class StructuralError(JustRLError, ValueError):
    """Mismatched shapes between parallel containers."""


class CheckpointError(JustRLError):
    """A checkpoint file could not be read or does not match the expected layout."""
