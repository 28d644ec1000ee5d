"""Exception types shared across the package."""


class CBSError(Exception):
    """Base class for all package errors."""


class FormatError(CBSError, ValueError):
    """Malformed or inconsistent file contents."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(CBSError, ArithmeticError):
    """A numerical operation could not be carried out reliably."""


class TrainingError(NumericError):
    """Training diverged."""
