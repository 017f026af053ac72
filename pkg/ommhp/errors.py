"""Exception hierarchy shared by the OMMHP modules and the CLI."""

from typing import Any, Dict, Optional


class OMMHPError(Exception):
    """Base exception for every failure raised by the ommhp package"""

    exit_code = 1

    def __init__(self, message: str, interval: Optional[int] = None):
        super().__init__(message)
        self.interval = interval


class InvalidInputError(OMMHPError, ValueError):
    """Exception raised when an input violates a documented precondition"""
    pass


class EventLogParseError(InvalidInputError):
    """Exception raised when an event-log record cannot be parsed"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class SequencingError(OMMHPError):
    """Exception raised when interval batches arrive out of order"""
    pass


class NumericError(OMMHPError, ArithmeticError):
    """Exception raised for non-positive intensities or non-finite quantities"""

    exit_code = 2

    def __init__(self, message: str, payload: Optional[Dict[str, Any]] = None, interval: Optional[int] = None):
        super().__init__(message, interval=interval)
        self.payload = payload or {}


class ResourceLimitError(OMMHPError):
    """Exception raised when a simulation exceeds its event cap"""

    exit_code = 2


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception to the CLI exit code

    Args:
        error: The exception that aborted a command

    Returns:
        0 is never returned; 1 for validation/parse errors, 2 for numeric
        failures, 3 for I/O failures
    """
    if isinstance(error, OMMHPError):
        return error.exit_code
    if isinstance(error, OSError):
        return 3
    if isinstance(error, ArithmeticError):
        return 2
    return 1
