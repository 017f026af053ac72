"""
Logging helpers for the ommhp package.

This module provides the execution-time decorator used on the long-running
operations (simulation, fitting, CLI commands) and a single place to configure
the package logger.
"""

import functools
import logging
import time
from typing import Any, Callable, Optional, TypeVar, cast

import numpy as np

logger = logging.getLogger(__name__)

PACKAGE_LOGGER = "ommhp"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

T = TypeVar('T')


def _describe(value: Any) -> str:
    """Short type/size summary of a value for debug logs"""
    if isinstance(value, np.ndarray):
        return f"ndarray{tuple(value.shape)}"
    if isinstance(value, (list, tuple, dict)):
        return f"{type(value).__name__}[{len(value)}]"
    return type(value).__name__


def log_execution_time(func: Callable[..., T]) -> Callable[..., T]:
    """
    Decorator to log function execution time

    Args:
        func: The function to decorate

    Returns:
        The decorated function
    """
    func_logger = logging.getLogger(func.__module__)

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> T:
        func_name = func.__name__
        call_id = str(id(args[0]))[:8] if args else str(id(func))[:8]

        arg_info = [_describe(arg) for arg in args]
        arg_info.extend(f"{k}={_describe(v)}" for k, v in kwargs.items())
        func_logger.debug(f"[{call_id}] Calling {func_name}({', '.join(arg_info)})")

        start_time = time.perf_counter()
        try:
            result = func(*args, **kwargs)
        except Exception as e:
            execution_time = time.perf_counter() - start_time
            func_logger.error(f"[{call_id}] {func_name} raised {type(e).__name__} after {execution_time:.4f}s: {e}")
            raise

        execution_time = time.perf_counter() - start_time
        func_logger.debug(f"[{call_id}] {func_name} returned {_describe(result)} in {execution_time:.4f}s")
        return result

    return cast(Callable[..., T], wrapper)


def configure_logging(level=logging.INFO, add_file_handler: bool = False, log_file: Optional[str] = None):
    """
    Configure logging for the ommhp package

    Args:
        level: The logging level to use (default: INFO)
        add_file_handler: Whether to add a file handler (default: False)
        log_file: Path to the log file (default: ommhp.log in current directory)
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())

    package_logger = logging.getLogger(PACKAGE_LOGGER)
    package_logger.setLevel(level)

    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)

    # Remove existing handlers to avoid duplicates
    for handler in package_logger.handlers[:]:
        package_logger.removeHandler(handler)

    package_logger.addHandler(console_handler)

    if add_file_handler:
        if log_file is None:
            log_file = "ommhp.log"
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        package_logger.addHandler(file_handler)
        package_logger.debug(f"Logging to file: {log_file}")

    package_logger.debug("ommhp logging configured")
