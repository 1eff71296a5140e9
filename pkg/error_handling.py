#!/usr/bin/env python3
"""
Error handling for bibeefmm

This module provides the exception hierarchy, error context and error
statistics shared by the geometry readers, the FMM and the BEM solver.

Features:
- Categorized exceptions with severity and CLI exit codes
- Line-numbered input format errors
- Conversion of builtin exceptions into the hierarchy
- Input validation decorators
- Memory guards ahead of dense assembly
"""

import functools
import inspect
import logging
import os
import time
import traceback
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Optional


class ErrorSeverity(Enum):
    """Error severity levels."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Error categories for better handling."""
    INPUT_FORMAT = "input_format"
    FILESYSTEM = "filesystem"
    GEOMETRY = "geometry"
    CONFIGURATION = "configuration"
    NUMERICAL = "numerical"
    CONVERGENCE = "convergence"
    RESOURCE = "resource"
    VALIDATION = "validation"
    UNKNOWN = "unknown"


# Process exit status per category; anything not listed exits with 1.
EXIT_CODES = {
    ErrorCategory.CONVERGENCE: 2,
}


@dataclass
class ErrorContext:
    """Context information for error handling."""
    operation: str
    recoverable: bool = False
    severity: ErrorSeverity = ErrorSeverity.HIGH
    category: ErrorCategory = ErrorCategory.UNKNOWN
    metadata: Dict[str, Any] = field(default_factory=dict)


class BibeeFmmError(Exception):
    """Base exception for bibeefmm with enhanced context."""

    category = ErrorCategory.UNKNOWN

    def __init__(self, message: str, context: ErrorContext = None, cause: Exception = None):
        super().__init__(message)
        if context is None:
            context = ErrorContext(operation="unknown", category=self.category)
        elif self.category is not ErrorCategory.UNKNOWN:
            context.category = self.category
        self.context = context
        self.cause = cause
        self.timestamp = time.time()

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.context.category, 1)

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary for logging/reporting."""
        return {
            "message": str(self),
            "type": self.__class__.__name__,
            "timestamp": self.timestamp,
            "context": {
                "operation": self.context.operation,
                "severity": self.context.severity.value,
                "category": self.context.category.value,
                "recoverable": self.context.recoverable,
                "metadata": self.context.metadata,
            },
            "cause": str(self.cause) if self.cause else None,
            "traceback": traceback.format_exc(),
        }


class InputFormatError(BibeeFmmError):
    """Malformed mesh or charge file; the message names file and line."""

    category = ErrorCategory.INPUT_FORMAT

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line_number: Optional[int] = None,
        cause: Exception = None,
    ):
        self.path = path
        self.line_number = line_number
        where = ""
        if path is not None:
            where = f"{path}"
            if line_number is not None:
                where += f":{line_number}"
            where += ": "
        context = ErrorContext(
            operation="parse",
            metadata={"path": path, "line_number": line_number},
        )
        super().__init__(f"{where}{message}", context, cause)


class FilesystemError(BibeeFmmError):
    """Missing input or unwritable output."""

    category = ErrorCategory.FILESYSTEM


class GeometryError(BibeeFmmError):
    """Degenerate triangles, coincident points and unsafe layouts."""

    category = ErrorCategory.GEOMETRY


class ConfigurationError(BibeeFmmError):
    """Invalid run parameters."""

    category = ErrorCategory.CONFIGURATION


class NumericalError(BibeeFmmError):
    """Singular diagonal, non-finite values."""

    category = ErrorCategory.NUMERICAL


class ConvergenceError(BibeeFmmError):
    """Iterative solve stopped above tolerance."""

    category = ErrorCategory.CONVERGENCE

    def __init__(self, message: str, context: ErrorContext = None, cause: Exception = None,
                 result: Any = None):
        super().__init__(message, context, cause)
        self.result = result


class ResourceError(BibeeFmmError):
    """Not enough memory for the requested operation."""

    category = ErrorCategory.RESOURCE


class ErrorHandler:
    """Error bookkeeping, validation and resource guards."""

    def __init__(self, logger: logging.Logger = None):
        self.logger = logger or logging.getLogger("bibeefmm.errors")
        self.error_stats: Dict[str, Dict] = {}

    def enhance_error(self, error: Exception, context: ErrorContext) -> BibeeFmmError:
        """Wrap builtin exceptions into the bibeefmm hierarchy."""
        if isinstance(error, BibeeFmmError):
            return error

        if isinstance(error, (FileNotFoundError, PermissionError, IsADirectoryError)):
            return FilesystemError(str(error), context, error)
        if isinstance(error, MemoryError):
            return ResourceError("out of memory", context, error)
        if isinstance(error, (FloatingPointError, ZeroDivisionError)):
            return NumericalError(str(error), context, error)
        if isinstance(error, OSError):
            return FilesystemError(str(error), context, error)
        if isinstance(error, ValueError):
            context.category = ErrorCategory.VALIDATION
            return BibeeFmmError(str(error), context, error)
        return BibeeFmmError(str(error), context, error)

    def handle(self, error: Exception, operation: str) -> BibeeFmmError:
        """Enhance, log and count an error; returns the enhanced exception."""
        enhanced = self.enhance_error(error, ErrorContext(operation=operation))
        if enhanced.context.operation == "unknown":
            enhanced.context.operation = operation
        self._log_error(enhanced)
        self._update_error_stats(enhanced)
        return enhanced

    def _log_error(self, error: BibeeFmmError):
        """Log error with enhanced context."""
        log_level = {
            ErrorSeverity.LOW: logging.INFO,
            ErrorSeverity.MEDIUM: logging.WARNING,
            ErrorSeverity.HIGH: logging.ERROR,
            ErrorSeverity.CRITICAL: logging.CRITICAL,
        }.get(error.context.severity, logging.ERROR)

        self.logger.log(
            log_level,
            f"[{error.context.category.value.upper()}][{error.context.severity.value.upper()}] "
            f"{error.context.operation} | {error}",
        )
        self.logger.debug(f"Error context: {error.to_dict()}")

    def _update_error_stats(self, error: BibeeFmmError):
        """Update error statistics for monitoring."""
        operation = error.context.operation
        if operation not in self.error_stats:
            self.error_stats[operation] = {
                "total_errors": 0,
                "by_category": {},
                "by_severity": {},
                "last_error": None,
            }

        stats = self.error_stats[operation]
        stats["total_errors"] += 1
        stats["last_error"] = time.time()

        category = error.context.category.value
        stats["by_category"][category] = stats["by_category"].get(category, 0) + 1
        severity = error.context.severity.value
        stats["by_severity"][severity] = stats["by_severity"].get(severity, 0) + 1

    def validate_inputs(self, validators: Dict[str, Callable]):
        """Decorator for input validation."""

        def decorator(func: Callable) -> Callable:
            sig = inspect.signature(func)

            @functools.wraps(func)
            def wrapper(*args, **kwargs) -> Any:
                bound_args = sig.bind(*args, **kwargs)
                bound_args.apply_defaults()

                for param_name, validator in validators.items():
                    if param_name not in bound_args.arguments:
                        continue
                    value = bound_args.arguments[param_name]
                    if not validator(value):
                        context = ErrorContext(
                            operation=func.__name__,
                            metadata={"parameter": param_name, "value": str(value)},
                        )
                        raise ConfigurationError(
                            f"Input validation failed for parameter '{param_name}': {value}",
                            context,
                        )

                return func(*args, **kwargs)

            return wrapper
        return decorator

    def check_memory(self, required_mb: float, operation: str) -> None:
        """Raise ResourceError when less than ``required_mb`` is available."""
        import psutil

        available_mb = psutil.virtual_memory().available / 1024 / 1024
        if available_mb < required_mb:
            context = ErrorContext(
                operation=operation,
                metadata={
                    "available_memory_mb": available_mb,
                    "required_memory_mb": required_mb,
                },
            )
            raise ResourceError(
                f"Insufficient memory: {available_mb:.1f}MB available, "
                f"{required_mb:.1f}MB required",
                context,
            )

    def resource_guard(self, estimate_mb: Callable[..., float]):
        """Decorator that checks memory against an estimate computed from the call arguments."""

        def decorator(func: Callable) -> Callable:
            @functools.wraps(func)
            def wrapper(*args, **kwargs) -> Any:
                self.check_memory(estimate_mb(*args, **kwargs), func.__name__)
                return func(*args, **kwargs)

            return wrapper
        return decorator

    def get_error_stats(self) -> Dict[str, Any]:
        """Get comprehensive error statistics."""
        total_errors = sum(stats["total_errors"] for stats in self.error_stats.values())
        return {
            "total_errors": total_errors,
            "operations_with_errors": len(self.error_stats),
            "by_operation": self.error_stats,
        }


# Utility functions for common validation patterns
def validate_positive(value: Any) -> bool:
    """Finite number strictly above zero."""
    try:
        number = float(value)
    except (TypeError, ValueError):
        return False
    return number > 0 and number != float("inf")


def validate_order(order: Any) -> bool:
    """Expansion order within 1..30."""
    return isinstance(order, int) and 1 <= order <= 30


def validate_subdivisions(subdivisions: Any) -> bool:
    """Icosphere subdivision level within 0..8."""
    return isinstance(subdivisions, int) and 0 <= subdivisions <= 8


def validate_tolerance(tol: Any) -> bool:
    """Relative tolerance within (0, 1)."""
    try:
        tol = float(tol)
    except (TypeError, ValueError):
        return False
    return 0.0 < tol < 1.0


def validate_existing_file(path: Any) -> bool:
    """Path names a readable regular file."""
    return isinstance(path, (str, os.PathLike)) and os.path.isfile(path)


# Global error handler instance
_global_error_handler = None


def get_error_handler(logger: logging.Logger = None) -> ErrorHandler:
    """Get global error handler instance."""
    global _global_error_handler
    if _global_error_handler is None:
        _global_error_handler = ErrorHandler(logger)
    return _global_error_handler


def validate_inputs(**validators):
    """Convenience decorator for input validation."""
    handler = get_error_handler()
    return handler.validate_inputs(validators)


def guard_memory(estimate_mb: Callable[..., float]):
    """Convenience decorator for memory guarding."""
    handler = get_error_handler()
    return handler.resource_guard(estimate_mb)
