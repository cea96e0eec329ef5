"""
Custom exceptions for the TGM agent.

This module defines all custom exceptions used throughout the package.
Each exception provides a clear error message and relevant context for debugging.
"""

from typing import Optional, Any, Dict, Sequence


class TGMError(Exception):
    """
    Base exception class for all TGM errors.

    Attributes:
        message: Human-readable error message
        details: Additional error details for debugging
        error_code: Unique error code for categorization
    """

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None,
                 error_code: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}
        self.error_code = error_code or self.__class__.__name__

    def __str__(self):
        if self.details:
            detail_str = ', '.join(f'{k}={v}' for k, v in self.details.items())
            return f"{self.message} ({detail_str})"
        return self.message


class InvalidInputError(TGMError):
    """
    Raised when invalid input reaches a numerical kernel or the agent.

    This includes:
    - Dimension mismatches between vectors and matrices
    - Non-finite coordinates
    - Component or action indices out of range
    - Forget plans that do not match the buffer
    """

    def __init__(self, message: str, input_value: Any = None, **kwargs):
        details = {'input_value': str(input_value)} if input_value is not None else {}
        details.update(kwargs)
        super().__init__(message, details, 'INVALID_INPUT')


class NotPositiveDefiniteError(InvalidInputError):
    """Raised when a precision or Wishart scale matrix is not symmetric positive-definite."""

    def __init__(self, message: str, name: Optional[str] = None, **kwargs):
        super().__init__(message, **({'matrix': name} if name else {}), **kwargs)
        self.error_code = 'NOT_POSITIVE_DEFINITE'


class MazeParseError(InvalidInputError):
    """Raised when a maze document cannot be turned into a MazeSpec."""

    def __init__(self, message: str, source: Optional[str] = None,
                 line: Optional[int] = None, **kwargs):
        extra = {}
        if source is not None:
            extra['source'] = source
        if line is not None:
            extra['line'] = line
        extra.update(kwargs)
        super().__init__(message, **extra)
        self.error_code = 'MAZE_PARSE_ERROR'


class ConfigurationError(TGMError):
    """
    Raised when agent or run configuration is invalid.

    This includes:
    - Invalid parameter values
    - Conflicting settings
    - Unreadable config files
    """

    def __init__(self, message: str, parameter: Optional[str] = None,
                 value: Any = None, **kwargs):
        details = {}
        if parameter:
            details['parameter'] = parameter
        if value is not None:
            details['value'] = str(value)
        details.update(kwargs)
        super().__init__(message, details, 'CONFIG_ERROR')


class StateError(TGMError):
    """
    Raised when operations are attempted in invalid states.

    This includes:
    - Stepping an environment whose episode is over
    - Acting before any model exists when one is required
    """

    def __init__(self, message: str, current_state: str,
                 expected_state: Optional[str] = None, **kwargs):
        details = {
            'current_state': current_state,
            'expected_state': expected_state
        }
        details.update(kwargs)
        super().__init__(message, details, 'STATE_ERROR')


class ConvergenceError(TGMError):
    """Raised when an iterative solver hits its iteration cap without converging."""

    def __init__(self, message: str, iterations: int,
                 residual: Optional[float] = None, **kwargs):
        details = {'iterations': iterations, 'residual': residual}
        details.update(kwargs)
        super().__init__(message, details, 'CONVERGENCE_ERROR')


class CheckpointError(TGMError):
    """Raised when a checkpoint document is missing, corrupt or of an unknown version."""

    def __init__(self, message: str, path: Optional[str] = None, **kwargs):
        details = {'path': path} if path else {}
        details.update(kwargs)
        super().__init__(message, details, 'CHECKPOINT_ERROR')


# Convenience functions for common error scenarios

def dimension_mismatch_error(what: str, expected: Any, actual: Any) -> InvalidInputError:
    """Create error for incompatible shapes."""
    return InvalidInputError(
        f"Dimension mismatch for {what}: expected {expected}, got {actual}",
        expected=expected,
        actual=actual
    )


def index_out_of_range_error(what: str, index: int, size: int) -> InvalidInputError:
    """Create error for an index outside [0, size)."""
    return InvalidInputError(
        f"{what} index {index} out of range for size {size}",
        input_value=index,
        valid_range=f"0-{size - 1}"
    )


def not_positive_definite_error(name: str, eigenvalues: Optional[Sequence[float]] = None
                                ) -> NotPositiveDefiniteError:
    """Create error for a matrix that failed its Cholesky factorization."""
    extra = {}
    if eigenvalues is not None:
        extra['min_eigenvalue'] = float(min(eigenvalues))
    return NotPositiveDefiniteError(
        f"Matrix '{name}' is not symmetric positive-definite",
        name=name,
        **extra
    )
