"""
Input validation utilities and decorators for the TGM agent.

Provides array-level checks shared by the numerical kernels and a config
decorator, so that bad input fails early with a domain error instead of a
NaN three sweeps later.
"""

import functools
from typing import Any, Callable, Optional, Sequence
import logging

import numpy as np

from src.exceptions import (
    ConfigurationError, InvalidInputError,
    dimension_mismatch_error, index_out_of_range_error, not_positive_definite_error,
)

logger = logging.getLogger(__name__)

# Relative tolerance for symmetry of precision / scale matrices
SYMMETRY_TOL = 1e-10

# Row-sum tolerance for responsibilities and beliefs
SIMPLEX_TOL = 1e-9


def as_finite_vector(value: Any, name: str = "vector",
                     dim: Optional[int] = None) -> np.ndarray:
    """
    Validate and convert a 1-D real vector.

    Raises:
        InvalidInputError: If the input is not 1-D, has the wrong length,
            or contains non-finite entries
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise dimension_mismatch_error(name, "1-D array", f"shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise dimension_mismatch_error(name, dim, arr.shape[0])
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values", input_value=arr.tolist())
    return arr


def as_finite_points(value: Any, name: str = "points", dim: Optional[int] = None,
                     allow_empty: bool = False) -> np.ndarray:
    """
    Validate and convert an (N, O) point matrix.

    Ragged input (a list of vectors of different lengths) is rejected.
    """
    try:
        arr = np.asarray(value, dtype=float)
    except (ValueError, TypeError) as e:
        raise InvalidInputError(f"{name} must be a list of equal-length vectors", error=str(e))
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, dim or 0)
    if arr.ndim != 2:
        raise dimension_mismatch_error(name, "(N, O) array", f"shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim and arr.shape[0] > 0:
        raise dimension_mismatch_error(f"{name} dimension", dim, arr.shape[1])
    if arr.shape[0] == 0 and not allow_empty:
        raise InvalidInputError(f"{name} must contain at least one point")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return arr


def as_spd_matrix(value: Any, name: str = "matrix", dim: Optional[int] = None) -> np.ndarray:
    """
    Validate a symmetric positive-definite matrix.

    The matrix must be symmetric within SYMMETRY_TOL (relative to its largest
    entry); it is returned symmetrized as (M + M^T) / 2.

    Raises:
        InvalidInputError: Wrong shape or non-finite entries
        NotPositiveDefiniteError: Asymmetric or Cholesky factorization fails
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise dimension_mismatch_error(name, "square matrix", f"shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise dimension_mismatch_error(name, (dim, dim), arr.shape)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    scale = max(1.0, float(np.max(np.abs(arr))))
    if np.max(np.abs(arr - arr.T)) > SYMMETRY_TOL * scale:
        raise not_positive_definite_error(name)
    sym = 0.5 * (arr + arr.T)
    try:
        np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise not_positive_definite_error(name, np.linalg.eigvalsh(sym))
    return sym


def check_index(index: int, size: int, what: str = "component") -> int:
    """Validate an integer index in [0, size)."""
    if isinstance(index, (bool, np.bool_)) or not isinstance(index, (int, np.integer)):
        raise InvalidInputError(f"{what} index must be an integer", input_value=index)
    if index < 0 or index >= size:
        raise index_out_of_range_error(what, int(index), size)
    return int(index)


def check_simplex_rows(value: Any, name: str = "responsibilities",
                       tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate that every row is a probability vector."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if np.any(arr < -tol) or np.any(arr > 1.0 + tol):
        raise InvalidInputError(f"{name} entries must lie in [0, 1]")
    if arr.shape[0] and np.max(np.abs(arr.sum(axis=1) - 1.0)) > tol:
        raise InvalidInputError(f"{name} rows must sum to 1",
                                max_deviation=float(np.max(np.abs(arr.sum(axis=1) - 1.0))))
    return arr


def check_probability(value: float, name: str) -> float:
    """Validate a number in [0, 1]."""
    if not np.isfinite(value) or value < 0.0 or value > 1.0:
        raise ConfigurationError(f"{name} must be in [0, 1]", parameter=name, value=value)
    return float(value)


def require_positive(value: float, name: str) -> float:
    """Validate a strictly positive finite number (configuration)."""
    if value is None or not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be positive", parameter=name, value=value)
    return float(value)


def validate_config(required: Sequence[str] = (), log_errors: bool = True):
    """
    Decorator validating a config object passed as `cfg` (keyword or second
    positional argument).

    The config's own `validate()` method is called when present; attributes
    listed in `required` must not be None.

    Example:
        @validate_config(required=("bandwidth",))
        def mean_shift(points, cfg): ...
    """
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            cfg = kwargs.get('cfg', args[1] if len(args) > 1 else None)
            if cfg is not None:
                try:
                    for attr in required:
                        if getattr(cfg, attr, None) is None:
                            raise ConfigurationError(
                                f"Missing required configuration '{attr}'",
                                parameter=attr
                            )
                    if hasattr(cfg, 'validate'):
                        cfg.validate()
                except ConfigurationError as e:
                    if log_errors:
                        logger.error(f"Invalid configuration for {func.__name__}: {e}")
                    raise
            return func(*args, **kwargs)

        return wrapper
    return decorator
