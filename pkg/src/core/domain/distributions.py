"""
Gaussian, Wishart, Dirichlet and categorical building blocks.

Closed-form log-densities, expectation identities and the Gaussian KL
divergence used by the variational mixture, the structure learner and the
free-energy terms. Everything works in log space; determinants and
quadratic forms go through a Cholesky factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import linalg
from scipy.special import digamma, gammaln, multigammaln, xlogy

from src.exceptions import (
    InvalidInputError, NotPositiveDefiniteError,
    dimension_mismatch_error, not_positive_definite_error,
)
from src.validation import as_finite_vector, as_spd_matrix, check_index

LOG_2PI = float(np.log(2.0 * np.pi))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Multivariate Gaussian N(mean, precision^-1)."""

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = as_finite_vector(self.mean, "mean")
        precision = as_spd_matrix(self.precision, "precision", dim=mean.shape[0])
        object.__setattr__(self, 'mean', _frozen(mean))
        object.__setattr__(self, 'precision', _frozen(precision))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return spd_inverse(self.precision)


@dataclass(frozen=True, eq=False)
class WishartParams:
    """Wishart over precision matrices with scale W and v degrees of freedom (E[Λ] = vW)."""

    scale: np.ndarray
    degrees_of_freedom: float

    def __post_init__(self):
        try:
            scale = as_spd_matrix(self.scale, "wishart scale")
        except NotPositiveDefiniteError as e:
            raise NotPositiveDefiniteError("Invalid Wishart: scale is not positive-definite",
                                           name="wishart scale") from e
        v = float(self.degrees_of_freedom)
        if not np.isfinite(v) or v <= scale.shape[0] - 1:
            raise InvalidInputError(
                "Invalid Wishart: degrees of freedom must exceed dimension - 1",
                input_value=v, dim=scale.shape[0]
            )
        object.__setattr__(self, 'scale', _frozen(scale))
        object.__setattr__(self, 'degrees_of_freedom', v)

    @property
    def dim(self) -> int:
        return self.scale.shape[0]


@dataclass(frozen=True, eq=False)
class DirichletParams:
    """Dirichlet with strictly positive concentration vector."""

    concentration: np.ndarray

    def __post_init__(self):
        d = as_finite_vector(self.concentration, "concentration")
        if np.any(d <= 0):
            raise InvalidInputError("Dirichlet concentrations must be strictly positive",
                                    input_value=d.tolist())
        object.__setattr__(self, 'concentration', _frozen(d))

    @property
    def size(self) -> int:
        return self.concentration.shape[0]


# Matrix kernels

def cholesky_factor(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor of a symmetrized SPD matrix."""
    sym = 0.5 * (matrix + np.swapaxes(matrix, -1, -2))
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise not_positive_definite_error(name)


def log_det_spd(matrix: np.ndarray) -> Union[float, np.ndarray]:
    """ln|M| via Cholesky; works on a single matrix or a stack (..., O, O)."""
    chol = cholesky_factor(np.asarray(matrix, dtype=float))
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


def spd_inverse(matrix: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix through cho_factor/cho_solve, returned symmetrized."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 3:
        return np.stack([spd_inverse(m) for m in matrix]) if len(matrix) else matrix.copy()
    try:
        factor = linalg.cho_factor(0.5 * (matrix + matrix.T), lower=True)
    except linalg.LinAlgError:
        raise not_positive_definite_error("matrix")
    inv = linalg.cho_solve(factor, np.eye(matrix.shape[0]))
    return 0.5 * (inv + inv.T)


def mahalanobis_sq(x: np.ndarray, mean: np.ndarray, precision: np.ndarray) -> np.ndarray:
    """(x - mean)^T P (x - mean) for x of shape (O,) or (N, O)."""
    chol = cholesky_factor(precision, "precision")
    diff = np.atleast_2d(x) - mean
    # ||L^T d||^2 with P = L L^T
    proj = diff @ chol
    out = np.sum(proj * proj, axis=-1)
    return out if np.ndim(x) > 1 else out[0]


# Expectation identities

def expect_ln_det_precision(w: WishartParams) -> float:
    """E[ln|Λ|] = O ln 2 + ln|W| + Σ_i ψ((v + 1 - i) / 2)."""
    o = w.dim
    i = np.arange(1, o + 1)
    return float(o * np.log(2.0) + log_det_spd(w.scale)
                 + np.sum(digamma((w.degrees_of_freedom + 1.0 - i) / 2.0)))


def expect_quadratic_form(x: np.ndarray, mean: np.ndarray, beta: float,
                          w: WishartParams) -> Union[float, np.ndarray]:
    """
    E[(x - μ)^T Λ (x - μ)] under the Normal-Wishart (mean, beta, W, v):
    O / beta + v (x - mean)^T W (x - mean).

    `x` may be a single vector or an (N, O) batch.
    """
    mean = as_finite_vector(mean, "mean", dim=w.dim)
    x_arr = np.asarray(x, dtype=float)
    if x_arr.shape[-1] != w.dim:
        raise dimension_mismatch_error("x", w.dim, x_arr.shape[-1])
    if not beta > 0:
        raise InvalidInputError("beta must be positive", input_value=beta)
    quad = mahalanobis_sq(x_arr, mean, w.scale)
    result = w.dim / beta + w.degrees_of_freedom * quad
    return float(result) if np.ndim(result) == 0 else result


def expect_ln_dirichlet(d: DirichletParams, k: int) -> float:
    """E[ln D_k] = ψ(d_k) - ψ(Σ_i d_i)."""
    k = check_index(k, d.size, "Dirichlet component")
    return float(digamma(d.concentration[k]) - digamma(np.sum(d.concentration)))


def expect_ln_dirichlet_all(concentration: np.ndarray) -> np.ndarray:
    """Vector form of expect_ln_dirichlet over every component."""
    concentration = np.asarray(concentration, dtype=float)
    return digamma(concentration) - digamma(np.sum(concentration))


# Divergences and densities

def gaussian_kl(p: GaussianParams, q: GaussianParams) -> float:
    """KL(p || q) between two Gaussians given by their precisions."""
    if p.dim != q.dim:
        raise dimension_mismatch_error("gaussian_kl", p.dim, q.dim)
    cov_p = spd_inverse(p.precision)
    diff = q.mean - p.mean
    kl = 0.5 * (np.trace(q.precision @ cov_p)
                + float(diff @ q.precision @ diff)
                - p.dim
                + log_det_spd(p.precision) - log_det_spd(q.precision))
    return max(float(kl), 0.0)


def log_gaussian_pdf(x: np.ndarray, g: GaussianParams) -> Union[float, np.ndarray]:
    """ln N(x; mean, precision^-1) for a vector or an (N, O) batch."""
    x_arr = np.asarray(x, dtype=float)
    if x_arr.shape[-1] != g.dim:
        raise dimension_mismatch_error("x", g.dim, x_arr.shape[-1])
    result = 0.5 * (log_det_spd(g.precision) - g.dim * LOG_2PI
                    - mahalanobis_sq(x_arr, g.mean, g.precision))
    return float(result) if np.ndim(result) == 0 else result


def wishart_log_normalizer(scale: np.ndarray, v: float) -> float:
    """ln B(W, v) = -(v/2) ln|W| - (vO/2) ln 2 - ln Γ_O(v/2)."""
    o = scale.shape[-1]
    return float(-0.5 * v * log_det_spd(scale) - 0.5 * v * o * np.log(2.0)
                 - multigammaln(0.5 * v, o))


def log_wishart_kernel(ln_det: Union[float, np.ndarray], precision: np.ndarray,
                       w: WishartParams) -> Union[float, np.ndarray]:
    """
    ln W(Λ; W, v) written in its sufficient statistics (ln|Λ|, Λ).

    The density is linear in both, so passing E[ln|Λ|] and E[Λ] of another
    Wishart gives the expected log density under it.
    """
    o, v = w.dim, w.degrees_of_freedom
    trace_term = np.einsum('ij,...ji->...', spd_inverse(w.scale), np.asarray(precision, float))
    result = wishart_log_normalizer(w.scale, v) + 0.5 * (v - o - 1.0) * ln_det - 0.5 * trace_term
    return float(result) if np.ndim(result) == 0 else result


def dirichlet_log_normalizer(concentration: np.ndarray) -> float:
    """ln C(d) = ln Γ(Σ d) - Σ ln Γ(d_k), i.e. -ln B(d)."""
    concentration = np.asarray(concentration, dtype=float)
    return float(gammaln(np.sum(concentration)) - np.sum(gammaln(concentration)))


def log_dirichlet_kernel(ln_probs: np.ndarray, d: DirichletParams) -> Union[float, np.ndarray]:
    """ln Dir(p; d) from ln p; E[ln D] in place of ln p gives the expected log density."""
    result = dirichlet_log_normalizer(d.concentration) + np.sum(
        (d.concentration - 1.0) * np.asarray(ln_probs, dtype=float), axis=-1)
    return float(result) if np.ndim(result) == 0 else result


def categorical_neg_entropy(probs: np.ndarray) -> float:
    """Σ p ln p with 0 ln 0 = 0 (summed over every entry)."""
    return float(np.sum(xlogy(probs, probs)))
