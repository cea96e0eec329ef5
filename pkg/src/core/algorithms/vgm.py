"""
Variational Gaussian mixture with empirical priors.

Each component carries a Normal-Wishart over its mean and precision and the
mixing weights carry a Dirichlet. Parameters live in three tiers:

    prior      (d, m, β, W, v)
    empirical  prior + statistics of the points about to be forgotten
    posterior  empirical + statistics of the points that are kept

Because the updates are conjugate, absorbing forgotten data into the
empirical tier and then discarding it gives exactly the posterior a joint
update over all data would give (for fixed responsibilities).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Callable, Dict, List, Optional, Sequence
import logging

import numpy as np
from scipy.special import logsumexp

from src.core.algorithms.meanshift import ClusterAssignment
from src.core.domain.distributions import (
    LOG_2PI, DirichletParams, GaussianParams, WishartParams,
    categorical_neg_entropy, expect_ln_det_precision, expect_ln_dirichlet_all,
    expect_quadratic_form, log_dirichlet_kernel, log_wishart_kernel, spd_inverse,
)
from src.exceptions import ConfigurationError, InvalidInputError, dimension_mismatch_error
from src.validation import as_finite_points, as_spd_matrix, require_positive

logger = logging.getLogger(__name__)


@dataclass
class VGMConfig:
    """Configuration for variational mixture fitting."""

    # Maximum coordinate-ascent sweeps per fit
    max_sweeps: int = 50

    # Stop when |ΔVFE| < tol_per_point * N
    tol_per_point: float = 1e-6

    # Components with less responsibility mass are treated as empty
    mass_epsilon: float = 1e-10

    # Singular cluster covariances get ridge_scale * trace(data covariance) on the diagonal
    ridge_scale: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.max_sweeps < 1:
            raise ConfigurationError("max_sweeps must be >= 1",
                                     parameter='max_sweeps', value=self.max_sweeps)
        for name in ('tol_per_point', 'mass_epsilon', 'ridge_scale'):
            require_positive(getattr(self, name), name)


@dataclass(frozen=True, eq=False)
class ComponentParams:
    """Normal-Wishart parameters (m, β, W, v) of one component."""

    m: np.ndarray
    beta: float
    W: np.ndarray
    v: float

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        W = as_spd_matrix(self.W, "W", dim=m.shape[0])
        if not self.beta > 0:
            raise InvalidInputError("beta must be positive", input_value=self.beta)
        if not self.v > m.shape[0] - 1:
            raise InvalidInputError("v must exceed dimension - 1", input_value=self.v)
        object.__setattr__(self, 'm', m)
        object.__setattr__(self, 'W', W)
        object.__setattr__(self, 'beta', float(self.beta))
        object.__setattr__(self, 'v', float(self.v))

    @property
    def wishart(self) -> WishartParams:
        return WishartParams(self.W, self.v)


@dataclass(frozen=True, eq=False)
class MixtureTier:
    """One parameter tier for all K components, stored as stacked arrays."""

    d: np.ndarray      # (K,)
    m: np.ndarray      # (K, O)
    beta: np.ndarray   # (K,)
    W: np.ndarray      # (K, O, O)
    v: np.ndarray      # (K,)

    def __post_init__(self):
        k, o = np.shape(self.m) if np.ndim(self.m) == 2 else (0, 0)
        for name, shape in (('d', (k,)), ('beta', (k,)), ('v', (k,)), ('W', (k, o, o))):
            if np.shape(getattr(self, name)) != shape:
                raise dimension_mismatch_error(f"tier.{name}", shape, np.shape(getattr(self, name)))
        if k and (np.any(self.d <= 0) or np.any(self.beta <= 0) or np.any(self.v <= o - 1)):
            raise InvalidInputError("tier parameters violate d > 0, beta > 0, v > O - 1")

    @classmethod
    def empty(cls, dim: int) -> 'MixtureTier':
        return cls(d=np.zeros(0), m=np.zeros((0, dim)), beta=np.zeros(0),
                   W=np.zeros((0, dim, dim)), v=np.zeros(0))

    @property
    def n_components(self) -> int:
        return self.m.shape[0]

    @property
    def dim(self) -> int:
        return self.m.shape[1]

    def component(self, k: int) -> ComponentParams:
        return ComponentParams(m=self.m[k], beta=self.beta[k], W=self.W[k], v=self.v[k])

    def components(self) -> List[ComponentParams]:
        return [self.component(k) for k in range(self.n_components)]

    def select(self, indices: Sequence[int]) -> 'MixtureTier':
        idx = np.asarray(indices, dtype=int)
        return MixtureTier(d=self.d[idx], m=self.m[idx], beta=self.beta[idx],
                           W=self.W[idx], v=self.v[idx])

    def concat(self, other: 'MixtureTier') -> 'MixtureTier':
        return MixtureTier(d=np.concatenate([self.d, other.d]),
                           m=np.concatenate([self.m, other.m]),
                           beta=np.concatenate([self.beta, other.beta]),
                           W=np.concatenate([self.W, other.W]),
                           v=np.concatenate([self.v, other.v]))

    def wishart(self, k: int) -> WishartParams:
        return WishartParams(self.W[k], self.v[k])

    def dirichlet(self) -> DirichletParams:
        return DirichletParams(self.d)

    def ln_lambda_tilde(self) -> np.ndarray:
        """E[ln|Λ_k|] for every component."""
        return np.array([expect_ln_det_precision(self.wishart(k))
                         for k in range(self.n_components)])

    def expected_quadratic(self, k: int, points: np.ndarray) -> np.ndarray:
        """E[(x - μ_k)^T Λ_k (x - μ_k)] for each row of `points`."""
        return np.atleast_1d(expect_quadratic_form(points, self.m[k], self.beta[k],
                                                   self.wishart(k)))


@dataclass(frozen=True, eq=False)
class MixtureState:
    """Three parameter tiers plus the N x K responsibility matrix."""

    prior: MixtureTier
    empirical: MixtureTier
    posterior: MixtureTier
    responsibilities: np.ndarray

    def __post_init__(self):
        k = self.prior.n_components
        if self.empirical.n_components != k or self.posterior.n_components != k:
            raise dimension_mismatch_error("mixture tiers", k,
                                           (self.empirical.n_components,
                                            self.posterior.n_components))
        r = np.asarray(self.responsibilities, dtype=float)
        if r.ndim != 2 or r.shape[1] != k:
            raise dimension_mismatch_error("responsibilities", f"(N, {k})", r.shape)
        object.__setattr__(self, 'responsibilities', r)

    @classmethod
    def empty(cls, dim: int, n_points: int = 0) -> 'MixtureState':
        tier = MixtureTier.empty(dim)
        return cls(prior=tier, empirical=tier, posterior=tier,
                   responsibilities=np.zeros((n_points, 0)))

    @property
    def n_components(self) -> int:
        return self.prior.n_components

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def n_points(self) -> int:
        return self.responsibilities.shape[0]

    def masses(self) -> np.ndarray:
        """Responsibility mass N_k over the stored points."""
        return self.responsibilities.sum(axis=0)

    def active_mask(self, mass_epsilon: float = 1e-10) -> np.ndarray:
        return self.masses() > mass_epsilon

    def point_estimates(self) -> List[GaussianParams]:
        """Plug-in Gaussians: mean m̂_k and precision v̂_k Ŵ_k."""
        post = self.posterior
        return [GaussianParams(post.m[k], post.v[k] * post.W[k])
                for k in range(self.n_components)]

    def with_responsibilities(self, responsibilities: np.ndarray) -> 'MixtureState':
        return replace(self, responsibilities=responsibilities)

    def select_components(self, indices: Sequence[int]) -> 'MixtureState':
        """Keep only the listed components (in the given order).

        Rows are renormalized; a row left with no mass becomes uniform.
        """
        idx = np.asarray(indices, dtype=int)
        r = self.responsibilities[:, idx]
        if idx.size:
            total = r.sum(axis=1, keepdims=True)
            empty = total[:, 0] <= 0
            r = np.where(total > 0, r / np.where(total > 0, total, 1.0), 1.0 / idx.size)
            if np.any(empty):
                logger.debug("%d rows lost all mass on component removal", int(empty.sum()))
        return MixtureState(prior=self.prior.select(idx), empirical=self.empirical.select(idx),
                            posterior=self.posterior.select(idx), responsibilities=r)

    def select_points(self, indices: Sequence[int]) -> 'MixtureState':
        return replace(self, responsibilities=self.responsibilities[np.asarray(indices, dtype=int)])

    def append_components(self, tier: MixtureTier, responsibilities: np.ndarray) -> 'MixtureState':
        """Grow by `tier` (used for all three tiers) with a new full responsibility matrix."""
        return MixtureState(prior=self.prior.concat(tier), empirical=self.empirical.concat(tier),
                            posterior=self.posterior.concat(tier),
                            responsibilities=responsibilities)


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Responsibility-weighted counts, means and covariances per component."""

    N: np.ndarray        # (K,)
    xbar: np.ndarray     # (K, O); zero where undefined
    S: np.ndarray        # (K, O, O); zero where undefined
    defined: np.ndarray  # (K,) bool, N_k >= mass_epsilon

    @property
    def n_components(self) -> int:
        return self.N.shape[0]


@dataclass(frozen=True)
class VFETerms:
    """The nine expectation terms of the variational free energy."""

    ln_q_d: float
    ln_q_mu: float
    ln_q_lambda: float
    ln_q_z: float
    ln_p_d: float
    ln_p_mu: float
    ln_p_lambda: float
    ln_p_z: float
    ln_p_x: float

    @property
    def total(self) -> float:
        return ((self.ln_q_d + self.ln_q_mu + self.ln_q_lambda + self.ln_q_z)
                - (self.ln_p_d + self.ln_p_mu + self.ln_p_lambda + self.ln_p_z + self.ln_p_x))

    def as_dict(self) -> Dict[str, float]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out['total'] = self.total
        return out


# Prior construction

def data_ridge(points: np.ndarray, ridge_scale: float = 1e-6) -> float:
    """Ridge ε = ridge_scale * trace of the data covariance (ridge_scale if that is zero)."""
    if points.shape[0] < 2:
        return ridge_scale
    trace = float(np.trace(np.atleast_2d(np.cov(points, rowvar=False, bias=True))))
    return ridge_scale * trace if trace > 0 else ridge_scale


def build_prior_tier(clusters: Sequence[np.ndarray], n_components: int,
                     ridge: float) -> MixtureTier:
    """
    Prior tier for the given clusters.

    d_k = β_k = 2K, v_k = 2K + O - 0.99, m_k = cluster mean and
    W_k = Λ̄_k / v_k where Λ̄_k inverts the cluster covariance. A singular
    covariance gets ridge * I before inversion.
    """
    if not clusters:
        raise InvalidInputError("at least one cluster is required")
    dim = clusters[0].shape[1]
    k_total = float(n_components)
    v_k = 2.0 * k_total + dim - 0.99

    means, scales = [], []
    for members in clusters:
        mean = members.mean(axis=0)
        diff = members - mean
        cov = diff.T @ diff / members.shape[0]
        if members.shape[0] < dim + 1 or np.min(np.linalg.eigvalsh(cov)) <= ridge:
            cov = cov + ridge * np.eye(dim)
        means.append(mean)
        scales.append(spd_inverse(cov) / v_k)

    n = len(clusters)
    return MixtureTier(d=np.full(n, 2.0 * k_total), m=np.asarray(means),
                       beta=np.full(n, 2.0 * k_total), W=np.asarray(scales),
                       v=np.full(n, v_k))


def init_prior_from_clusters(assignment: ClusterAssignment, points,
                             cfg: Optional[VGMConfig] = None) -> MixtureState:
    """
    Build a MixtureState from a mean-shift assignment.

    All three tiers start equal to the prior and responsibilities start at
    the one-hot assignment.
    """
    cfg = cfg or VGMConfig()
    points = as_finite_points(points)
    if assignment.n_points != points.shape[0]:
        raise dimension_mismatch_error("assignment", points.shape[0], assignment.n_points)
    ridge = data_ridge(points, cfg.ridge_scale)
    clusters = [points[assignment.members(k)] for k in range(assignment.n_clusters)]
    tier = build_prior_tier(clusters, assignment.n_clusters, ridge)
    return MixtureState(prior=tier, empirical=tier, posterior=tier,
                        responsibilities=assignment.one_hot)


# Sufficient statistics and conjugate updates

def compute_stats(points, responsibilities, mass_epsilon: float = 1e-10) -> SufficientStats:
    """
    N_k, x̄_k and S_k over a subset; components with N_k < mass_epsilon are
    flagged undefined and carry zeros.
    """
    r = np.asarray(responsibilities, dtype=float)
    if r.ndim != 2:
        raise dimension_mismatch_error("responsibilities", "(n, K)", r.shape)
    x = np.asarray(points, dtype=float)
    if x.size == 0:
        x = x.reshape(0, x.shape[-1] if x.ndim == 2 else 0)
    if x.shape[0] != r.shape[0]:
        raise dimension_mismatch_error("points vs responsibilities", r.shape[0], x.shape[0])

    k, o = r.shape[1], x.shape[1]
    N = r.sum(axis=0)
    defined = N >= mass_epsilon
    xbar = np.zeros((k, o))
    S = np.zeros((k, o, o))
    if np.any(defined):
        safe = np.where(defined, N, 1.0)
        xbar = (r.T @ x) / safe[:, None]
        xbar[~defined] = 0.0
        diff = x[None, :, :] - xbar[:, None, :]             # (K, n, O)
        S = np.einsum('nk,kni,knj->kij', r, diff, diff) / safe[:, None, None]
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        S[~defined] = 0.0
    return SufficientStats(N=N, xbar=xbar, S=S, defined=defined)


def _conjugate_update(tier: MixtureTier, stats: SufficientStats) -> MixtureTier:
    """Add statistics to a tier; undefined components are copied unchanged."""
    if stats.n_components != tier.n_components:
        raise dimension_mismatch_error("stats", tier.n_components, stats.n_components)
    if not np.any(stats.defined):
        return tier

    d, beta, v = tier.d.copy(), tier.beta.copy(), tier.v.copy()
    m, W = tier.m.copy(), tier.W.copy()
    for k in np.flatnonzero(stats.defined):
        n_k = stats.N[k]
        diff = stats.xbar[k] - tier.m[k]
        w_inv = (spd_inverse(tier.W[k]) + n_k * stats.S[k]
                 + (tier.beta[k] * n_k / (tier.beta[k] + n_k)) * np.outer(diff, diff))
        m[k] = (tier.beta[k] * tier.m[k] + n_k * stats.xbar[k]) / (tier.beta[k] + n_k)
        W[k] = spd_inverse(w_inv)
        d[k] += n_k
        beta[k] += n_k
        v[k] += n_k
    return MixtureTier(d=d, m=m, beta=beta, W=W, v=v)


def update_empirical_prior(state: MixtureState, forget_stats: SufficientStats) -> MixtureState:
    """Empirical tier = prior tier updated with the forget-set statistics."""
    return replace(state, empirical=_conjugate_update(state.prior, forget_stats))


def update_posterior(state: MixtureState, keep_stats: SufficientStats) -> MixtureState:
    """Posterior tier = empirical tier updated with the keep-set statistics."""
    return replace(state, posterior=_conjugate_update(state.empirical, keep_stats))


def commit_empirical_prior(state: MixtureState) -> MixtureState:
    """Make the empirical tier the new prior (after its data has been dropped)."""
    return replace(state, prior=state.empirical)


# Responsibilities

def log_rho(tier: MixtureTier, points: np.ndarray) -> np.ndarray:
    """
    ln ρ_nk = E[ln D_k] - (O/2) ln 2π + ½ E[ln|Λ_k|] - ½ E[(x_n - μ_k)^T Λ_k (x_n - μ_k)].
    """
    n, k = points.shape[0], tier.n_components
    if k == 0:
        return np.zeros((n, 0))
    ln_d = expect_ln_dirichlet_all(tier.d)
    ln_lam = tier.ln_lambda_tilde()
    quad = np.column_stack([tier.expected_quadratic(j, points) for j in range(k)])
    return ln_d[None, :] - 0.5 * tier.dim * LOG_2PI + 0.5 * ln_lam[None, :] - 0.5 * quad


def predict_responsibilities(state: MixtureState, points) -> np.ndarray:
    """Responsibilities of arbitrary points under the posterior, without touching state."""
    points = as_finite_points(points, dim=state.dim, allow_empty=True)
    if state.n_components == 0:
        return np.zeros((points.shape[0], 0))
    lr = log_rho(state.posterior, points)
    return np.exp(lr - logsumexp(lr, axis=1, keepdims=True))


def update_responsibilities(state: MixtureState, points) -> MixtureState:
    """Recompute r̂ for all N points against the current posterior."""
    return state.with_responsibilities(predict_responsibilities(state, points))


# Variational free energy, term by term

def _check_points(state: MixtureState, points) -> np.ndarray:
    points = as_finite_points(points, dim=state.dim, allow_empty=True)
    if points.shape[0] != state.n_points:
        raise dimension_mismatch_error("points vs responsibilities",
                                       state.n_points, points.shape[0])
    return points


def expect_ln_q_d(state: MixtureState) -> float:
    post = state.posterior
    if post.n_components == 0:
        return 0.0
    return log_dirichlet_kernel(expect_ln_dirichlet_all(post.d), post.dirichlet())


def _expect_ln_mean_density(state: MixtureState, tier: MixtureTier) -> float:
    """Σ_k E_q[ln N(μ_k; m_k, (β_k Λ_k)^-1)] for the mean parameters of `tier`."""
    post, o = state.posterior, state.dim
    ln_lam = post.ln_lambda_tilde()
    total = 0.0
    for k in range(post.n_components):
        quad = expect_quadratic_form(tier.m[k], post.m[k], post.beta[k], post.wishart(k))
        total += 0.5 * (o * np.log(tier.beta[k] / (2.0 * np.pi)) + ln_lam[k]
                        - tier.beta[k] * quad)
    return float(total)


def _expect_ln_precision_density(state: MixtureState, tier: MixtureTier) -> float:
    """Σ_k E_q[ln W(Λ_k; W_k, v_k)] for the Wishart parameters of `tier`."""
    post = state.posterior
    ln_lam = post.ln_lambda_tilde()
    return float(sum(log_wishart_kernel(ln_lam[k], post.v[k] * post.W[k], tier.wishart(k))
                     for k in range(post.n_components)))


def expect_ln_q_mu(state: MixtureState) -> float:
    return _expect_ln_mean_density(state, state.posterior)


def expect_ln_q_lambda(state: MixtureState) -> float:
    return _expect_ln_precision_density(state, state.posterior)


def expect_ln_q_z(state: MixtureState) -> float:
    return categorical_neg_entropy(state.responsibilities)


def expect_ln_p_d(state: MixtureState) -> float:
    if state.n_components == 0:
        return 0.0
    return log_dirichlet_kernel(expect_ln_dirichlet_all(state.posterior.d), state.prior.dirichlet())


def expect_ln_p_mu(state: MixtureState) -> float:
    return _expect_ln_mean_density(state, state.prior)


def expect_ln_p_lambda(state: MixtureState) -> float:
    return _expect_ln_precision_density(state, state.prior)


def expect_ln_p_z(state: MixtureState) -> float:
    if state.n_components == 0:
        return 0.0
    return float(np.sum(state.masses() * expect_ln_dirichlet_all(state.posterior.d)))


def expect_ln_p_x(state: MixtureState, points) -> float:
    points = _check_points(state, points)
    post, o = state.posterior, state.dim
    if post.n_components == 0 or points.shape[0] == 0:
        return 0.0
    ln_lam = post.ln_lambda_tilde()
    quad = np.column_stack([post.expected_quadratic(k, points)
                            for k in range(post.n_components)])
    per_point = ln_lam[None, :] - quad - o * LOG_2PI
    return float(0.5 * np.sum(state.responsibilities * per_point))


def vfe_terms(state: MixtureState, points) -> VFETerms:
    """All nine terms; P-terms are taken against the prior tier."""
    points = _check_points(state, points)
    return VFETerms(
        ln_q_d=expect_ln_q_d(state),
        ln_q_mu=expect_ln_q_mu(state),
        ln_q_lambda=expect_ln_q_lambda(state),
        ln_q_z=expect_ln_q_z(state),
        ln_p_d=expect_ln_p_d(state),
        ln_p_mu=expect_ln_p_mu(state),
        ln_p_lambda=expect_ln_p_lambda(state),
        ln_p_z=expect_ln_p_z(state),
        ln_p_x=expect_ln_p_x(state, points),
    )


def compute_vfe(state: MixtureState, points) -> float:
    """Variational free energy (negative ELBO) of the state on all N points."""
    return vfe_terms(state, points).total


# Coordinate ascent

def _split_indices(n: int, forget_indices, keep_indices):
    forget = np.asarray([] if forget_indices is None else forget_indices, dtype=int)
    if keep_indices is None:
        keep = np.setdiff1d(np.arange(n), forget)
    else:
        keep = np.asarray(keep_indices, dtype=int)
    both = np.concatenate([forget, keep])
    if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
        raise InvalidInputError("forget/keep indices must partition the points",
                                n_points=n, n_forget=forget.size, n_keep=keep.size)
    return forget, keep


def fit(state: MixtureState, points, forget_indices=None, keep_indices=None,
        sweeps: Optional[int] = None, cfg: Optional[VGMConfig] = None,
        progress_callback: Optional[Callable[[int, float], None]] = None) -> MixtureState:
    """
    Coordinate ascent: stats -> empirical -> posterior -> responsibilities.

    Args:
        state: Current state; its responsibilities index `points`
        points: All N points (forget set N' and keep set N'' together)
        forget_indices: N' (default empty)
        keep_indices: N'' (default: everything not in N')
        sweeps: Maximum sweeps (default cfg.max_sweeps)
        cfg: Tolerances
        progress_callback: Called as callback(sweep, vfe) after every sweep

    Returns:
        The updated MixtureState
    """
    cfg = cfg or VGMConfig()
    sweeps = cfg.max_sweeps if sweeps is None else sweeps
    if sweeps < 1:
        raise InvalidInputError("fit needs at least one sweep", input_value=sweeps)
    points = _check_points(state, points)
    if state.n_components == 0:
        return state
    forget, keep = _split_indices(points.shape[0], forget_indices, keep_indices)
    tol = cfg.tol_per_point * max(points.shape[0], 1)

    previous = None
    for sweep in range(1, sweeps + 1):
        r = state.responsibilities
        state = update_empirical_prior(
            state, compute_stats(points[forget], r[forget], cfg.mass_epsilon))
        state = update_posterior(
            state, compute_stats(points[keep], r[keep], cfg.mass_epsilon))
        state = update_responsibilities(state, points)
        vfe = compute_vfe(state, points)
        logger.debug("vgm sweep %d: vfe=%.10g", sweep, vfe)
        if progress_callback:
            progress_callback(sweep, vfe)
        if previous is not None and abs(previous - vfe) < tol:
            break
        previous = vfe

    return state
