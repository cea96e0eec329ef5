"""
Tests for the Gaussian, Wishart and Dirichlet building blocks.

Closed forms are checked against scipy.stats; expectation identities
against Monte-Carlo estimates.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from src.core.domain.distributions import (
    DirichletParams, GaussianParams, WishartParams,
    categorical_neg_entropy, dirichlet_log_normalizer, expect_ln_det_precision,
    expect_ln_dirichlet, expect_ln_dirichlet_all, expect_quadratic_form, gaussian_kl,
    log_det_spd, log_dirichlet_kernel, log_gaussian_pdf, log_wishart_kernel, mahalanobis_sq,
    spd_inverse,
)
from src.exceptions import InvalidInputError, NotPositiveDefiniteError

from tests.conftest import (
    MC_SAMPLES, assert_within_standard_errors, random_spd, sample_normal_wishart, sample_wishart,
)

SPD = np.array([[2.0, 0.3], [0.3, 1.0]])


class TestParameterObjects:
    """Validation performed when distribution parameters are built."""

    def test_gaussian_is_read_only(self):
        """Stored arrays cannot be mutated after construction."""
        g = GaussianParams(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            g.mean[0] = 1.0

    def test_gaussian_dimension_mismatch(self):
        """A 3-vector mean with a 2x2 precision is rejected."""
        with pytest.raises(InvalidInputError):
            GaussianParams(np.zeros(3), np.eye(2))

    def test_gaussian_rejects_indefinite_precision(self):
        """An indefinite precision raises NotPositiveDefiniteError."""
        with pytest.raises(NotPositiveDefiniteError):
            GaussianParams(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_gaussian_rejects_asymmetric_precision(self):
        with pytest.raises(NotPositiveDefiniteError):
            GaussianParams(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_wishart_degrees_of_freedom(self):
        """v must exceed O - 1."""
        with pytest.raises(InvalidInputError) as exc_info:
            WishartParams(np.eye(2), 1.0)
        assert "degrees of freedom" in str(exc_info.value)
        assert WishartParams(np.eye(2), 1.01).degrees_of_freedom == pytest.approx(1.01)

    def test_wishart_rejects_bad_scale(self):
        with pytest.raises(NotPositiveDefiniteError) as exc_info:
            WishartParams(-np.eye(2), 5.0)
        assert "Invalid Wishart" in str(exc_info.value)

    def test_dirichlet_requires_positive(self):
        with pytest.raises(InvalidInputError):
            DirichletParams(np.array([1.0, 0.0]))

    def test_non_finite_mean(self):
        with pytest.raises(InvalidInputError):
            GaussianParams(np.array([0.0, np.nan]), np.eye(2))


class TestMatrixKernels:
    """Cholesky-based determinants, inverses and quadratic forms."""

    def test_log_det(self):
        assert log_det_spd(SPD) == pytest.approx(np.log(np.linalg.det(SPD)))

    def test_log_det_stack(self):
        stack = np.stack([SPD, 2.0 * np.eye(2)])
        assert_allclose(log_det_spd(stack), [np.log(np.linalg.det(SPD)), 2.0 * np.log(2.0)])

    def test_inverse(self):
        assert_allclose(spd_inverse(SPD) @ SPD, np.eye(2), atol=1e-12)

    def test_mahalanobis_matches_direct_form(self, rng):
        x = rng.normal(size=(5, 2))
        mean = np.array([0.5, -1.0])
        direct = np.einsum('ni,ij,nj->n', x - mean, SPD, x - mean)
        assert_allclose(mahalanobis_sq(x, mean, SPD), direct)
        assert np.ndim(mahalanobis_sq(x[0], mean, SPD)) == 0


class TestLogDensities:
    """Closed-form log densities against scipy.stats."""

    def test_gaussian(self, rng):
        g = GaussianParams(np.array([1.0, -0.5]), SPD)
        x = rng.normal(size=(4, 2))
        expected = stats.multivariate_normal(g.mean, np.linalg.inv(SPD)).logpdf(x)
        assert_allclose(log_gaussian_pdf(x, g), expected, rtol=1e-10)
        assert log_gaussian_pdf(x[0], g) == pytest.approx(expected[0])

    def test_gaussian_dimension_mismatch(self):
        g = GaussianParams(np.zeros(2), np.eye(2))
        with pytest.raises(InvalidInputError):
            log_gaussian_pdf(np.zeros(3), g)

    def test_wishart(self):
        w = WishartParams(0.3 * SPD, 4.5)
        lam = np.array([[1.2, 0.1], [0.1, 0.7]])
        expected = stats.wishart(df=4.5, scale=0.3 * SPD).logpdf(lam)
        assert log_wishart_kernel(log_det_spd(lam), lam, w) == pytest.approx(expected, rel=1e-10)

    def test_dirichlet(self):
        d = DirichletParams(np.array([2.0, 3.0, 0.5]))
        p = np.array([0.2, 0.5, 0.3])
        assert log_dirichlet_kernel(np.log(p), d) == pytest.approx(
            stats.dirichlet(d.concentration).logpdf(p), rel=1e-10)

    def test_dirichlet_normalizer_uniform(self):
        """ln C(1, ..., 1) = ln Γ(K) = ln (K - 1)!"""
        assert dirichlet_log_normalizer(np.ones(4)) == pytest.approx(np.log(6.0))

    def test_wishart_kernel_at_expected_statistics(self):
        """Fed E[ln|Λ|] and E[Λ] of the same Wishart, the kernel is minus its entropy."""
        w = WishartParams(0.3 * SPD, 4.5)
        value = log_wishart_kernel(expect_ln_det_precision(w), 4.5 * w.scale, w)
        assert value == pytest.approx(-stats.wishart(df=4.5, scale=0.3 * SPD).entropy())

    def test_dirichlet_kernel_at_expected_statistics(self):
        d = DirichletParams(np.array([2.0, 3.0, 0.5]))
        value = log_dirichlet_kernel(expect_ln_dirichlet_all(d.concentration), d)
        assert value == pytest.approx(-stats.dirichlet(d.concentration).entropy())

    @pytest.mark.parametrize("mean, precision, half_width, n_grid", [
        (np.array([0.3]), np.array([[4.0]]), 6.0, 2001),
        (np.array([0.4, -0.2]), SPD, 9.0, 1201),
    ])
    def test_gaussian_integrates_to_one(self, mean, precision, half_width, n_grid):
        """Riemann sum of the density over a wide grid."""
        g = GaussianParams(mean, precision)
        axis = np.linspace(-half_width, half_width, n_grid)
        step = axis[1] - axis[0]
        mesh = np.meshgrid(*[axis + m for m in mean])
        grid = np.column_stack([c.ravel() for c in mesh])
        mass = np.exp(log_gaussian_pdf(grid, g)).sum() * step ** g.dim
        assert mass == pytest.approx(1.0, abs=1e-6)


@pytest.mark.slow
class TestMonteCarloExpectations:
    """Closed forms against 10^6-sample means over 20 random parameter draws."""

    SEEDS = range(20)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_ln_det_precision(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        w = WishartParams(random_spd(rng, dim), dim - 1 + rng.uniform(0.5, 5.0))
        _, factor = sample_wishart(rng, w.scale, w.degrees_of_freedom, MC_SAMPLES)
        values = 2.0 * np.log(np.diagonal(factor, axis1=-2, axis2=-1)).sum(axis=-1)
        assert_within_standard_errors(values, expect_ln_det_precision(w))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_quadratic_form(self, seed):
        """E[(x-μ)^T Λ (x-μ)] under a Normal-Wishart."""
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        w = WishartParams(random_spd(rng, dim), dim - 1 + rng.uniform(0.5, 5.0))
        mean, beta = rng.normal(size=dim), rng.uniform(0.5, 3.0)
        x = rng.normal(size=dim)
        mus, lams, _ = sample_normal_wishart(rng, mean, beta, w.scale, w.degrees_of_freedom,
                                             MC_SAMPLES)
        diff = x - mus
        values = np.einsum('ni,nij,nj->n', diff, lams, diff)
        assert_within_standard_errors(values, expect_quadratic_form(x, mean, beta, w))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_ln_dirichlet(self, seed):
        rng = np.random.default_rng(seed)
        d = DirichletParams(rng.uniform(0.5, 5.0, size=int(rng.integers(2, 6))))
        k = int(rng.integers(d.size))
        values = np.log(rng.dirichlet(d.concentration, MC_SAMPLES)[:, k])
        assert_within_standard_errors(values, expect_ln_dirichlet(d, k))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gaussian_kl(self, seed):
        """KL(p || q) = E_p[ln p(x) - ln q(x)]."""
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        p = GaussianParams(rng.normal(size=dim), random_spd(rng, dim))
        q = GaussianParams(rng.normal(size=dim), random_spd(rng, dim))
        x = rng.multivariate_normal(p.mean, p.covariance, size=MC_SAMPLES)
        values = log_gaussian_pdf(x, p) - log_gaussian_pdf(x, q)
        assert_within_standard_errors(values, gaussian_kl(p, q))


class TestExpectations:
    """Expectation identities used by the free-energy terms."""

    def test_ln_det_precision_one_dimensional(self):
        """For O = 1 the identity reduces to ln 2 + ln w + ψ(v/2)."""
        from scipy.special import digamma
        w = WishartParams(np.array([[0.4]]), 3.0)
        assert expect_ln_det_precision(w) == pytest.approx(
            np.log(2.0) + np.log(0.4) + digamma(1.5))

    def test_quadratic_form_closed_form(self):
        w = WishartParams(np.eye(2), 3.0)
        x = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert_allclose(expect_quadratic_form(x, np.zeros(2), 2.0, w), [1.0 + 3.0, 1.0])

    def test_quadratic_form_rejects_bad_beta(self):
        with pytest.raises(InvalidInputError):
            expect_quadratic_form(np.zeros(2), np.zeros(2), 0.0, WishartParams(np.eye(2), 3.0))

    def test_ln_dirichlet(self):
        from scipy.special import digamma
        d = DirichletParams(np.array([1.0, 2.0, 3.0]))
        assert expect_ln_dirichlet(d, 1) == pytest.approx(digamma(2.0) - digamma(6.0))
        assert_allclose(expect_ln_dirichlet_all(d.concentration),
                        digamma(d.concentration) - digamma(6.0))

    def test_ln_dirichlet_index(self):
        d = DirichletParams(np.ones(3))
        with pytest.raises(InvalidInputError):
            expect_ln_dirichlet(d, 3)

    def test_neg_entropy_zero_convention(self):
        assert categorical_neg_entropy(np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.0
        assert categorical_neg_entropy(np.array([0.5, 0.5])) == pytest.approx(-np.log(2.0))


class TestGaussianKL:
    """KL divergence between Gaussians."""

    def test_identical_is_zero(self):
        g = GaussianParams(np.array([1.0, 2.0]), SPD)
        assert gaussian_kl(g, g) == pytest.approx(0.0, abs=1e-12)

    def test_one_dimensional_value(self):
        """KL(N(0,1) || N(1,2)) = ln(2) / 2."""
        p = GaussianParams(np.array([0.0]), np.array([[1.0]]))
        q = GaussianParams(np.array([1.0]), np.array([[0.5]]))
        assert gaussian_kl(p, q) == pytest.approx(0.5 * np.log(2.0))

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            gaussian_kl(GaussianParams(np.zeros(1), np.eye(1)),
                        GaussianParams(np.zeros(2), np.eye(2)))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-2.0, 2.0), min_size=8, max_size=8))
    def test_non_negative(self, values):
        a = np.array(values[:4]).reshape(2, 2)
        b = np.array(values[4:]).reshape(2, 2)
        p = GaussianParams(np.array(values[:2]), a @ a.T + 0.5 * np.eye(2))
        q = GaussianParams(np.array(values[2:4]), b @ b.T + 0.5 * np.eye(2))
        assert gaussian_kl(p, q) >= 0.0
