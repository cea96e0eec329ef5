"""
Shared fixtures for the TGM test suite.
"""

from pathlib import Path

import numpy as np
import pytest

from src.core.domain.maze import load_maze

MAZE_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "mazes"


@pytest.fixture
def rng():
    """Deterministic generator for tests that draw noise."""
    return np.random.default_rng(12345)


@pytest.fixture
def maze_dir():
    return MAZE_DIR


@pytest.fixture
def bent_corridor():
    return load_maze(MAZE_DIR / "bent_corridor.maze")


@pytest.fixture
def room_2x2():
    return load_maze(MAZE_DIR / "room_2x2.maze")


@pytest.fixture
def room_3x3():
    return load_maze(MAZE_DIR / "room_3x3.maze")


@pytest.fixture
def two_blobs(rng):
    """Two tight, well separated clusters of 40 points each."""
    a = rng.normal([0.0, 0.0], 0.05, size=(40, 2))
    b = rng.normal([3.0, 3.0], 0.05, size=(40, 2))
    return np.vstack([a, b])


# Monte-Carlo helpers

MC_SAMPLES = 1_000_000


def random_spd(rng, dim, low=0.2, high=2.0):
    """Random SPD matrix with eigenvalues in [low, high]."""
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return (q * rng.uniform(low, high, size=dim)) @ q.T


def sample_wishart(rng, scale, v, size):
    """Λ ~ W(scale, v) by the Bartlett decomposition; returns Λ and C with Λ = C C^T."""
    dim = scale.shape[0]
    a = np.zeros((size, dim, dim))
    for i in range(dim):
        a[:, i, i] = np.sqrt(rng.chisquare(v - i, size))
        a[:, i, :i] = rng.standard_normal((size, i))
    factor = np.linalg.cholesky(scale) @ a
    return factor @ np.swapaxes(factor, -1, -2), factor


def sample_normal_wishart(rng, mean, beta, scale, v, size):
    """(μ, Λ, ln|Λ|) with Λ ~ W(scale, v) and μ | Λ ~ N(mean, (βΛ)^-1)."""
    lams, factor = sample_wishart(rng, scale, v, size)
    eps = rng.standard_normal((size, scale.shape[0]))
    # C^-T ε has covariance Λ^-1
    offset = np.linalg.solve(np.swapaxes(factor, -1, -2), eps[..., None])[..., 0]
    ln_dets = 2.0 * np.log(np.diagonal(factor, axis1=-2, axis2=-1)).sum(axis=-1)
    return mean + offset / np.sqrt(beta), lams, ln_dets


def assert_within_standard_errors(samples, expected, n_se=3.0, label=""):
    """Sample mean lies within n_se standard errors of the closed form."""
    values = np.asarray(samples, dtype=float)
    band = n_se * values.std(ddof=1) / np.sqrt(values.size) + 1e-9
    assert abs(values.mean() - expected) < band, (label, values.mean(), expected, band)
