"""
Tests for flat-kernel mean-shift clustering.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from src.core.algorithms.meanshift import MeanShiftConfig, mean_shift
from src.exceptions import ConfigurationError, InvalidInputError


class TestMeanShiftConfig:
    """Defaults and validation."""

    def test_derived_defaults(self):
        cfg = MeanShiftConfig(bandwidth=0.4)
        assert cfg.merge_radius == pytest.approx(0.1)
        assert cfg.convergence_tol == pytest.approx(0.4e-6)

    @pytest.mark.parametrize("bandwidth", [0.0, -1.0, float('nan')])
    def test_invalid_bandwidth(self, bandwidth):
        with pytest.raises(ConfigurationError) as exc_info:
            MeanShiftConfig(bandwidth=bandwidth)
        assert exc_info.value.details['parameter'] == 'bandwidth'

    def test_invalid_iterations(self):
        with pytest.raises(ConfigurationError):
            MeanShiftConfig(max_iterations=0)

    @pytest.mark.parametrize("name", ['convergence_tol', 'merge_radius'])
    def test_derived_tolerances_must_be_positive(self, name):
        with pytest.raises(ConfigurationError, match=f"{name} must be positive"):
            MeanShiftConfig(bandwidth=0.5, **{name: -1.0})


class TestMeanShift:
    """Clustering behaviour."""

    def test_two_blobs(self, two_blobs):
        result = mean_shift(two_blobs, MeanShiftConfig(bandwidth=0.5))
        assert result.n_clusters == 2
        assert result.n_points == 80
        # Cluster 0 is the one containing the first input point
        assert_allclose(result.centroids[0], two_blobs[:40].mean(axis=0), atol=1e-6)
        assert_allclose(result.centroids[1], two_blobs[40:].mean(axis=0), atol=1e-6)
        assert np.all(result.labels[:40] == 0)
        assert np.all(result.labels[40:] == 1)

    def test_single_point(self):
        result = mean_shift([[1.5, -2.0]])
        assert result.n_clusters == 1
        assert_allclose(result.centroids, [[1.5, -2.0]])

    def test_identical_points(self):
        result = mean_shift(np.ones((10, 2)))
        assert result.n_clusters == 1
        assert result.sizes().tolist() == [10]

    def test_far_apart_points_stay_separate(self):
        points = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
        result = mean_shift(points, MeanShiftConfig(bandwidth=1.0))
        assert result.n_clusters == 3
        assert result.labels.tolist() == [0, 1, 2]

    def test_one_hot_and_members(self, two_blobs):
        result = mean_shift(two_blobs)
        assert_allclose(result.one_hot.sum(axis=1), 1.0)
        assert result.members(1).tolist() == list(range(40, 80))

    def test_cluster_count_invariant_to_order(self, two_blobs, rng):
        shuffled = two_blobs[rng.permutation(len(two_blobs))]
        assert mean_shift(shuffled).n_clusters == mean_shift(two_blobs).n_clusters

    @pytest.mark.parametrize("points", [
        np.zeros((0, 2)),
        [[0.0, 1.0], [1.0]],
        [[0.0, np.inf]],
    ])
    def test_invalid_points(self, points):
        with pytest.raises(InvalidInputError):
            mean_shift(points)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=30))
    def test_labels_are_valid(self, pts):
        result = mean_shift(np.array(pts))
        assert result.n_points == len(pts)
        assert set(result.labels.tolist()) == set(range(result.n_clusters))
        assert result.sizes().sum() == len(pts)
