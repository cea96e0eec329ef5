"""
Tests for the Dirichlet transition tensor.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from src.core.algorithms.transition import (
    TransitionBatch, TransitionSample, TransitionTensor,
    absorb_forgotten, compute_posterior, expected_transition, expected_transitions,
    outer_mass, resize, total_variation,
)
from src.exceptions import InvalidInputError


def _one_hot(k, n):
    out = np.zeros(n)
    out[k] = 1.0
    return out


class TestSamples:

    def test_sample_validation(self):
        with pytest.raises(InvalidInputError):
            TransitionSample(np.array([0.5, 0.6]), np.array([1.0, 0.0]), 0)
        with pytest.raises(InvalidInputError):
            TransitionSample(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0]), 0)

    def test_batch_from_samples(self):
        samples = [TransitionSample(_one_hot(0, 3), _one_hot(1, 3), 2)]
        batch = TransitionBatch.from_samples(samples, 3)
        assert len(batch) == 1
        assert batch.actions.tolist() == [2]
        assert len(TransitionBatch.from_samples([], 3)) == 0

    def test_batch_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            TransitionBatch(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(3))


class TestCounts:
    """Outer-product accumulation."""

    def test_one_hot_sample_increments_single_entry(self):
        """Leaving state 0 for state 2 under action 1 adds to b[1][2, 0]."""
        t = TransitionTensor.uniform(2, 3)
        out = compute_posterior(t, [TransitionSample(_one_hot(0, 3), _one_hot(2, 3), 1)])
        expected = np.ones((2, 3, 3))
        expected[1, 2, 0] = 2.0
        assert_array_equal(out.posterior, expected)

    def test_soft_outer_product(self):
        r0, r1 = np.array([0.25, 0.75]), np.array([0.5, 0.5])
        mass = outer_mass([TransitionSample(r0, r1, 0)], 1, 2)
        assert_allclose(mass[0], np.outer(r1, r0))
        assert mass.sum() == pytest.approx(1.0)

    def test_bad_action(self):
        with pytest.raises(InvalidInputError):
            outer_mass([TransitionSample(_one_hot(0, 2), _one_hot(1, 2), 5)], 2, 2)

    def test_state_count_mismatch(self):
        with pytest.raises(InvalidInputError):
            outer_mass([TransitionSample(_one_hot(0, 3), _one_hot(1, 3), 0)], 1, 2)

    def test_tiers(self):
        """Forget then keep: empirical holds the forgotten mass, posterior holds both."""
        t = TransitionTensor.uniform(1, 2)
        forget = [TransitionSample(_one_hot(0, 2), _one_hot(1, 2), 0)]
        keep = [TransitionSample(_one_hot(1, 2), _one_hot(0, 2), 0)]
        t = compute_posterior(absorb_forgotten(t, forget), keep)
        assert_array_equal(t.prior[0], [[1, 1], [1, 1]])
        assert_array_equal(t.empirical[0], [[1, 1], [2, 1]])
        assert_array_equal(t.posterior[0], [[1, 2], [2, 1]])
        committed = t.commit_empirical()
        assert_array_equal(committed.prior, t.empirical)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 2**31 - 1))
    def test_split_equals_joint(self, n, seed):
        """Absorbing part of the samples first gives the same posterior as one pass."""
        rng = np.random.default_rng(seed)
        batch = TransitionBatch(rng.dirichlet(np.ones(3), n), rng.dirichlet(np.ones(3), n),
                                rng.integers(0, 2, n))
        cut = n // 2
        first = TransitionBatch(batch.r0[:cut], batch.r1[:cut], batch.actions[:cut])
        rest = TransitionBatch(batch.r0[cut:], batch.r1[cut:], batch.actions[cut:])
        t = TransitionTensor.uniform(2, 3)
        split = compute_posterior(absorb_forgotten(t, first), rest)
        joint = compute_posterior(t, batch)
        assert_allclose(split.posterior, joint.posterior, rtol=1e-12)
        # Every sample adds unit mass
        assert split.posterior.sum() == pytest.approx(2 * 9 + n)


class TestExpectedTransitions:

    def test_uniform(self):
        assert_allclose(expected_transition(TransitionTensor.uniform(2, 4), 0), 0.25)

    def test_columns_sum_to_one(self, rng):
        t = TransitionTensor.uniform(3, 4)
        t = compute_posterior(t, TransitionBatch(rng.dirichlet(np.ones(4), 50),
                                                 rng.dirichlet(np.ones(4), 50),
                                                 rng.integers(0, 3, 50)))
        matrices = expected_transitions(t)
        assert_allclose(matrices.sum(axis=1), 1.0)
        assert_allclose(matrices[1], expected_transition(t, 1))

    def test_action_index(self):
        with pytest.raises(InvalidInputError):
            expected_transition(TransitionTensor.uniform(2, 2), 2)

    def test_empty(self):
        assert expected_transitions(TransitionTensor.uniform(5, 0)).shape == (5, 0, 0)


class TestResize:
    """Re-indexing after components are added or removed."""

    def _tensor(self):
        counts = np.arange(1.0, 1.0 + 2 * 9).reshape(2, 3, 3)
        return TransitionTensor(counts, counts + 1.0, counts + 2.0)

    def test_grow(self):
        t = resize(self._tensor(), 4, np.arange(3))
        assert t.n_states == 4
        assert_array_equal(t.posterior[:, :3, :3], self._tensor().posterior)
        assert_array_equal(t.prior[:, 3, :], 1.0)
        assert_array_equal(t.prior[:, :, 3], 1.0)

    def test_drop_and_reorder(self):
        old = self._tensor()
        t = resize(old, 2, {0: 1, 2: 0})
        assert t.posterior[0, 1, 1] == old.posterior[0, 0, 0]
        assert t.posterior[1, 0, 1] == old.posterior[1, 2, 0]
        assert t.empirical[0, 0, 0] == old.empirical[0, 2, 2]

    def test_array_mapping_with_drops(self):
        t = resize(self._tensor(), 2, [-1, 0, 1])
        assert_array_equal(t.prior[0], self._tensor().prior[0][1:, 1:])

    @pytest.mark.parametrize("mapping", [[0, 0, 1], [0, 1, 5], [0, 1]])
    def test_invalid_mapping(self, mapping):
        with pytest.raises(InvalidInputError):
            resize(self._tensor(), 3, mapping)


class TestTotalVariation:

    def test_columns(self):
        p = np.array([[1.0, 0.5], [0.0, 0.5]])
        q = np.array([[0.0, 0.5], [1.0, 0.5]])
        assert_allclose(total_variation(p, q), [1.0, 0.0])
