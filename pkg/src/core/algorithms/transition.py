"""
Dirichlet-categorical transition model.

For every action a the tensor holds Dirichlet counts b[a][next, current]:
column j of slice a is the count vector of the distribution over next
states when leaving state j under action a. Consecutive responsibility rows
(r0 at time t, r1 at time t+1) add their soft outer product r1 ⊗ r0.

The three tiers mirror the mixture model: prior b, empirical b̄ (prior plus
forgotten samples) and posterior b̂ (empirical plus kept samples).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence, Union
import logging

import numpy as np

from src.exceptions import InvalidInputError, dimension_mismatch_error, index_out_of_range_error
from src.validation import check_index, check_simplex_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TransitionSample:
    """One transition triplet: responsibilities before/after and the action taken."""

    r0: np.ndarray
    r1: np.ndarray
    action: int

    def __post_init__(self):
        r0 = check_simplex_rows(self.r0, "r0")[0]
        r1 = check_simplex_rows(self.r1, "r1")[0]
        if r0.shape != r1.shape:
            raise dimension_mismatch_error("r1", r0.shape, r1.shape)
        object.__setattr__(self, 'r0', r0)
        object.__setattr__(self, 'r1', r1)
        object.__setattr__(self, 'action', int(self.action))


@dataclass(frozen=True, eq=False)
class TransitionBatch:
    """Stacked samples: r0 and r1 are (M, K), actions is (M,)."""

    r0: np.ndarray
    r1: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        r0 = np.asarray(self.r0, dtype=float)
        r1 = np.asarray(self.r1, dtype=float)
        actions = np.asarray(self.actions, dtype=int).reshape(-1)
        if r0.ndim != 2 or r0.shape != r1.shape or r0.shape[0] != actions.shape[0]:
            raise dimension_mismatch_error("transition batch", r0.shape,
                                           (r1.shape, actions.shape))
        object.__setattr__(self, 'r0', r0)
        object.__setattr__(self, 'r1', r1)
        object.__setattr__(self, 'actions', actions)

    @classmethod
    def from_samples(cls, samples: Sequence[TransitionSample], n_states: int) -> 'TransitionBatch':
        if not samples:
            return cls(np.zeros((0, n_states)), np.zeros((0, n_states)), np.zeros(0, dtype=int))
        return cls(np.stack([s.r0 for s in samples]), np.stack([s.r1 for s in samples]),
                   np.array([s.action for s in samples], dtype=int))

    def __len__(self) -> int:
        return self.actions.shape[0]


Samples = Union[TransitionBatch, Sequence[TransitionSample]]


@dataclass(frozen=True, eq=False)
class TransitionTensor:
    """Prior, empirical and posterior Dirichlet counts, each of shape (A, K, K)."""

    prior: np.ndarray
    empirical: np.ndarray
    posterior: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.prior)
        if len(shape) != 3 or shape[1] != shape[2]:
            raise dimension_mismatch_error("transition prior", "(A, K, K)", shape)
        for name in ('empirical', 'posterior'):
            if np.shape(getattr(self, name)) != shape:
                raise dimension_mismatch_error(f"transition {name}", shape,
                                               np.shape(getattr(self, name)))

    @classmethod
    def uniform(cls, n_actions: int, n_states: int) -> 'TransitionTensor':
        """All tiers filled with ones."""
        ones = np.ones((n_actions, n_states, n_states))
        return cls(prior=ones, empirical=ones.copy(), posterior=ones.copy())

    @property
    def n_actions(self) -> int:
        return self.prior.shape[0]

    @property
    def n_states(self) -> int:
        return self.prior.shape[1]

    def commit_empirical(self) -> 'TransitionTensor':
        """Replace the prior by the empirical counts once forgotten samples are gone."""
        return replace(self, prior=self.empirical.copy())


def _as_batch(samples: Samples, n_states: int) -> TransitionBatch:
    if isinstance(samples, TransitionBatch):
        batch = samples
    else:
        batch = TransitionBatch.from_samples(list(samples), n_states)
    if len(batch) and batch.r0.shape[1] != n_states:
        raise dimension_mismatch_error("transition sample", n_states, batch.r0.shape[1])
    return batch


def outer_mass(samples: Samples, n_actions: int, n_states: int) -> np.ndarray:
    """Σ_n [a = a_n] r1_n ⊗ r0_n laid out as (A, next, current)."""
    batch = _as_batch(samples, n_states)
    mass = np.zeros((n_actions, n_states, n_states))
    if len(batch) == 0:
        return mass
    bad = (batch.actions < 0) | (batch.actions >= n_actions)
    if np.any(bad):
        raise index_out_of_range_error("action", int(batch.actions[bad][0]), n_actions)
    for a in np.unique(batch.actions):
        sel = batch.actions == a
        mass[a] = batch.r1[sel].T @ batch.r0[sel]
    return mass


def absorb_forgotten(t: TransitionTensor, samples: Samples) -> TransitionTensor:
    """
    Empirical counts = prior + forgotten samples.

    The posterior is reset to the empirical counts; call compute_posterior
    with the kept samples afterwards, and commit_empirical once the
    forgotten samples have been dropped.
    """
    empirical = t.prior + outer_mass(samples, t.n_actions, t.n_states)
    return TransitionTensor(prior=t.prior, empirical=empirical, posterior=empirical.copy())


def compute_posterior(t: TransitionTensor, samples: Samples) -> TransitionTensor:
    """Posterior counts = empirical + kept samples."""
    posterior = t.empirical + outer_mass(samples, t.n_actions, t.n_states)
    return replace(t, posterior=posterior)


def expected_transition(t: TransitionTensor, action: int) -> np.ndarray:
    """Column-normalized posterior counts: entry [k, j] = P(next = k | current = j, action)."""
    action = check_index(action, t.n_actions, "action")
    counts = t.posterior[action]
    return counts / counts.sum(axis=0, keepdims=True)


def expected_transitions(t: TransitionTensor) -> np.ndarray:
    """expected_transition for every action, shape (A, K, K)."""
    if t.n_states == 0:
        return np.zeros_like(t.posterior)
    return t.posterior / t.posterior.sum(axis=1, keepdims=True)


def _normalize_mapping(mapping, old_k: int, new_k: int) -> np.ndarray:
    """Turn a dict or array mapping into an int array with -1 for dropped components."""
    if isinstance(mapping, Mapping):
        arr = np.full(old_k, -1, dtype=int)
        for old, new in mapping.items():
            old = check_index(old, old_k, "old component")
            arr[old] = -1 if new is None else int(new)
    else:
        arr = np.asarray(mapping, dtype=int).reshape(-1)
        if arr.shape[0] != old_k:
            raise dimension_mismatch_error("mapping", old_k, arr.shape[0])
    if np.any(arr >= new_k) or np.any(arr < -1):
        raise InvalidInputError("mapping points outside the new component range",
                                new_k=new_k, mapping=arr.tolist())
    survivors = arr[arr >= 0]
    if np.unique(survivors).size != survivors.size:
        raise InvalidInputError("mapping is not injective on surviving components",
                                mapping=arr.tolist())
    return arr


def resize(t: TransitionTensor, new_k: int, mapping) -> TransitionTensor:
    """
    Re-index the tensor to `new_k` components.

    Args:
        t: Tensor over the old components
        new_k: Number of components after the change
        mapping: old index -> new index (dict, or array with -1 / missing for dropped)

    Returns:
        Tensor whose surviving counts are copied and whose new entries are ones
    """
    if new_k < 0:
        raise InvalidInputError("new_k must be non-negative", input_value=new_k)
    arr = _normalize_mapping(mapping, t.n_states, new_k)
    old_idx = np.flatnonzero(arr >= 0)
    new_idx = arr[old_idx]

    def project(counts: np.ndarray) -> np.ndarray:
        out = np.ones((t.n_actions, new_k, new_k))
        out[:, new_idx[:, None], new_idx[None, :]] = counts[:, old_idx[:, None], old_idx[None, :]]
        return out

    logger.debug("transition resize %d -> %d (%d surviving)", t.n_states, new_k, old_idx.size)
    return TransitionTensor(prior=project(t.prior), empirical=project(t.empirical),
                            posterior=project(t.posterior))


def total_variation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Half L1 distance along the first axis (columns of stochastic matrices)."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=0)


__all__ = [
    'TransitionSample', 'TransitionBatch', 'TransitionTensor',
    'absorb_forgotten', 'compute_posterior', 'expected_transition', 'expected_transitions',
    'resize', 'outer_mass', 'total_variation',
]
