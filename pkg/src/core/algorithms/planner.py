"""
Tabular Q-learning over hidden states.

The belief-weighted update spreads one temporal-difference step over every
state z in proportion to the posterior belief Q(z); with a one-hot belief it
is the ordinary tabular update. The target uses the learned transition model:
r + γ Σ_z' P(z' | z, a) max_a' q(a', z').
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union
import logging

import numpy as np

from src.exceptions import (
    ConfigurationError, ConvergenceError, InvalidInputError, dimension_mismatch_error,
)
from src.validation import check_index, check_probability, check_simplex_rows

logger = logging.getLogger(__name__)

RngLike = Union[None, int, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True, eq=False)
class QTable:
    """Action values q(a, z) of shape (A, K) with learning rate α and discount γ."""

    values: np.ndarray
    learning_rate: float = 0.1
    discount: float = 0.9

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise dimension_mismatch_error("q values", "(A, K)", values.shape)
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("q values must be finite")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigurationError("learning_rate must be in (0, 1]",
                                     parameter='learning_rate', value=self.learning_rate)
        check_probability(self.discount, 'discount')
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, n_actions: int, n_states: int, learning_rate: float = 0.1,
              discount: float = 0.9) -> 'QTable':
        return cls(np.zeros((n_actions, n_states)), learning_rate, discount)

    @property
    def n_actions(self) -> int:
        return self.values.shape[0]

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def state_values(self) -> np.ndarray:
        """max_a q(a, z) per state."""
        if self.n_states == 0:
            return np.zeros(0)
        return self.values.max(axis=0)

    def resize(self, new_k: int, mapping) -> 'QTable':
        """Columns follow their components; new columns start at zero."""
        mapping = np.asarray(mapping, dtype=int).reshape(-1)
        if mapping.shape[0] != self.n_states:
            raise dimension_mismatch_error("q mapping", self.n_states, mapping.shape[0])
        out = np.zeros((self.n_actions, new_k))
        old = np.flatnonzero(mapping >= 0)
        out[:, mapping[old]] = self.values[:, old]
        return replace(self, values=out)


@dataclass(frozen=True, eq=False)
class Belief:
    """Posterior over hidden states."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'probs', check_simplex_rows(self.probs, "belief")[0])

    @classmethod
    def one_hot(cls, state: int, n_states: int) -> 'Belief':
        probs = np.zeros(n_states)
        probs[check_index(state, n_states, "state")] = 1.0
        return cls(probs)

    @property
    def size(self) -> int:
        return self.probs.shape[0]


@dataclass
class EpsilonSchedule:
    """Linear decay from `start` to `end` over the first `decay_fraction` of training."""

    start: float = 1.0
    end: float = 0.05
    decay_fraction: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        check_probability(self.start, 'epsilon_start')
        check_probability(self.end, 'epsilon_end')
        check_probability(self.decay_fraction, 'epsilon_decay_fraction')

    def value(self, episode: int, total_episodes: int) -> float:
        horizon = self.decay_fraction * total_episodes
        if horizon <= 0 or episode >= horizon:
            return self.end
        return self.start + (self.end - self.start) * (episode / horizon)


def _check_transitions(q: QTable, trans: np.ndarray) -> np.ndarray:
    trans = np.asarray(trans, dtype=float)
    expected = (q.n_actions, q.n_states, q.n_states)
    if trans.shape != expected:
        raise dimension_mismatch_error("transition matrices", expected, trans.shape)
    return trans


def temporal_differences(q: QTable, action: int, reward: float, trans: np.ndarray,
                         terminal: bool = False) -> np.ndarray:
    """TD error of row `action` for every state, using the expected next-state value."""
    action = check_index(action, q.n_actions, "action")
    trans = _check_transitions(q, trans)
    if terminal:
        target = np.full(q.n_states, float(reward))
    else:
        # trans[a][next, current]; expected value of the next state for each current state
        target = reward + q.discount * (trans[action].T @ q.state_values())
    return target - q.values[action]


def belief_q_update(q: QTable, belief: Belief, action: int, reward: float,
                    trans: np.ndarray, terminal: bool = False,
                    learning_rate: Optional[float] = None) -> QTable:
    """
    q(a, z) += α Q(z) [r + γ Σ_z' P(z'|z,a) max_a' q(a', z') - q(a, z)] for every z.

    Only row `action` changes. `terminal` zeroes the bootstrap term.
    """
    if belief.size != q.n_states:
        raise dimension_mismatch_error("belief", q.n_states, belief.size)
    alpha = q.learning_rate if learning_rate is None else learning_rate
    td = temporal_differences(q, action, reward, trans, terminal)
    values = q.values.copy()
    values[action] = q.values[action] + alpha * belief.probs * td
    return replace(q, values=values)


def sample_q_update(q: QTable, state: int, action: int, reward: float, next_state: int,
                    terminal: bool = False, learning_rate: Optional[float] = None) -> QTable:
    """Model-free Q-learning step toward r + γ max_a' q(a', s')."""
    state = check_index(state, q.n_states, "state")
    action = check_index(action, q.n_actions, "action")
    alpha = q.learning_rate if learning_rate is None else learning_rate
    bootstrap = 0.0 if terminal else q.discount * q.values[:, check_index(
        next_state, q.n_states, "state")].max()
    values = q.values.copy()
    values[action, state] += alpha * (reward + bootstrap - values[action, state])
    return replace(q, values=values)


def epsilon_greedy(q: QTable, belief: Belief, epsilon: float, rng: RngLike = None) -> int:
    """
    Uniform action with probability ε, otherwise argmax_a Σ_z Q(z) q(a, z).

    np.argmax returns the first maximum, so ties go to the lowest action index.
    """
    check_probability(epsilon, 'epsilon')
    rng = as_generator(rng)
    if rng.random() < epsilon:
        return int(rng.integers(q.n_actions))
    return greedy_action(q, belief)


def greedy_action(q: QTable, belief: Belief) -> int:
    if belief.size != q.n_states:
        raise dimension_mismatch_error("belief", q.n_states, belief.size)
    return int(np.argmax(q.values @ belief.probs))


@dataclass(frozen=True, eq=False)
class MDP:
    """Finite MDP: transitions[a][next, current], expected rewards[a, s], discount.

    `terminal[a, s]` marks (state, action) pairs that end the episode, which
    zeroes their bootstrap term.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    discount: float
    terminal: Optional[np.ndarray] = None

    def __post_init__(self):
        trans = np.asarray(self.transitions, dtype=float)
        rewards = np.asarray(self.rewards, dtype=float)
        if trans.ndim != 3 or trans.shape[1] != trans.shape[2]:
            raise dimension_mismatch_error("mdp transitions", "(A, S, S)", trans.shape)
        if rewards.shape != (trans.shape[0], trans.shape[1]):
            raise dimension_mismatch_error("mdp rewards", trans.shape[:2], rewards.shape)
        if np.max(np.abs(trans.sum(axis=1) - 1.0), initial=0.0) > 1e-9:
            raise InvalidInputError("mdp transition columns must sum to 1")
        terminal = (np.zeros(rewards.shape, dtype=bool) if self.terminal is None
                    else np.asarray(self.terminal, dtype=bool))
        if terminal.shape != rewards.shape:
            raise dimension_mismatch_error("mdp terminal mask", rewards.shape, terminal.shape)
        check_probability(self.discount, 'discount')
        object.__setattr__(self, 'transitions', trans)
        object.__setattr__(self, 'rewards', rewards)
        object.__setattr__(self, 'terminal', terminal)

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]


def value_iteration_oracle(mdp: MDP, tol: float = 1e-10, max_iterations: int = 100_000) -> QTable:
    """
    Optimal Q-values by repeated Bellman optimality backups.

    Raises:
        ConvergenceError: sup-norm change still above tol after max_iterations
    """
    q = np.zeros((mdp.n_actions, mdp.n_states))
    continuing = ~mdp.terminal
    residual = np.inf
    for iteration in range(1, max_iterations + 1):
        v = q.max(axis=0)
        expected_next = np.einsum('ank,n->ak', mdp.transitions, v)
        new_q = mdp.rewards + mdp.discount * continuing * expected_next
        residual = float(np.max(np.abs(new_q - q), initial=0.0))
        q = new_q
        if residual <= tol:
            logger.debug("value iteration converged after %d iterations", iteration)
            return QTable(q, learning_rate=1.0, discount=mdp.discount)
    raise ConvergenceError("value iteration did not converge", iterations=max_iterations,
                           residual=residual)
