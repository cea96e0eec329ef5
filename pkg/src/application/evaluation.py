"""
Ground-truth evaluation of a trained agent.

Learned components are aligned with maze cells by optimal assignment of
posterior means to cell centres (squared-distance cost), after which the
learned transition columns can be compared with the true dynamics cell by
cell. Greedy rollouts measure how well the policy solves the maze.
"""

from dataclasses import dataclass
from typing import List, Optional, Protocol
import logging

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from src.core.algorithms.transition import TransitionTensor, expected_transitions, total_variation
from src.core.algorithms.vgm import MixtureState
from src.core.domain.maze import (
    EnvConfig, EnvState, MazeEnvironment, MazeSpec, true_transition_matrices,
)

logger = logging.getLogger(__name__)

# Components farther than this from their assigned cell centre stay unmatched
DEFAULT_MAX_DISTANCE = 0.5


class Policy(Protocol):
    def act(self, observation: np.ndarray, env_state: EnvState, epsilon: float,
            rng: np.random.Generator) -> int: ...


@dataclass(frozen=True, eq=False)
class ComponentMatching:
    """One-to-one alignment between components and floor cells (-1 where unmatched)."""

    component_of_cell: np.ndarray  # (F,)
    cell_of_component: np.ndarray  # (K,)

    @property
    def n_matched(self) -> int:
        return int(np.sum(self.component_of_cell >= 0))


def match_components(spec: MazeSpec, means: np.ndarray, active: Optional[np.ndarray] = None,
                     max_distance: float = DEFAULT_MAX_DISTANCE) -> ComponentMatching:
    """Hungarian matching of component means to cell centres."""
    means = np.asarray(means, dtype=float).reshape(-1, 2)
    n_cells, k = spec.n_cells, means.shape[0]
    component_of_cell = np.full(n_cells, -1, dtype=int)
    cell_of_component = np.full(k, -1, dtype=int)
    candidates = np.arange(k) if active is None else np.flatnonzero(active)
    if candidates.size == 0 or n_cells == 0:
        return ComponentMatching(component_of_cell, cell_of_component)

    cost = cdist(spec.cell_centers(), means[candidates], 'sqeuclidean')
    rows, cols = linear_sum_assignment(cost)
    for cell, col in zip(rows, cols):
        if cost[cell, col] <= max_distance ** 2:
            component_of_cell[cell] = candidates[col]
            cell_of_component[candidates[col]] = cell
    return ComponentMatching(component_of_cell, cell_of_component)


def learned_cell_transitions(learned: np.ndarray, matching: ComponentMatching) -> np.ndarray:
    """
    Learned dynamics re-expressed over cells, shape (A, F, F) [next, current].

    Mass on unmatched components is dropped; columns of unmatched cells are NaN.
    """
    n_actions = learned.shape[0]
    n_cells = matching.component_of_cell.shape[0]
    out = np.full((n_actions, n_cells, n_cells), np.nan)
    matched_cells = np.flatnonzero(matching.component_of_cell >= 0)
    comps = matching.component_of_cell[matched_cells]
    for cell, comp in zip(matched_cells, comps):
        column = np.zeros((n_actions, n_cells))
        column[:, matched_cells] = learned[:, comps, comp]
        out[:, :, cell] = column
    return out


@dataclass(frozen=True, eq=False)
class TransitionReport:
    """Per-(action, cell) TV distance between learned and true next-cell distributions."""

    tv: np.ndarray  # (A, F), NaN for unmatched cells
    matching: ComponentMatching

    @property
    def mean_tv(self) -> Optional[float]:
        valid = self.tv[~np.isnan(self.tv)]
        return float(valid.mean()) if valid.size else None

    def fraction_within(self, threshold: float) -> float:
        """Share of all (action, cell) columns within `threshold`; unmatched cells are misses."""
        if self.tv.size == 0:
            return 0.0
        return float(np.sum(np.nan_to_num(self.tv, nan=np.inf) <= threshold) / self.tv.size)


def transition_report(spec: MazeSpec, state: MixtureState, tensor: TransitionTensor,
                      max_distance: float = DEFAULT_MAX_DISTANCE) -> TransitionReport:
    # All components, including fixed ones whose points were forgotten
    matching = match_components(spec, state.posterior.m, max_distance=max_distance)
    learned = learned_cell_transitions(expected_transitions(tensor), matching)
    truth = true_transition_matrices(spec)
    tv = np.full((truth.shape[0], spec.n_cells), np.nan)
    for cell in np.flatnonzero(matching.component_of_cell >= 0):
        tv[:, cell] = total_variation(learned[:, :, cell].T, truth[:, :, cell].T)
    return TransitionReport(tv=tv, matching=matching)


def learned_cell_map(spec: MazeSpec, matching: ComponentMatching) -> str:
    """Maze picture: 'o' for cells with a matched component, '?' for cells without."""
    marks = {cell: ('o' if matching.component_of_cell[i] >= 0 else '?')
             for i, cell in enumerate(spec.floor_cells)}
    return spec.render(marks)


@dataclass
class PolicyEvaluation:
    """Outcome of greedy rollouts."""
    episodes: int
    successes: int
    steps_to_goal: List[int]
    returns: List[float]

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    @property
    def mean_steps_to_goal(self) -> Optional[float]:
        return float(np.mean(self.steps_to_goal)) if self.steps_to_goal else None


def evaluate_policy(policy: Policy, spec: MazeSpec, env_cfg: Optional[EnvConfig] = None,
                    episodes: int = 10, seed: int = 0) -> PolicyEvaluation:
    """Run `episodes` greedy (ε = 0) episodes and count goal-and-eat successes."""
    env_seed, policy_seed = np.random.SeedSequence(seed).spawn(2)
    env = MazeEnvironment(spec, env_cfg, np.random.default_rng(env_seed))
    rng = np.random.default_rng(policy_seed)
    successes, steps, returns = 0, [], []
    for _ in range(episodes):
        state, observation = env.reset()
        total = 0.0
        while not state.done:
            result = env.step(state, policy.act(observation, state, 0.0, rng))
            total += result.reward
            state, observation = result.state, result.observation
        returns.append(total)
        if state.goal_reached:
            successes += 1
            steps.append(state.steps)
    logger.debug("greedy evaluation: %d/%d successes", successes, episodes)
    return PolicyEvaluation(episodes, successes, steps, returns)
