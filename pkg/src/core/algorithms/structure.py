"""
Component lifecycle and forgetting.

Components start flexible. At every periodic checkpoint each component's
previous snapshot is compared (KL divergence) with the current components;
a component confirmed `persistence_threshold` checkpoints in a row becomes
fixed for good. Observations explained by fixed components, together with
both neighbours in time, can be forgotten: their statistics are absorbed
into the empirical priors and the raw data is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np

from src.core.algorithms.meanshift import MeanShiftConfig, mean_shift
from src.core.algorithms.vgm import (
    MixtureState, build_prior_tier, data_ridge,
)
from src.core.domain.distributions import (
    GaussianParams, gaussian_kl, log_gaussian_pdf, mahalanobis_sq,
)
from src.exceptions import ConfigurationError, dimension_mismatch_error
from src.validation import as_finite_points

logger = logging.getLogger(__name__)


class ComponentStatus(Enum):
    """Lifecycle status of a mixture component."""
    FLEXIBLE = "flexible"
    FIXED = "fixed"


@dataclass
class StructureConfig:
    """Configuration for lifecycle tracking and discovery."""

    # Two snapshots are "the same component" below this KL divergence
    kl_threshold: float = 0.5

    # Consecutive confirmations needed before a component is fixed
    persistence_threshold: int = 4

    # Points farther than this (Mahalanobis units) from their best component are novel
    novelty_mahalanobis: float = 3.0

    # Minimum cluster size for a discovered component
    discovery_min_points: int = 5

    # Components with less responsibility mass are empty
    mass_epsilon: float = 1e-10

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.kl_threshold > 0:
            raise ConfigurationError("kl_threshold must be positive",
                                     parameter='kl_threshold', value=self.kl_threshold)
        if self.persistence_threshold < 1:
            raise ConfigurationError("persistence_threshold must be >= 1",
                                     parameter='persistence_threshold',
                                     value=self.persistence_threshold)
        if not self.novelty_mahalanobis > 0:
            raise ConfigurationError("novelty_mahalanobis must be positive",
                                     parameter='novelty_mahalanobis',
                                     value=self.novelty_mahalanobis)
        if self.discovery_min_points < 1:
            raise ConfigurationError("discovery_min_points must be >= 1",
                                     parameter='discovery_min_points',
                                     value=self.discovery_min_points)


@dataclass(frozen=True, eq=False)
class LedgerEntry:
    """Lifecycle record for one component."""

    persistence_count: int = 0
    status: ComponentStatus = ComponentStatus.FLEXIBLE
    snapshot: Optional[GaussianParams] = None

    @property
    def is_fixed(self) -> bool:
        return self.status is ComponentStatus.FIXED


@dataclass(frozen=True)
class ComponentLedger:
    """Per-component lifecycle records, aligned with the mixture's component indices."""

    entries: Tuple[LedgerEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, k: int) -> LedgerEntry:
        return self.entries[k]

    @property
    def fixed_mask(self) -> np.ndarray:
        return np.array([e.is_fixed for e in self.entries], dtype=bool)

    @property
    def n_fixed(self) -> int:
        return int(self.fixed_mask.sum()) if self.entries else 0

    def resize(self, new_k: int, mapping) -> 'ComponentLedger':
        """Re-index after discovery/pruning; mapping[old] = new or -1 for dropped."""
        mapping = np.asarray(mapping, dtype=int).reshape(-1)
        if mapping.shape[0] != len(self.entries):
            raise dimension_mismatch_error("ledger mapping", len(self.entries), mapping.shape[0])
        entries: List[LedgerEntry] = [LedgerEntry() for _ in range(new_k)]
        for old, new in enumerate(mapping):
            if new >= 0:
                entries[new] = self.entries[old]
        return ComponentLedger(tuple(entries))


@dataclass(frozen=True, eq=False)
class ForgetPlan:
    """Forget/keep partitions of observation indices (N', N'') and transition indices (M', M'').

    Transition t links observation t to observation t + 1.
    """

    observation_forget: np.ndarray
    observation_keep: np.ndarray
    transition_forget: np.ndarray
    transition_keep: np.ndarray

    @classmethod
    def keep_all(cls, n_observations: int, transitions: Sequence[int]) -> 'ForgetPlan':
        empty = np.zeros(0, dtype=int)
        return cls(empty, np.arange(n_observations), empty.copy(),
                   np.asarray(transitions, dtype=int))

    @property
    def is_empty(self) -> bool:
        return self.observation_forget.size == 0 and self.transition_forget.size == 0


# Lifecycle

def _greedy_matches(previous: Sequence[Optional[GaussianParams]],
                    current: Sequence[GaussianParams], threshold: float) -> List[bool]:
    """Smallest-KL pairs first; every current component can be claimed once."""
    pairs = []
    for i, snap in enumerate(previous):
        if snap is None:
            continue
        for j, comp in enumerate(current):
            if comp.dim != snap.dim:
                continue
            kl = gaussian_kl(snap, comp)
            if kl < threshold:
                pairs.append((kl, i, j))
    pairs.sort()
    matched = [False] * len(previous)
    claimed = set()
    for _, i, j in pairs:
        if matched[i] or j in claimed:
            continue
        matched[i] = True
        claimed.add(j)
    return matched


def checkpoint_components(ledger: ComponentLedger, current: Sequence[GaussianParams],
                          cfg: Optional[StructureConfig] = None) -> ComponentLedger:
    """
    Update persistence counts against the current components.

    Entry k keeps its index; its snapshot becomes current[k] (kept as-is when
    there is no current[k]). A matched entry gains one confirmation, an
    unmatched one resets to zero; fixed entries stay fixed either way.
    Components beyond the ledger's length get fresh entries.
    """
    cfg = cfg or StructureConfig()
    previous = [e.snapshot for e in ledger.entries]
    matched = _greedy_matches(previous, current, cfg.kl_threshold)

    entries: List[LedgerEntry] = []
    for k, entry in enumerate(ledger.entries):
        count = entry.persistence_count + 1 if matched[k] else 0
        status = entry.status
        if count >= cfg.persistence_threshold:
            status = ComponentStatus.FIXED
        snapshot = current[k] if k < len(current) else entry.snapshot
        entries.append(LedgerEntry(persistence_count=count, status=status, snapshot=snapshot))
    for k in range(len(ledger.entries), len(current)):
        entries.append(LedgerEntry(snapshot=current[k]))

    return ComponentLedger(tuple(entries))


def newly_fixed(before: ComponentLedger, after: ComponentLedger) -> List[int]:
    """Indices that turned fixed between two ledgers of the same length."""
    return [k for k in range(min(len(before), len(after)))
            if after[k].is_fixed and not before[k].is_fixed]


# Discovery and pruning

def novelty_mask(state: MixtureState, points: np.ndarray, threshold: float) -> np.ndarray:
    """True where the best-explaining component is more than `threshold` Mahalanobis units away."""
    n = points.shape[0]
    if state.n_components == 0:
        return np.ones(n, dtype=bool)
    estimates = state.point_estimates()
    log_dens = np.column_stack([np.atleast_1d(log_gaussian_pdf(points, g)) for g in estimates])
    best = np.argmax(log_dens, axis=1)
    maha = np.column_stack([np.atleast_1d(mahalanobis_sq(points, g.mean, g.precision))
                            for g in estimates])
    return maha[np.arange(n), best] > threshold ** 2


def discover_components(points, cfg: Optional[MeanShiftConfig], state: MixtureState,
                        structure_cfg: Optional[StructureConfig] = None,
                        ridge: Optional[float] = None) -> Tuple[MixtureState, np.ndarray]:
    """
    Add components for clusters of poorly explained observations.

    Args:
        points: Observations indexed like state.responsibilities
        cfg: Mean-shift settings used on the novel subset
        state: Current mixture
        structure_cfg: Novelty threshold and minimum cluster size
        ridge: Covariance ridge (default from the spread of `points`)

    Returns:
        (grown state, index map old -> new); existing components keep their
        indices so the map is the identity over the old components
    """
    cfg = cfg or MeanShiftConfig()
    structure_cfg = structure_cfg or StructureConfig()
    points = as_finite_points(points, allow_empty=True)
    old_k = state.n_components
    identity = np.arange(old_k)
    if points.shape[0] == 0:
        return state, identity
    if points.shape[0] != state.n_points:
        raise dimension_mismatch_error("points vs responsibilities", state.n_points,
                                       points.shape[0])

    novel = np.flatnonzero(novelty_mask(state, points, structure_cfg.novelty_mahalanobis))
    if novel.size < structure_cfg.discovery_min_points:
        return state, identity

    assignment = mean_shift(points[novel], cfg)
    sizes = assignment.sizes()
    spawn = [k for k in range(assignment.n_clusters)
             if sizes[k] >= structure_cfg.discovery_min_points]
    if not spawn:
        return state, identity

    ridge = data_ridge(points) if ridge is None else ridge
    clusters = [points[novel[assignment.members(k)]] for k in spawn]
    new_total = old_k + len(spawn)
    tier = build_prior_tier(clusters, new_total, ridge)

    r = np.zeros((points.shape[0], new_total))
    r[:, :old_k] = state.responsibilities
    if old_k == 0:
        r[:] = 1.0 / new_total
    for offset, k in enumerate(spawn):
        rows = novel[assignment.members(k)]
        r[rows] = 0.0
        r[rows, old_k + offset] = 1.0

    logger.debug("discovered %d components from %d novel points", len(spawn), novel.size)
    return state.append_components(tier, r), identity


def prune_components(state: MixtureState, ledger: ComponentLedger,
                     mass_epsilon: float = 1e-10
                     ) -> Tuple[MixtureState, ComponentLedger, np.ndarray]:
    """
    Drop flexible components with no responsibility mass.

    Returns:
        (state, ledger, mapping) where mapping[old] is the new index or -1
    """
    if len(ledger) != state.n_components:
        raise dimension_mismatch_error("ledger", state.n_components, len(ledger))
    keep = state.active_mask(mass_epsilon) | ledger.fixed_mask if len(ledger) else \
        np.zeros(0, dtype=bool)
    mapping = np.full(state.n_components, -1, dtype=int)
    mapping[keep] = np.arange(int(keep.sum()))
    if np.all(keep):
        return state, ledger, mapping
    survivors = np.flatnonzero(keep)
    return (state.select_components(survivors),
            ledger.resize(survivors.size, mapping), mapping)


# Forgetting

def transition_indices(episode_ids: np.ndarray, times: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices t such that observations t and t + 1 are consecutive steps of one trial."""
    episode_ids = np.asarray(episode_ids)
    if episode_ids.size < 2:
        return np.zeros(0, dtype=int)
    linked = episode_ids[1:] == episode_ids[:-1]
    if times is not None:
        times = np.asarray(times)
        linked &= times[1:] == times[:-1] + 1
    return np.flatnonzero(linked)


def plan_forgetting(responsibilities, ledger: ComponentLedger, episode_ids,
                    times: Optional[np.ndarray] = None,
                    hold: Optional[Sequence[int]] = None) -> ForgetPlan:
    """
    Build the forget/keep index sets.

    An observation is fixed-backed when its argmax-responsibility component
    is fixed. Observation t is forgotten iff it and both of its neighbours in
    the same trial are fixed-backed; a missing neighbour (trial boundary or a
    gap left by earlier forgetting) is ignored. Transition t is forgotten iff
    observation t or t + 1 is.

    Observations listed in `hold` are always kept (e.g. the newest
    observation of a trial that is still running, whose successor has not
    arrived yet).
    """
    r = np.asarray(responsibilities, dtype=float)
    n = r.shape[0]
    links = transition_indices(episode_ids, times)
    if n == 0:
        return ForgetPlan.keep_all(0, links)
    if r.shape[1] != len(ledger):
        raise dimension_mismatch_error("ledger", r.shape[1], len(ledger))
    if len(ledger) == 0:
        return ForgetPlan.keep_all(n, links)

    backed = ledger.fixed_mask[np.argmax(r, axis=1)]
    has_next = np.zeros(n, dtype=bool)
    has_next[links] = True
    has_prev = np.zeros(n, dtype=bool)
    has_prev[links + 1] = True

    prev_ok = np.ones(n, dtype=bool)
    prev_ok[1:] = backed[:-1]
    prev_ok |= ~has_prev
    next_ok = np.ones(n, dtype=bool)
    next_ok[:-1] = backed[1:]
    next_ok |= ~has_next

    forget = backed & prev_ok & next_ok
    if hold is not None:
        forget[np.asarray(hold, dtype=int)] = False
    t_forget = forget[links] | forget[links + 1]
    return ForgetPlan(
        observation_forget=np.flatnonzero(forget),
        observation_keep=np.flatnonzero(~forget),
        transition_forget=links[t_forget],
        transition_keep=links[~t_forget],
    )
