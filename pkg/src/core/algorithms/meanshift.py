"""
Flat-kernel mean-shift clustering.

Seeds Gaussian components from raw observations: every point climbs to the
mean of the data inside a spherical window of radius `bandwidth` until it
stops moving, and points whose modes land within `merge_radius` of each
other share a cluster.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional
import logging

import numpy as np
from scipy.spatial.distance import cdist

from src.exceptions import ConfigurationError
from src.validation import as_finite_points, require_positive

logger = logging.getLogger(__name__)

# Rows of the distance matrix processed at once
_CHUNK = 1024


@dataclass
class MeanShiftConfig:
    """Configuration for mean-shift clustering."""

    # Window radius θ_b in observation units
    bandwidth: float = 0.5

    # Stop when a mode moves less than this (default 1e-6 * bandwidth)
    convergence_tol: Optional[float] = None

    # Iteration cap per point
    max_iterations: int = 200

    # Modes closer than this are merged (default bandwidth / 4)
    merge_radius: Optional[float] = None

    def __post_init__(self):
        if self.convergence_tol is None and self.bandwidth is not None:
            self.convergence_tol = 1e-6 * self.bandwidth
        if self.merge_radius is None and self.bandwidth is not None:
            self.merge_radius = self.bandwidth / 4.0
        self.validate()

    def validate(self) -> None:
        for name in ('bandwidth', 'convergence_tol', 'merge_radius'):
            require_positive(getattr(self, name), name)
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1",
                                     parameter='max_iterations', value=self.max_iterations)


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Hard assignment of N points to K clusters."""

    labels: np.ndarray
    centroids: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_points(self) -> int:
        return self.labels.shape[0]

    @property
    def one_hot(self) -> np.ndarray:
        """N x K binary responsibility matrix."""
        out = np.zeros((self.n_points, self.n_clusters))
        out[np.arange(self.n_points), self.labels] = 1.0
        return out

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)


def _shift_modes(points: np.ndarray, cfg: MeanShiftConfig) -> np.ndarray:
    """Run the windowed-mean iteration for every point until it settles."""
    modes = points.copy()
    active = np.ones(points.shape[0], dtype=bool)

    for iteration in range(cfg.max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        for start in range(0, idx.size, _CHUNK):
            rows = idx[start:start + _CHUNK]
            window = cdist(modes[rows], points) <= cfg.bandwidth
            counts = window.sum(axis=1)
            # A mode always sees at least one point after the first step;
            # guard anyway so an empty window leaves the mode in place.
            has_points = counts > 0
            new = modes[rows].copy()
            new[has_points] = (window[has_points] @ points) / counts[has_points, None]
            shift = np.linalg.norm(new - modes[rows], axis=1)
            modes[rows] = new
            active[rows[shift < cfg.convergence_tol]] = False
    else:
        logger.debug("mean shift hit max_iterations with %d points still moving",
                     int(active.sum()))

    return modes


def _merge_modes(modes: np.ndarray, merge_radius: float):
    """Sequential merge in input order; ties go to the lowest cluster index."""
    seeds: List[np.ndarray] = []
    labels = np.empty(modes.shape[0], dtype=int)
    for n, mode in enumerate(modes):
        if seeds:
            dist = np.linalg.norm(np.asarray(seeds) - mode, axis=1)
            best = int(np.argmin(dist))  # first minimum, i.e. lowest index
            if dist[best] <= merge_radius:
                labels[n] = best
                continue
        seeds.append(mode)
        labels[n] = len(seeds) - 1
    return labels, len(seeds)


def mean_shift(points, cfg: Optional[MeanShiftConfig] = None) -> ClusterAssignment:
    """
    Cluster points with flat-kernel mean shift.

    Args:
        points: (N, O) observations, N >= 1
        cfg: Window and convergence settings

    Returns:
        ClusterAssignment whose centroid k is the mean of the modes merged
        into cluster k

    Raises:
        InvalidInputError: Empty, ragged or non-finite input
    """
    cfg = cfg or MeanShiftConfig()
    points = as_finite_points(points, "points")

    modes = _shift_modes(points, cfg)
    labels, n_clusters = _merge_modes(modes, cfg.merge_radius)

    centroids = np.zeros((n_clusters, points.shape[1]))
    np.add.at(centroids, labels, modes)
    centroids /= np.bincount(labels, minlength=n_clusters)[:, None]

    logger.debug("mean shift: %d points -> %d clusters", points.shape[0], n_clusters)
    return ClusterAssignment(labels=labels, centroids=centroids)
