"""
Domain models: probability distributions and the maze world.
"""

from src.core.domain.distributions import (
    DirichletParams, GaussianParams, WishartParams,
    cholesky_factor, log_det_spd, mahalanobis_sq, spd_inverse,
)
from src.core.domain.maze import (
    Action, EnvConfig, EnvState, MazeEnvironment, MazeSpec, StepResult,
    load_maze, parse_maze, true_transition_matrices,
)

__all__ = [
    'DirichletParams', 'GaussianParams', 'WishartParams',
    'cholesky_factor', 'log_det_spd', 'mahalanobis_sq', 'spd_inverse',
    'Action', 'EnvConfig', 'EnvState', 'MazeEnvironment', 'MazeSpec', 'StepResult',
    'load_maze', 'parse_maze', 'true_transition_matrices',
]
