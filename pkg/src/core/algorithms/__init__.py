"""
Algorithms package: clustering, variational mixture fitting, transition
learning, structure management and planning.
"""

from src.core.algorithms.meanshift import ClusterAssignment, MeanShiftConfig, mean_shift
from src.core.algorithms.vgm import MixtureState, MixtureTier, VGMConfig, compute_vfe, fit
from src.core.algorithms.transition import TransitionTensor, expected_transitions
from src.core.algorithms.structure import (
    ComponentLedger, ForgetPlan, StructureConfig, plan_forgetting,
)
from src.core.algorithms.planner import QTable, Belief, EpsilonSchedule, value_iteration_oracle

__all__ = [
    'ClusterAssignment', 'MeanShiftConfig', 'mean_shift',
    'MixtureState', 'MixtureTier', 'VGMConfig', 'compute_vfe', 'fit',
    'TransitionTensor', 'expected_transitions',
    'ComponentLedger', 'ForgetPlan', 'StructureConfig', 'plan_forgetting',
    'QTable', 'Belief', 'EpsilonSchedule', 'value_iteration_oracle',
]
