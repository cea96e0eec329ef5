"""
Application layer: the agent loop, checkpoints, evaluation and the CLI.
"""

from .agent import AgentConfig, TGMAgent, TabularQAgent, make_agent, train
from .dto import CheckpointDTO, load_checkpoint, save_checkpoint
from .evaluation import evaluate_policy, transition_report

__all__ = [
    'AgentConfig',
    'TGMAgent',
    'TabularQAgent',
    'make_agent',
    'train',
    'CheckpointDTO',
    'load_checkpoint',
    'save_checkpoint',
    'evaluate_policy',
    'transition_report'
]
