"""Numpy double-DQN for the routing agent."""

from .dqn import AgentConfig, DQNAgent, act, double_dqn_targets, dqn_update, epsilon
from .mlp import Adam, huber_loss, init_params, mlp_forward, mlp_gradient
from .replay import ReplayBuffer
from .train import AgentPolicy, EpisodeStats, TrainResult, run_episode, train

__all__ = [
    "Adam",
    "AgentConfig",
    "AgentPolicy",
    "DQNAgent",
    "EpisodeStats",
    "ReplayBuffer",
    "TrainResult",
    "act",
    "double_dqn_targets",
    "dqn_update",
    "epsilon",
    "huber_loss",
    "init_params",
    "mlp_forward",
    "mlp_gradient",
    "run_episode",
    "train",
]
