"""Recurrent actor-critic networks and the clipped-surrogate training loop."""

from .nets import (
    clip_by_global_norm,
    critic_value,
    gaussian_log_prob,
    grad_check,
    init_critic,
    init_policy,
    policy_act,
)
from .ppo import (
    AgentParams,
    PpoConfig,
    RolloutBuffer,
    TrainResult,
    UpdateStats,
    evaluate,
    init_agent,
    ppo_losses,
    returns_and_advantages,
    train,
    update,
)

__all__ = [
    "AgentParams", "PpoConfig", "RolloutBuffer", "TrainResult", "UpdateStats",
    "clip_by_global_norm", "critic_value", "evaluate", "gaussian_log_prob",
    "grad_check", "init_agent", "init_critic", "init_policy", "policy_act",
    "ppo_losses", "returns_and_advantages", "train", "update",
]
