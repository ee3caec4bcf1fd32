"""Built-in 2D object environments, replay buffer, and evaluation metric."""

from .env import (
    ACTIONS,
    ARENA_SIZE,
    COLORS,
    OBJECT_RADIUS,
    RANDOM_POLICY_BASELINE,
    TASKS,
    EnvConfig,
    EnvState,
    EpisodeDoneError,
    EpisodeLog,
    ObjectEnv,
    SceneObject,
    Transition,
    evaluate_return,
    random_policy_return,
)
from .replay import ReplayBuffer

__all__ = [
    "ACTIONS", "ARENA_SIZE", "COLORS", "OBJECT_RADIUS", "TASKS",
    "RANDOM_POLICY_BASELINE",
    "EnvConfig", "EnvState", "EpisodeDoneError", "EpisodeLog",
    "ObjectEnv", "SceneObject", "Transition",
    "evaluate_return", "random_policy_return", "ReplayBuffer",
]
