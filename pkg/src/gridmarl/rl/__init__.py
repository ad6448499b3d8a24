"""Training loop, update rules, and episode machinery."""

from .core import baseline, ensemble_action, returns_to_go, td_error
from .trainer import (
    ALGORITHMS,
    BatchMetrics,
    EpisodeResult,
    EpisodeStats,
    NetConfig,
    TeamNets,
    Trainer,
    TrainerConfig,
    evaluate,
    new_team_nets,
    play_step,
    rollout_flat,
    rollout_graph,
)

__all__ = [
    "ALGORITHMS",
    "BatchMetrics",
    "EpisodeResult",
    "EpisodeStats",
    "NetConfig",
    "TeamNets",
    "Trainer",
    "TrainerConfig",
    "baseline",
    "ensemble_action",
    "evaluate",
    "new_team_nets",
    "play_step",
    "returns_to_go",
    "rollout_flat",
    "rollout_graph",
    "td_error",
]
