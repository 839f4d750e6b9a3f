"""Continual-learning strategies, importance scores, and projection."""

from .gem import PGD_ITERATIONS, gem_project
from .importance import (
    ImportanceRecord,
    capacity_from_grads,
    capacity_regularizer,
    combine_importance,
    compute_loss_importance,
    compute_topo_importance,
    load_records,
    save_records,
    task_loss_from_logits,
    topo_scalar,
    twp_penalty,
)
from .strategies import (
    STRATEGY_KINDS,
    ConfigError,
    EpisodicMemory,
    FrozenTeacher,
    Strategy,
    StrategyConfig,
    TaskView,
    make_strategy,
)

__all__ = [
    "ConfigError", "EpisodicMemory", "FrozenTeacher", "ImportanceRecord",
    "PGD_ITERATIONS", "STRATEGY_KINDS", "Strategy", "StrategyConfig",
    "TaskView", "capacity_from_grads", "capacity_regularizer",
    "combine_importance", "compute_loss_importance",
    "compute_topo_importance", "gem_project", "load_records",
    "make_strategy", "save_records", "task_loss_from_logits",
    "topo_scalar", "twp_penalty",
]
