from .commands import Craft, CraftCommand, Get, Inventory, UnparsableCommand, canonical, format_command, parse_command
from .env import (
    CraftEnv,
    CraftState,
    CraftTask,
    SteppedAfterDone,
    apply_command,
    default_max_steps,
    env_reset,
    env_step,
    progress_fraction,
)
from .generator import ENV_ID, GenerationOverflow, generate_tasks, load_tasks, save_tasks
from .graph import InvalidGraph, Recipe, RecipeGraph
from .solver import UnsolvableTask, gold_progress, oracle_solve, plan

__all__ = [
    "ENV_ID",
    "Craft",
    "CraftCommand",
    "CraftEnv",
    "CraftState",
    "CraftTask",
    "GenerationOverflow",
    "Get",
    "InvalidGraph",
    "Inventory",
    "Recipe",
    "RecipeGraph",
    "SteppedAfterDone",
    "UnparsableCommand",
    "UnsolvableTask",
    "apply_command",
    "canonical",
    "default_max_steps",
    "env_reset",
    "env_step",
    "format_command",
    "generate_tasks",
    "gold_progress",
    "load_tasks",
    "oracle_solve",
    "parse_command",
    "plan",
    "progress_fraction",
    "save_tasks",
]
