"""Task families behind one interface: ``reset(rng) -> obs``, ``step(a) -> StepResult``."""
from dataclasses import dataclass, field

from ..errors import ContractViolation
from .base import (
    ACTION_NAMES,
    DEATH,
    ENERGY,
    FAMILIES,
    GOAL,
    ICE,
    KEY,
    LOCK,
    N_ACTIONS,
    N_CHANNELS,
    N_TILE_TYPES,
    NORMAL,
    TELEPORTER,
    TILE_NAMES,
    WALL,
    GridState,
    StepResult,
    TaskSpec,
    dump_grid,
    encode_observation,
    flood_fill,
    load_grid,
    sample_task,
)
from .krazy import KrazyConfig, KrazyWorld, generate_layout
from .maze import Maze, MazeConfig, maze_generate, playable_size
from .pointmass import PointMass, PointmassConfig


@dataclass
class EnvConfig:
    krazy: KrazyConfig = field(default_factory=KrazyConfig)
    maze: MazeConfig = field(default_factory=MazeConfig)
    pointmass: PointmassConfig = field(default_factory=PointmassConfig)


def make_env(task, cfg=None):
    cfg = cfg or EnvConfig()
    if task.family == "krazy":
        return KrazyWorld(task, cfg.krazy)
    if task.family == "maze":
        return Maze(task, cfg.maze)
    if task.family == "pointmass":
        return PointMass(task, cfg.pointmass)
    raise ContractViolation(f"unknown task family {task.family!r}")


__all__ = [
    "ACTION_NAMES", "DEATH", "ENERGY", "FAMILIES", "GOAL", "ICE", "KEY", "LOCK", "N_ACTIONS",
    "N_CHANNELS", "N_TILE_TYPES", "NORMAL", "TELEPORTER", "TILE_NAMES", "WALL", "EnvConfig",
    "GridState", "KrazyConfig", "KrazyWorld", "Maze", "MazeConfig", "PointMass",
    "PointmassConfig", "StepResult", "TaskSpec", "dump_grid", "encode_observation",
    "flood_fill", "generate_layout", "load_grid", "make_env", "maze_generate",
    "playable_size", "sample_task",
]
