"""Perfect mazes carved by a recursive backtracker."""
import random
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from .base import (
    ACTION_DELTAS,
    GOAL,
    N_ACTIONS,
    NORMAL,
    WALL,
    GridState,
    StepResult,
    channel_map,
    encode_observation,
    obs_length,
)


@dataclass
class MazeConfig:
    size: int = 20
    wall_penalty: float = 0.01
    obs_mode: str = "local"


def playable_size(size):
    """Odd side length actually used: a 20 request yields a 19x19 grid
    (outer wall ring plus a 9x9 lattice of carved cells)."""
    if size < 5:
        raise ContractViolation("maze size must be >= 5")
    return size if size % 2 == 1 else size - 1


def maze_generate(seed, size=20):
    """Return ``(tiles, goal)``; the goal sits on a uniformly chosen dead end."""
    n = playable_size(size)
    rng = random.Random(seed)
    tiles = np.full((n, n), WALL, dtype=np.int8)
    cells = [(x, y) for y in range(1, n, 2) for x in range(1, n, 2)]
    start = rng.choice(cells)
    tiles[start[1], start[0]] = NORMAL
    stack = [start]
    while stack:
        x, y = stack[-1]
        options = []
        for dx, dy in ACTION_DELTAS:
            nx, ny = x + 2 * dx, y + 2 * dy
            if 0 < nx < n and 0 < ny < n and tiles[ny, nx] == WALL:
                options.append((nx, ny, dx, dy))
        if not options:
            stack.pop()
            continue
        nx, ny, dx, dy = rng.choice(options)
        tiles[y + dy, x + dx] = NORMAL
        tiles[ny, nx] = NORMAL
        stack.append((nx, ny))
    dead_ends = [c for c in cells if _open_neighbours(tiles, *c) == 1]
    gx, gy = rng.choice(dead_ends)
    tiles[gy, gx] = GOAL
    return tiles, (gx, gy)


def _open_neighbours(tiles, x, y):
    n = 0
    for dx, dy in ACTION_DELTAS:
        if tiles[y + dy, x + dx] != WALL:
            n += 1
    return n


class Maze:
    """Find the goal; bumping a wall costs ``wall_penalty`` and does not move."""

    n_actions = N_ACTIONS

    def __init__(self, task, cfg=None):
        if task.family != "maze":
            raise ContractViolation(f"Maze cannot run a {task.family} task")
        self.task = task
        self.cfg = cfg or MazeConfig()
        self.base_tiles, self.goal = maze_generate(task.layout_seed, self.cfg.size)
        self.channels = channel_map(task.palette_perm)
        self.state = None
        self.done = True
        self.t = 0

    @property
    def obs_len(self):
        n = self.base_tiles.shape[0]
        return obs_length(self.cfg.obs_mode, n, n)

    def start_cells(self):
        ys, xs = np.nonzero(self.base_tiles == NORMAL)
        return list(zip(xs.tolist(), ys.tolist()))

    def reset(self, rng=None, start=None):
        if start is None:
            cells = self.start_cells()
            start = cells[int(rng.integers(len(cells)))]
        self.state = GridState(tiles=self.base_tiles.copy(), agent=tuple(start))
        self.done = False
        self.t = 0
        self.bumps = 0
        return self.observe()

    def observe(self):
        return encode_observation(self.state, self.cfg.obs_mode, channels=self.channels)

    def step(self, action):
        if self.done:
            raise ContractViolation("step() called on a finished episode; reset() first")
        dx, dy = ACTION_DELTAS[self.task.dynamics_perm[int(action)]]
        x, y = self.state.agent
        nx, ny = x + dx, y + dy
        tiles = self.state.tiles
        n = tiles.shape[0]
        self.t += 1
        reward = 0.0
        if not (0 <= nx < n and 0 <= ny < n) or tiles[ny, nx] == WALL:
            reward = -self.cfg.wall_penalty
            self.bumps += 1
        else:
            self.state.agent = (nx, ny)
            if tiles[ny, nx] == GOAL:
                reward = 1.0
                self.done = True
        if self.t >= self.task.horizon:
            self.done = True
        return StepResult(self.observe(), reward, self.done, {"bumps": self.bumps, "t": self.t})
