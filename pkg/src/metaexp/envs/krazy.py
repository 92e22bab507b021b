"""Krazy World: a gridworld with eight tile types, a permutable palette and
permutable action dynamics."""
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import ContractViolation, LayoutFault
from .base import (
    ACTION_DELTAS,
    DEATH,
    ENERGY,
    GOAL,
    ICE,
    KEY,
    LOCK,
    N_ACTIONS,
    NORMAL,
    TELEPORTER,
    TYPE_OF_CODE,
    WALL,
    GridState,
    StepResult,
    TaskSpec,
    channel_map,
    encode_observation,
    obs_length,
)


@dataclass
class KrazyConfig:
    width: int = 10
    height: int = 10
    n_goal: int = 1
    n_death: int = 12
    n_ice: int = 6
    n_wall: int = 8
    n_lock_pairs: int = 1
    n_teleporter_pairs: int = 1
    n_energy: int = 3
    initial_energy: int = 24
    energy_refill: int = 8
    move_cost: int = 1
    obs_mode: str = "local"


def generate_layout(layout_seed, cfg=None, max_attempts=100):
    """Tile array for a seed.  Retries derived seeds if no start cell exists."""
    cfg = cfg or KrazyConfig()
    counts = [
        (WALL, cfg.n_wall), (DEATH, cfg.n_death), (ICE, cfg.n_ice), (GOAL, cfg.n_goal),
        (LOCK, cfg.n_lock_pairs), (KEY, cfg.n_lock_pairs),
        (TELEPORTER, 2 * cfg.n_teleporter_pairs), (ENERGY, cfg.n_energy),
    ]
    n_cells = cfg.width * cfg.height
    n_special = sum(n for _, n in counts)
    for attempt in range(max_attempts):
        rng = np.random.default_rng([layout_seed % 2**63, attempt])
        flat = np.full(n_cells, NORMAL, dtype=np.int8)
        if n_special <= n_cells:
            cells = rng.permutation(n_cells)[:n_special]
            k = 0
            for code, n in counts:
                flat[cells[k:k + n]] = code
                k += n
            tiles = flat.reshape(cfg.height, cfg.width)
            if (tiles == NORMAL).any():
                return tiles
    raise LayoutFault(f"no passable start cell after {max_attempts} layouts (seed {layout_seed})")


class KrazyWorld:
    """One Krazy World task.

    Movement per step: permute the action, check energy (none left: no
    movement, time still passes), block on walls / locks without the key /
    the border, slide across ice, teleport on landing, then apply the tile
    effect (goal +1 once per cell, key pickup, energy refill, death ends the
    episode).  Each step with energy available costs ``move_cost``.
    """

    n_actions = N_ACTIONS

    def __init__(self, task, cfg=None, tiles=None):
        if task.family != "krazy":
            raise ContractViolation(f"KrazyWorld cannot run a {task.family} task")
        self.task = task
        self.cfg = cfg or KrazyConfig()
        base = generate_layout(task.layout_seed, self.cfg) if tiles is None else np.asarray(tiles, dtype=np.int8)
        self.base_tiles = base
        self.channels = channel_map(task.palette_perm)
        self.state = None
        self.done = True
        self.t = 0

    @property
    def obs_len(self):
        h, w = self.base_tiles.shape
        return obs_length(self.cfg.obs_mode, w, h)

    def _teleporters(self, tiles):
        ys, xs = np.nonzero(tiles == TELEPORTER)
        if len(xs) == 2:
            return (int(xs[0]), int(ys[0]), int(xs[1]), int(ys[1]))
        return (-1, -1, -1, -1)

    def start_cells(self):
        ys, xs = np.nonzero(self.base_tiles == NORMAL)
        return list(zip(xs.tolist(), ys.tolist()))

    def reset(self, rng=None, start=None, energy=None):
        tiles = self.base_tiles.copy()
        if start is None:
            cells = self.start_cells()
            if not cells:
                raise LayoutFault("layout has no normal cell to start on")
            start = cells[int(rng.integers(len(cells)))]
        self.state = GridState(
            tiles=tiles, agent=tuple(start),
            energy=self.cfg.initial_energy if energy is None else int(energy))
        self._tele = self._teleporters(tiles)
        self.done = False
        self.t = 0
        x, y = self.state.agent
        self.goals = 0
        self.died = False
        self.touched = {TYPE_OF_CODE[int(tiles[y, x])]}
        return self.observe()

    def observe(self):
        return encode_observation(self.state, self.cfg.obs_mode, channels=self.channels)

    def step(self, action):
        if self.done:
            raise ContractViolation("step() called on a finished episode; reset() first")
        if not 0 <= action < N_ACTIONS:
            raise ContractViolation(f"invalid action {action}")
        st = self.state
        move = self.task.dynamics_perm[int(action)]
        self.t += 1
        reward = 0.0
        if st.energy > 0:
            st.energy -= self.cfg.move_cost
            dx, dy = ACTION_DELTAS[move]
            x, y = st.agent
            nx, ny, bits = kernels.krazy_move(st.tiles, x, y, dx, dy, bool(st.keys_held), self._tele)
            for code in range(9):
                if bits >> code & 1:
                    self.touched.add(TYPE_OF_CODE[code])
            st.agent = (int(nx), int(ny))
            reward = self._tile_effect()
        if self.t >= self.task.horizon:
            self.done = True
        info = {"goals": self.goals, "died": self.died, "touched": frozenset(self.touched),
                "goal_cells": frozenset(st.goals_taken), "t": self.t}
        return StepResult(self.observe(), reward, self.done, info)

    def _tile_effect(self):
        st = self.state
        x, y = st.agent
        code = int(st.tiles[y, x])
        if code == GOAL:
            st.goals_taken.add((x, y))
            st.tiles[y, x] = NORMAL
            self.goals += 1
            return 1.0
        if code == KEY:
            st.keys_held.add(0)
            st.tiles[y, x] = NORMAL
        elif code == ENERGY:
            st.energy += self.cfg.energy_refill
        elif code == DEATH:
            self.died = True
            self.done = True
        return 0.0


def make_krazy(task, cfg=None):
    return KrazyWorld(task, cfg)


def hand_task(palette=None, dynamics=None, horizon=64):
    """A krazy TaskSpec for hand-built grids in tests and fixtures."""
    return TaskSpec("krazy", 0, tuple(palette or range(8)), tuple(dynamics or range(4)), horizon)
