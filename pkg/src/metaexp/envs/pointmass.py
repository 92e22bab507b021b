"""2-D point mass with one rewarding corner, discretised to four moves."""
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from .base import N_ACTIONS, StepResult

CORNERS = ((1, 1), (-1, 1), (-1, -1), (1, -1))
# moves in the plane: up is +y
_MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))


@dataclass
class PointmassConfig:
    step_size: float = 0.1
    goal_radius: float = 0.2


class PointMass:
    """Position lives on an integer lattice of ``step_size`` spacing inside
    [-1, 1]^2 so repeated moves are exact.  Reward +1 and termination within
    ``goal_radius`` of the task's corner; zero elsewhere."""

    n_actions = N_ACTIONS
    obs_len = 2

    def __init__(self, task, cfg=None):
        if task.family != "pointmass":
            raise ContractViolation(f"PointMass cannot run a {task.family} task")
        if not 0 <= task.corner < 4:
            raise ContractViolation("pointmass task needs a corner in 0..3")
        self.task = task
        self.cfg = cfg or PointmassConfig()
        self.extent = int(round(1.0 / self.cfg.step_size))
        cx, cy = CORNERS[task.corner]
        self.goal = (cx * self.extent, cy * self.extent)
        self._radius_sq = (self.cfg.goal_radius / self.cfg.step_size) ** 2
        self.done = True

    @property
    def position(self):
        return (self.pos[0] * self.cfg.step_size, self.pos[1] * self.cfg.step_size)

    def reset(self, rng=None, start=None):
        self.pos = (0, 0) if start is None else tuple(int(round(v / self.cfg.step_size)) for v in start)
        self.done = False
        self.t = 0
        return self.observe()

    def observe(self):
        return np.array(self.pos, dtype=np.float64) / self.extent

    def step(self, action):
        if self.done:
            raise ContractViolation("step() called on a finished episode; reset() first")
        dx, dy = _MOVES[self.task.dynamics_perm[int(action)]]
        e = self.extent
        x = min(e, max(-e, self.pos[0] + dx))
        y = min(e, max(-e, self.pos[1] + dy))
        self.pos = (x, y)
        self.t += 1
        gx, gy = self.goal
        reward = 0.0
        if (x - gx) ** 2 + (y - gy) ** 2 <= self._radius_sq + 1e-9:
            reward = 1.0
            self.done = True
        if self.t >= self.task.horizon:
            self.done = True
        return StepResult(self.observe(), reward, self.done, {"t": self.t})
