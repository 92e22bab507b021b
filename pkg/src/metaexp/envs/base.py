"""Shared environment types: tasks, tile codes, observation encoding, text grids."""
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import ContractViolation

# tile codes; observation channels cover the 8 non-normal codes + 1 agent channel
NORMAL, GOAL, ICE, DEATH, WALL, LOCK, KEY, TELEPORTER, ENERGY = range(9)
TILE_NAMES = ("normal", "goal", "ice", "death", "wall", "lock", "key", "teleporter", "energy")
N_TILE_CODES = 9
N_CHANNELS = kernels.N_CHANNELS
AGENT_CHANNEL = kernels.AGENT_CHANNEL

# the eight tile *types* used by the system-identification heuristics; a key
# square belongs to the lock mechanism
TYPE_OF_CODE = (NORMAL, GOAL, ICE, DEATH, WALL, LOCK, LOCK, TELEPORTER, ENERGY)
N_TILE_TYPES = 8

UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("up", "down", "left", "right")
ACTION_DELTAS = ((0, -1), (0, 1), (-1, 0), (1, 0))
N_ACTIONS = 4

IDENTITY_PALETTE = tuple(range(8))
IDENTITY_DYNAMICS = tuple(range(4))

FAMILIES = ("krazy", "maze", "pointmass")
DEFAULT_HORIZONS = {"krazy": 64, "maze": 200, "pointmass": 32}

CHARS = ".GIDXLKTE"
_CHAR_TO_CODE = {c: i for i, c in enumerate(CHARS)}
_CHAR_TO_CODE["#"] = WALL


@dataclass(frozen=True)
class TaskSpec:
    """A sampled MDP.  ``corner`` is only meaningful for pointmass."""

    family: str
    layout_seed: int
    palette_perm: tuple = IDENTITY_PALETTE
    dynamics_perm: tuple = IDENTITY_DYNAMICS
    horizon: int = 64
    corner: int = -1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractViolation(f"unknown task family {self.family!r}")
        if sorted(self.palette_perm) != list(range(8)):
            raise ContractViolation("palette_perm must be a permutation of 0..7")
        if sorted(self.dynamics_perm) != list(range(4)):
            raise ContractViolation("dynamics_perm must be a permutation of 0..3")
        if self.horizon < 1:
            raise ContractViolation("horizon must be positive")


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass
class GridState:
    tiles: np.ndarray
    agent: tuple
    energy: int = 0
    keys_held: set = field(default_factory=set)
    goals_taken: set = field(default_factory=set)

    @property
    def width(self):
        return self.tiles.shape[1]

    @property
    def height(self):
        return self.tiles.shape[0]


def sample_task(family, rng, horizon=None, seed_range=(0, 2**62)):
    """Draw a task; permutations are uniform (identity allowed).

    Mazes and pointmass keep identity palette and dynamics: their tasks differ
    by layout seed and rewarded corner respectively.
    """
    if family not in FAMILIES:
        raise ContractViolation(f"unknown task family {family!r}")
    lo, hi = seed_range
    layout_seed = int(rng.integers(lo, hi))
    horizon = DEFAULT_HORIZONS[family] if horizon is None else int(horizon)
    if family == "krazy":
        palette = tuple(int(v) for v in rng.permutation(8))
        dynamics = tuple(int(v) for v in rng.permutation(4))
        return TaskSpec(family, layout_seed, palette, dynamics, horizon)
    if family == "maze":
        return TaskSpec(family, layout_seed, horizon=horizon)
    return TaskSpec(family, layout_seed, horizon=horizon, corner=int(rng.integers(4)))


def channel_map(palette_perm):
    """Tile code -> observation channel (-1 for normal)."""
    ch = np.full(N_TILE_CODES, -1, dtype=np.int64)
    for code in range(1, N_TILE_CODES):
        ch[code] = palette_perm[code - 1]
    return ch


def obs_length(mode, width=None, height=None):
    if mode == "local":
        return 9 * N_CHANNELS
    if mode == "global":
        return width * height * N_CHANNELS
    raise ContractViolation(f"unknown observation mode {mode!r}")


def encode_observation(grid, mode="local", palette_perm=IDENTITY_PALETTE, channels=None):
    """Basis-vector observation of ``grid``.

    Layout is cell-major: cell ``k`` occupies ``[9k, 9k+9)``.  Channels
    0..7 are tile codes goal, ice, death, wall, lock, key, teleporter,
    energy as relabelled by ``palette_perm``; channel 8 is the agent.
    Local mode is the 3x3 window around the agent in row-major order.
    """
    ch = channel_map(palette_perm) if channels is None else channels
    x, y = grid.agent
    tiles = grid.tiles
    if mode == "local":
        out = np.zeros(9 * N_CHANNELS)
        kernels.encode_window(tiles, int(x), int(y), 1, ch, out)
    elif mode == "global":
        out = np.zeros(tiles.size * N_CHANNELS)
        kernels.encode_grid(tiles, int(x), int(y), ch, out)
    else:
        raise ContractViolation(f"unknown observation mode {mode!r}")
    return out


def dump_grid(tiles):
    """One character per tile, one line per row."""
    return "\n".join("".join(CHARS[int(c)] for c in row) for row in tiles)


def load_grid(text):
    rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ContractViolation("grid text must be a non-empty rectangle")
    try:
        return np.array([[_CHAR_TO_CODE[c] for c in r] for r in rows], dtype=np.int8)
    except KeyError as exc:
        raise ContractViolation(f"unknown tile character {exc}") from None


def flood_fill(tiles, start, passable=lambda code: code != WALL):
    """Cells reachable from ``start`` by 4-neighbour moves over passable tiles."""
    h, w = tiles.shape
    seen = {tuple(start)}
    stack = [tuple(start)]
    while stack:
        x, y = stack.pop()
        for dx, dy in ACTION_DELTAS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and (nx, ny) not in seen and passable(int(tiles[ny, nx])):
                seen.add((nx, ny))
                stack.append((nx, ny))
    return seen
