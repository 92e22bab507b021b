import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import krazy_grid
from metaexp.envs import (EnvConfig, KrazyConfig, KrazyWorld, TaskSpec, dump_grid, flood_fill,
                          load_grid, make_env, maze_generate, sample_task)
from metaexp.envs.base import AGENT_CHANNEL, N_CHANNELS, WALL, channel_map, encode_observation
from metaexp.envs.maze import Maze, playable_size
from metaexp.envs.pointmass import PointMass
from metaexp.errors import ContractViolation

UP, DOWN, LEFT, RIGHT = range(4)


# ------------------------------------------------------------ tile rules

def test_goal_gives_one_and_does_not_terminate():
    env = krazy_grid([".G.", "...", "..."], (0, 0))
    r = env.step(RIGHT)
    assert r.reward == 1.0 and not r.done


def test_goal_pays_once_per_cell():
    env = krazy_grid([".G.", "...", "..."], (0, 0))
    env.step(RIGHT)
    env.step(LEFT)
    assert env.step(RIGHT).reward == 0.0


def test_death_terminates_without_reward():
    env = krazy_grid([".D.", "...", "..."], (0, 0))
    r = env.step(RIGHT)
    assert r.done and r.reward == 0.0 and r.info["died"]


def test_wall_blocks():
    env = krazy_grid([".X.", "...", "..."], (0, 0))
    env.step(RIGHT)
    assert env.state.agent == (0, 0)


def test_border_blocks():
    env = krazy_grid(["...", "...", "..."], (0, 0))
    env.step(UP)
    env.step(LEFT)
    assert env.state.agent == (0, 0)


def test_ice_slides_until_non_ice():
    env = krazy_grid([".II..", ".....", "....."], (0, 0))
    env.step(RIGHT)
    assert env.state.agent == (3, 0)


def test_lock_needs_key():
    env = krazy_grid([".L.", "K..", "..."], (0, 0))
    env.step(RIGHT)
    assert env.state.agent == (0, 0)
    env.step(DOWN)  # pick up key
    env.step(UP)
    env.step(RIGHT)
    assert env.state.agent == (1, 0)


def test_teleporter_moves_to_partner():
    env = krazy_grid([".T..", "....", "...T"], (0, 0))
    env.step(RIGHT)
    assert env.state.agent == (3, 2)


def test_no_energy_freezes_agent_but_time_passes():
    env = krazy_grid(["...", "...", "..."], (0, 0), energy=0, horizon=2)
    r1 = env.step(RIGHT)
    r2 = env.step(RIGHT)
    assert env.state.agent == (0, 0) and not r1.done and r2.done


def test_energy_square_refills():
    env = krazy_grid([".E.", "...", "..."], (0, 0), energy=2)
    env.step(RIGHT)
    assert env.state.energy == 2 - 1 + env.cfg.energy_refill


def test_step_after_done_raises():
    env = krazy_grid([".D.", "...", "..."], (0, 0))
    env.step(RIGHT)
    with pytest.raises(ContractViolation):
        env.step(RIGHT)


def test_grid_text_roundtrip():
    rows = [".GID", "XLKT", "E..."]
    assert dump_grid(load_grid("\n".join(rows))) == "\n".join(rows)


# ------------------------------------------------------ task distribution

def test_dynamics_permutations_uniform():
    rng = np.random.default_rng(0)
    n = 10_000
    counts = {}
    for _ in range(n):
        t = sample_task("krazy", rng)
        counts[t.dynamics_perm] = counts.get(t.dynamics_perm, 0) + 1
    assert len(counts) == 24
    p = 1 / 24
    sd = np.sqrt(n * p * (1 - p))
    assert all(abs(c - n * p) <= 3 * sd + 1 for c in counts.values())


def test_taskspec_rejects_non_permutation():
    with pytest.raises(ContractViolation):
        TaskSpec("krazy", 0, palette_perm=(0, 0, 1, 2, 3, 4, 5, 6))


def test_pointmass_corners_all_drawn():
    rng = np.random.default_rng(0)
    corners = {sample_task("pointmass", rng).corner for _ in range(200)}
    assert corners == {0, 1, 2, 3}


# ------------------------------------------------------------ properties

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**62), st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_same_task_same_actions_same_behaviour(seed, acts):
    task = sample_task("krazy", np.random.default_rng(seed))
    runs = []
    for _ in range(2):
        env = KrazyWorld(task)
        obs = [env.reset(np.random.default_rng(seed))]
        rews = []
        for a in acts:
            if env.done:
                break
            r = env.step(a)
            obs.append(r.obs)
            rews.append(r.reward)
        runs.append((np.array(obs), rews))
    assert np.array_equal(runs[0][0], runs[1][0]) and runs[0][1] == runs[1][1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**62), st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_dynamics_permutation_equivariance(seed, acts):
    task = sample_task("krazy", np.random.default_rng(seed))
    ident = TaskSpec("krazy", task.layout_seed, task.palette_perm, (0, 1, 2, 3), task.horizon)
    a, b = KrazyWorld(task), KrazyWorld(ident)
    a.reset(np.random.default_rng(1))
    b.reset(np.random.default_rng(1))
    for act in acts:
        if a.done:
            break
        ra, rb = a.step(act), b.step(task.dynamics_perm[act])
        assert a.state.agent == b.state.agent
        assert (ra.reward, ra.done) == (rb.reward, rb.done)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**62), st.permutations(range(8)))
def test_palette_permutation_relabels_channels(seed, perm):
    task = sample_task("krazy", np.random.default_rng(seed))
    env = KrazyWorld(task)
    env.reset(np.random.default_rng(0))
    base = encode_observation(env.state, "local", tuple(range(8))).reshape(9, N_CHANNELS)
    moved = encode_observation(env.state, "local", tuple(perm)).reshape(9, N_CHANNELS)
    for code in range(8):
        assert np.array_equal(moved[:, perm[code]], base[:, code])
    assert np.array_equal(moved[:, AGENT_CHANNEL], base[:, AGENT_CHANNEL])


def test_channel_map_normal_is_unlabelled():
    ch = channel_map(tuple(range(8)))
    assert ch[0] == -1 and list(ch[1:]) == list(range(8))


def test_global_observation_length():
    env = KrazyWorld(sample_task("krazy", np.random.default_rng(0)), KrazyConfig(obs_mode="global"))
    assert env.reset(np.random.default_rng(0)).shape == (10 * 10 * N_CHANNELS,)


# ------------------------------------------------------------------ maze

def test_maze_connected_on_100_seeds():
    for s in range(100):
        tiles, goal = maze_generate(s, 20)
        ys, xs = np.nonzero(tiles != WALL)
        reach = flood_fill(tiles, (int(xs[0]), int(ys[0])))
        assert len(reach) == len(xs) and goal in reach


def test_maze_size_rounds_to_odd():
    assert playable_size(20) == 19
    assert maze_generate(3, 20)[0].shape == (19, 19)


def test_maze_wall_bump_penalty():
    task = TaskSpec("maze", 5, horizon=50)
    env = Maze(task)
    env.reset(start=(1, 1))
    # (0, 1) is the outer wall ring
    r = env.step(LEFT)
    assert r.reward == -0.01 and env.state.agent == (1, 1)


# ------------------------------------------------------------- pointmass

def test_pointmass_reaches_corner():
    env = PointMass(TaskSpec("pointmass", 0, horizon=50, corner=0))
    env.reset(start=(0.8, 0.8))
    assert env.step(UP).reward == 0.0  # (0.8, 0.9) is 0.22 away
    r = env.step(RIGHT)
    assert r.reward == 1.0 and r.done


def test_pointmass_wrong_corner_continues():
    env = PointMass(TaskSpec("pointmass", 0, horizon=100, corner=0))
    env.reset()
    for _ in range(10):
        r = env.step(LEFT)
    for _ in range(10):
        r = env.step(DOWN)
    assert env.position == (-1.0, -1.0) and r.reward == 0.0 and not r.done


def test_pointmass_clamped_to_box():
    env = PointMass(TaskSpec("pointmass", 0, horizon=100, corner=2))
    env.reset()
    for _ in range(30):
        env.step(RIGHT)
    assert env.position[0] == 1.0


def test_make_env_dispatch():
    rng = np.random.default_rng(0)
    for fam, cls in (("krazy", KrazyWorld), ("maze", Maze), ("pointmass", PointMass)):
        assert isinstance(make_env(sample_task(fam, rng), EnvConfig()), cls)


# ------------------------------------------------------- worked examples

def test_task_sampling_deterministic_and_maze_identity():
    a = sample_task("krazy", np.random.default_rng(9))
    assert a == sample_task("krazy", np.random.default_rng(9))
    m = sample_task("maze", np.random.default_rng(9))
    assert m.palette_perm == tuple(range(8)) and m.dynamics_perm == (0, 1, 2, 3)


def test_resets():
    rng = np.random.default_rng(0)
    k = KrazyWorld(sample_task("krazy", rng))
    k.reset(rng)
    assert k.state.energy == k.cfg.initial_energy
    p = PointMass(TaskSpec("pointmass", 0, horizon=5, corner=1))
    assert np.array_equal(p.reset(rng), [0.0, 0.0])
    for s in range(20):
        mz = Maze(TaskSpec("maze", s, horizon=5))
        mz.reset(np.random.default_rng(s))
        assert mz.state.agent != mz.goal


def test_same_seed_same_maze():
    assert np.array_equal(maze_generate(4)[0], maze_generate(4)[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**62))
def test_local_encoding_blocks_are_one_hot(seed):
    rng = np.random.default_rng(seed)
    env = KrazyWorld(sample_task("krazy", rng))
    obs = env.reset(rng).reshape(9, N_CHANNELS)
    assert obs.shape[0] * obs.shape[1] == 81
    x, y = env.state.agent
    h, w = env.state.tiles.shape
    for k, (dy, dx) in enumerate((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)):
        cx, cy = x + dx, y + dy
        if k == 4:
            assert obs[k].sum() == 1 and obs[k, AGENT_CHANNEL] == 1
        elif 0 <= cx < w and 0 <= cy < h and env.state.tiles[cy, cx] != 0:
            assert obs[k].sum() == 1
        else:
            assert obs[k].sum() in (0, 1)


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(8)))
def test_palette_then_inverse_is_identity(perm):
    inv = tuple(int(v) for v in np.argsort(perm))
    rng = np.random.default_rng(3)
    env = KrazyWorld(sample_task("krazy", rng))
    env.reset(rng)
    base = encode_observation(env.state, "local", tuple(range(8))).reshape(9, N_CHANNELS)
    once = encode_observation(env.state, "local", tuple(perm)).reshape(9, N_CHANNELS)
    back = once.copy()
    back[:, :8] = once[:, :8][:, list(perm)]
    assert np.array_equal(back, base)
    assert tuple(perm[i] for i in inv) == tuple(range(8))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**62))
def test_reward_conserved_by_goal_count(seed):
    rng = np.random.default_rng(seed)
    task = sample_task("krazy", rng, horizon=200)
    env = KrazyWorld(task, KrazyConfig(n_goal=3, n_death=0, initial_energy=500))
    env.reset(rng)
    total = 0.0
    while not env.done:
        total += env.step(int(rng.integers(4))).reward
    assert total <= 3 and total == len(env.state.goals_taken)


def test_all_ice_board_terminates():
    env = krazy_grid(["IIII", "I.II", "IIII"], (1, 1), horizon=5)
    steps = 0
    while not env.done:
        env.step(RIGHT)
        steps += 1
    assert steps == 5 and env.state.agent == (3, 1)
