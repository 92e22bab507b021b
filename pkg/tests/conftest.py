import numpy as np
import pytest

from metaexp.envs import KrazyConfig, KrazyWorld, load_grid
from metaexp.envs.krazy import hand_task


def krazy_grid(rows, start, energy=None, dynamics=None, palette=None, horizon=64):
    """A KrazyWorld over a hand-written board, already reset at ``start``."""
    cfg = KrazyConfig(width=len(rows[0]), height=len(rows))
    env = KrazyWorld(hand_task(palette=palette, dynamics=dynamics, horizon=horizon), cfg,
                     tiles=load_grid("\n".join(rows)))
    env.reset(start=start, energy=energy)
    return env


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
