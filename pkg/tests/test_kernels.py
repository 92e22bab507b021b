import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metaexp import kernels
from metaexp.kernels import _pykernels as py

compiled = kernels.compiled
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")

rewards = arrays(np.float64, st.integers(0, 40), elements=st.floats(-5, 5))
gammas = st.floats(0.0, 1.0)


def test_backend_is_named():
    assert kernels.BACKEND in ("compiled", "python")


def test_discounted_returns_hand_values():
    out = py.discounted_returns(np.array([1.0, 0.0, 2.0]), 0.5)
    assert np.array_equal(out, [1.5, 1.0, 2.0])


def test_gae_lambda_one_zero_values_is_return():
    r = np.array([1.0, 2.0, 3.0])
    assert np.allclose(py.gae_advantages(r, np.zeros(3), 0.9, 1.0), py.discounted_returns(r, 0.9))


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(rewards, gammas)
def test_returns_parity(r, g):
    assert np.array_equal(py.discounted_returns(r, g), compiled.discounted_returns(r, g))


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(rewards, gammas, st.data())
def test_masked_and_gae_parity(r, g, data):
    n = len(r)
    mask = np.array(data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=n, max_size=n)))
    vals = data.draw(arrays(np.float64, n, elements=st.floats(-3, 3)))
    lam = data.draw(st.floats(0.0, 1.0))
    assert np.array_equal(py.masked_returns(r, mask, g), compiled.masked_returns(r, mask, g))
    assert np.array_equal(py.gae_advantages(r, vals, g, lam, 0.5),
                          compiled.gae_advantages(r, vals, g, lam, 0.5))


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_krazy_move_and_encoding_parity(seed):
    rng = np.random.default_rng(seed)
    tiles = rng.integers(0, 9, size=(6, 7)).astype(np.int8)
    tele = np.argwhere(tiles == 7)
    tp = (int(tele[0][1]), int(tele[0][0]), int(tele[1][1]), int(tele[1][0])) if len(tele) == 2 else (-1, -1, -1, -1)
    x, y = int(rng.integers(7)), int(rng.integers(6))
    dx, dy = [(0, -1), (0, 1), (-1, 0), (1, 0)][int(rng.integers(4))]
    key = bool(rng.integers(2))
    assert py.krazy_move(tiles.copy(), x, y, dx, dy, key, tp) == \
        compiled.krazy_move(tiles.copy(), x, y, dx, dy, key, tp)
    ch = np.concatenate([[-1], rng.permutation(8)]).astype(np.int64)
    a, b = np.zeros(81), np.zeros(81)
    py.encode_window(tiles, x, y, 1, ch, a)
    compiled.encode_window(tiles, x, y, 1, ch, b)
    assert np.array_equal(a, b)
    a, b = np.zeros(6 * 7 * 9), np.zeros(6 * 7 * 9)
    py.encode_grid(tiles, x, y, ch, a)
    compiled.encode_grid(tiles, x, y, ch, b)
    assert np.array_equal(a, b)


def test_env_var_forces_python_backend():
    env = dict(os.environ, METAEXP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from metaexp import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
