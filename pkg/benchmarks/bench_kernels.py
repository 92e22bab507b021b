"""Compiled vs pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Times each kernel on representative inputs and prints the speedup.  Also
times a Krazy World rollout under each backend, since that is where the
kernels sit on the hot path.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from metaexp import kernels
from metaexp.kernels import _pykernels as py


def cases(rng):
    r = rng.normal(size=2000)
    v = rng.normal(size=2000)
    mask = (rng.random(2000) < 0.5).astype(np.float64)
    tiles = rng.integers(0, 9, size=(10, 10)).astype(np.int8)
    tiles[tiles == 7] = 0
    ch = np.concatenate([[-1], np.arange(8)]).astype(np.int64)
    win, grid = np.zeros(81), np.zeros(900)
    tp = (-1, -1, -1, -1)
    return {
        "discounted_returns(2000)": lambda k: k.discounted_returns(r, 0.99),
        "masked_returns(2000)": lambda k: k.masked_returns(r, mask, 0.99),
        "gae_advantages(2000)": lambda k: k.gae_advantages(r, v, 0.99, 0.95, 0.0),
        "krazy_move": lambda k: k.krazy_move(tiles, 4, 4, 1, 0, False, tp),
        "encode_window": lambda k: k.encode_window(tiles, 4, 4, 1, ch, win),
        "encode_grid(10x10)": lambda k: k.encode_grid(tiles, 4, 4, ch, grid),
    }


ROLLOUT = """
import numpy as np, time
from metaexp import kernels
from metaexp.envs import KrazyWorld, sample_task
rng = np.random.default_rng(0)
t0 = time.perf_counter()
for _ in range(200):
    env = KrazyWorld(sample_task("krazy", rng))
    env.reset(rng)
    while not env.done:
        env.step(int(rng.integers(4)))
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def rollout_time(pure):
    env = dict(os.environ)
    if pure:
        env["METAEXP_PURE_PYTHON"] = "1"
    else:
        env.pop("METAEXP_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", ROLLOUT], env=env, capture_output=True, text=True, check=True)
    name, secs = out.stdout.split()
    return name, float(secs)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python us':>11s} {'compiled us':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        n = 20 if "returns" in name or "gae" in name else 2000
        tp = min(timeit.repeat(lambda: fn(py), number=n, repeat=args.repeat)) / n * 1e6
        tc = min(timeit.repeat(lambda: fn(kernels.compiled), number=n, repeat=args.repeat)) / n * 1e6
        print(f"{name:28s} {tp:11.2f} {tc:12.2f} {tp / tc:7.1f}x")
    b1, s1 = rollout_time(pure=True)
    b2, s2 = rollout_time(pure=False)
    print(f"\n200 Krazy World episodes: {b1} {s1:.3f}s, {b2} {s2:.3f}s ({s1 / s2:.1f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
