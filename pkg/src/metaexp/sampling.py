"""Keyed rng streams and the worker pool used for rollout collection.

Every episode draws from its own generator keyed by
(run seed, phase, iteration, task index, episode index), and every unit of
work covers exactly one task, so results do not depend on the worker count.
"""
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .envs import make_env
from .rlcore import collect_batch

PHASES = {"explore": 0, "exploit": 1, "eval_pre": 2, "eval_post": 3, "trial": 4,
          "eval_trial": 5, "init": 6, "task": 7}


def episode_rng(seed, phase, it, task_idx, episode):
    return np.random.default_rng([int(seed), PHASES[phase], int(it), int(task_idx), int(episode)])


def episode_rngs(seed, phase, it, task_idx, n):
    return [episode_rng(seed, phase, it, task_idx, e) for e in range(n)]


def resolve_workers(requested):
    cap = os.environ.get("METAEXP_THREADS")
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def episodes_unit(args):
    """Collect ``n`` episodes of one task under frozen params."""
    task, env_cfg, policy, params, n, key, explore_flag, task_id = args
    seed, phase, it = key
    envs = [make_env(task, env_cfg) for _ in range(n)]
    return collect_batch(envs, policy, params, task.horizon,
                         episode_rngs(seed, phase, it, task_id, n), explore_flag, task_id)


def trial_unit(args):
    from .metaalgos import rl2_trial
    task, env_cfg, policy, params, k, p, key, task_id = args
    seed, phase, it = key
    return rl2_trial(make_env(task, env_cfg), policy, params, k, p,
                     episode_rngs(seed, phase, it, task_id, k), task_id)


class Sampler:
    """Maps work units over a process pool (or in-process for one worker)."""

    def __init__(self, workers=1):
        self.workers = resolve_workers(workers)
        self._pool = None

    def map(self, fn, items):
        items = list(items)
        if self.workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(max_workers=self.workers)
        return list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
