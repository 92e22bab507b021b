"""Experiment protocol: task pools, the meta-training loop, test-time gap
evaluation, the gradient-steps sweep, Krazy World heuristics, and CSV output."""
import csv
import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvConfig, make_env, sample_task
from .envs.base import DEFAULT_HORIZONS, N_TILE_TYPES
from .errors import ContractViolation
from .metaalgos import ALGOS, MetaConfig, MetaContext, inner_update, meta_step
from .policy import GRUPolicy, MLPPolicy, PolicyConfig, save_params
from .rlcore import Adam
from .sampling import Sampler, episodes_unit, trial_unit

log = logging.getLogger(__name__)

CSV_HEADER = ("env_steps", "algo", "env", "seed", "pre_return", "post_return", "gap",
              "tile_fraction", "death_visits", "goals_reached")
TRAIN_SEED_RANGE = (0, 2**62)
TEST_SEED_RANGE = (2**62, 2**63)


@dataclass
class ExperimentConfig:
    algo: str = "emaml"
    env: str = "krazy"
    seed: int = 0
    n_train_tasks: int = 32
    n_test_tasks: int = 64
    budget: int = 1_000_000
    eval_every: int = 10
    repeats: int = 5
    samplers: int = 8
    horizon: int = None
    hyper_mode: str = "fixed"
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    envs: EnvConfig = field(default_factory=EnvConfig)

    @property
    def task_horizon(self):
        return DEFAULT_HORIZONS[self.env] if self.horizon is None else self.horizon

    def validate(self):
        if self.algo not in ALGOS:
            raise ContractViolation(f"algo: unknown algorithm {self.algo!r}")
        if self.env not in DEFAULT_HORIZONS:
            raise ContractViolation(f"env: unknown environment {self.env!r}")
        for key in ("n_train_tasks", "n_test_tasks", "budget", "eval_every", "repeats", "samplers"):
            if getattr(self, key) < 1:
                raise ContractViolation(f"{key}: must be >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ContractViolation("horizon: must be >= 1")
        if self.hyper_mode not in ("fixed", "sampled"):
            raise ContractViolation(f"hyper_mode: unknown mode {self.hyper_mode!r}")
        self.meta.validate()
        return self


@dataclass
class CurvePoint:
    env_steps: int
    pre_return: float
    post_return: float
    gap: float
    tile_fraction: float = None
    death_visits: float = None
    goals_reached: float = None


# ----------------------------------------------------------------- pools

def train_tasks(cfg, seed, it):
    rng = np.random.default_rng([int(seed), 7, 0, int(it)])
    return [sample_task(cfg.env, rng, cfg.task_horizon, TRAIN_SEED_RANGE) for _ in range(cfg.n_train_tasks)]


def test_tasks(cfg, seed):
    rng = np.random.default_rng([int(seed), 7, 1])
    return [sample_task(cfg.env, rng, cfg.task_horizon, TEST_SEED_RANGE) for _ in range(cfg.n_test_tasks)]


def make_policy(cfg, obs_len):
    if cfg.algo in ("rl2", "erl2"):
        return GRUPolicy.from_config(obs_len, 4, cfg.policy)
    return MLPPolicy.from_config(obs_len, 4, cfg.policy)


def env_obs_len(cfg):
    probe = sample_task(cfg.env, np.random.default_rng(0), cfg.task_horizon)
    return make_env(probe, cfg.envs).obs_len


def params_hash(params):
    h = hashlib.sha256()
    for name, t in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return h.hexdigest()


# ------------------------------------------------------------ evaluation

def gap_unit(args):
    """Test-time adaptation on one task: explore under theta, one inner
    update, then exploit under theta'."""
    task, env_cfg, policy, theta, meta, key, task_id, n_steps = args
    seed, it = key
    explore = episodes_unit((task, env_cfg, policy, theta, meta.explore_episodes,
                             (seed, "eval_pre", it), 1, task_id))
    rng = np.random.default_rng([int(seed), 98, int(it), int(task_id)])
    out = {"explore": explore, "post": []}
    p = theta
    for _ in range(n_steps):
        p = inner_update(p, explore, meta.inner, policy, meta.gamma, rng=rng).detach()
        out["post"].append(episodes_unit((task, env_cfg, policy, p, meta.exploit_episodes,
                                          (seed, "eval_post", it), 0, task_id)))
    return out


def _mean_return(trajs):
    return float(np.mean([t.total_return for t in trajs]))


def _adapt_units(theta, tasks, cfg, policy, sampler, seed, it, n_steps):
    units = [(t, cfg.envs, policy, theta, cfg.meta, (seed, it), i, n_steps) for i, t in enumerate(tasks)]
    return sampler.map(gap_unit, units)


def evaluate_gap(theta, tasks, cfg, policy, sampler=None, seed=0, it=0):
    """Per-task (pre, post, gap) and their means.

    MAML family: pre = explore episodes under theta, post = episodes after
    one inner update.  RL^2 family: pre = mean of the first p
    episodes of a trial, post = mean of the remaining ones.
    """
    sampler = sampler or Sampler(1)
    meta = cfg.meta
    if cfg.algo in ("rl2", "erl2"):
        k, p = meta.rl2_episodes, meta.rl2_explore
        units = [(t, cfg.envs, policy, theta, k, p, (seed, "eval_trial", it), i) for i, t in enumerate(tasks)]
        trials = sampler.map(trial_unit, units)
        pre = np.array([_mean_return(tr[:p]) if p else np.nan for tr in trials])
        post = np.array([_mean_return(tr[p:]) for tr in trials])
        episode_means = [float(np.mean([tr[e].total_return for tr in trials])) for e in range(k)]
        rollouts = trials
    else:
        res = _adapt_units(theta, tasks, cfg, policy, sampler, seed, it, 1)
        pre = np.array([_mean_return(r["explore"]) for r in res])
        post = np.array([_mean_return(r["post"][0]) for r in res])
        episode_means = None
        rollouts = [r["explore"] + r["post"][0] for r in res]
    gap = post - pre
    return {"pre": pre, "post": post, "gap": gap, "mean_pre": float(np.mean(pre)),
            "mean_post": float(np.mean(post)), "mean_gap": float(np.mean(gap)),
            "episode_means": episode_means, "rollouts": rollouts}


def grad_steps_sweep(theta, tasks, cfg, policy, max_steps, sampler=None, seed=0):
    """Rows (steps, mean return) for 0..max_steps test-time inner updates on
    the same explore batch; row 0 is the pre-update return."""
    if cfg.algo not in ("maml", "emaml"):
        raise ContractViolation("grad_steps_sweep applies to maml/emaml only")
    if max_steps < 1:
        raise ContractViolation("max_steps must be >= 1")
    res = _adapt_units(theta, tasks, cfg, policy, sampler or Sampler(1), seed, 0, max_steps)
    rows = [(0, float(np.mean([_mean_return(r["explore"]) for r in res])))]
    for s in range(max_steps):
        rows.append((s + 1, float(np.mean([_mean_return(r["post"][s]) for r in res]))))
    return rows


def heuristic_metrics(rollouts, family="krazy"):
    """System-identification heuristics over test rollouts.

    ``rollouts`` holds one list of Trajectories per task (its trial).  Returns
    means over tasks of (distinct tile types touched / 8, episodes ended by
    death, distinct goal cells collected).
    """
    if family != "krazy":
        raise ContractViolation("heuristic metrics are defined for Krazy World only")
    fr, deaths, goals = [], [], []
    for trial in rollouts:
        touched, cells, d = set(), set(), 0
        for t in trial:
            if "touched" not in t.info:
                raise ContractViolation("rollout info lacks Krazy World counters")
            touched |= t.info["touched"]
            cells |= t.info.get("goal_cells", frozenset())
            d += int(t.info["died"])
        fr.append(len(touched) / N_TILE_TYPES)
        deaths.append(d)
        goals.append(len(cells))
    return float(np.mean(fr)), float(np.mean(deaths)), float(np.mean(goals))


# ------------------------------------------------------------- the loop

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_curve(path, cfg, seed, points):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in points:
            w.writerow([_fmt(p.env_steps), cfg.algo, cfg.env, seed, _fmt(p.pre_return),
                        _fmt(p.post_return), _fmt(p.gap), _fmt(p.tile_fraction),
                        _fmt(p.death_visits), _fmt(p.goals_reached)])
    os.replace(tmp, path)


def read_curve(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def average_points(per_repeat):
    n = min(len(ps) for ps in per_repeat)
    out = []
    for i in range(n):
        col = lambda name: [getattr(ps[i], name) for ps in per_repeat]  # noqa: E731
        vals = {}
        for name in ("env_steps", "pre_return", "post_return", "gap", "tile_fraction",
                     "death_visits", "goals_reached"):
            c = col(name)
            vals[name] = None if c[0] is None else float(np.mean(c))
        vals["env_steps"] = int(round(vals["env_steps"]))
        out.append(CurvePoint(**vals))
    return out


def _iteration_bound(cfg):
    m = cfg.meta
    per_task = (m.rl2_episodes if cfg.algo in ("rl2", "erl2") else m.explore_episodes + m.exploit_episodes)
    return cfg.n_train_tasks * per_task * cfg.task_horizon


def _sampled_hypers(cfg, seed):
    """Hyperparameter draw for ``hyper_mode = sampled``: log-uniform within
    a factor of 3 of the configured inner step and meta step."""
    import copy
    cfg = copy.deepcopy(cfg)
    rng = np.random.default_rng([int(seed), 7, 2])
    cfg.meta.inner.alpha *= float(np.exp(rng.uniform(-np.log(3), np.log(3))))
    cfg.meta.beta *= float(np.exp(rng.uniform(-np.log(3), np.log(3))))
    return cfg


def train_one(cfg, seed, sampler, on_point=None):
    """One repeat: returns (curve points, final theta, policy)."""
    if cfg.hyper_mode == "sampled":
        cfg = _sampled_hypers(cfg, seed)
    policy = make_policy(cfg, env_obs_len(cfg))
    theta = policy.init_params(np.random.default_rng([int(seed), 6]))
    ctx = MetaContext(policy, cfg.envs, sampler, Adam(cfg.meta.beta), seed)
    tests = test_tasks(cfg, seed)
    bound = _iteration_bound(cfg)
    points = []

    def evaluate(steps):
        ev = evaluate_gap(theta, tests, cfg, policy, sampler, seed)
        pt = CurvePoint(steps, ev["mean_pre"], ev["mean_post"], ev["mean_gap"])
        if cfg.env == "krazy":
            pt.tile_fraction, pt.death_visits, pt.goals_reached = heuristic_metrics(ev["rollouts"])
        points.append(pt)
        if on_point:
            on_point(pt)

    steps, it = 0, 0
    evaluate(0)
    while steps + bound <= cfg.budget:
        theta, stats = meta_step(cfg.algo, theta, train_tasks(cfg, seed, it), cfg.meta, ctx, it)
        steps += stats["env_steps"]
        it += 1
        log.info("seed %d iter %d steps %d explore %.4f exploit %.4f", seed, it, steps,
                 stats["explore_return"], stats["exploit_return"])
        if it % cfg.eval_every == 0:
            evaluate(steps)
    if it % cfg.eval_every != 0 and it > 0:
        evaluate(steps)
    return points, theta, policy


def run_experiment(cfg, out_dir, workers=None):
    """Train ``cfg.repeats`` independent repeats (seeds seed..seed+repeats-1),
    write per-repeat curves, their average, and checkpoints into ``out_dir``."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    workers = cfg.samplers if workers is None else workers
    per_repeat, paths = [], {}
    with Sampler(workers) as sampler:
        for r in range(cfg.repeats):
            seed = cfg.seed + r
            points, theta, _ = train_one(cfg, seed, sampler)
            write_curve(os.path.join(out_dir, f"curve_seed{seed}.csv"), cfg, seed, points)
            ck = os.path.join(out_dir, f"checkpoint_seed{seed}.bin")
            save_params(ck, theta, {"algo": cfg.algo, "env": cfg.env, "seed": seed})
            if r == 0:
                save_params(os.path.join(out_dir, "checkpoint.bin"), theta,
                            {"algo": cfg.algo, "env": cfg.env, "seed": seed})
            per_repeat.append(points)
    avg = average_points(per_repeat)
    curve = os.path.join(out_dir, "curve.csv")
    write_curve(curve, cfg, cfg.seed, avg)
    paths["curve"] = curve
    paths["checkpoint"] = os.path.join(out_dir, "checkpoint.bin")
    return {"points": avg, "per_repeat": per_repeat, "paths": paths}
