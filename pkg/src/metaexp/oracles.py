"""Brute-force oracles: finite differences for the autodiff engine, exhaustive
enumeration for the meta-gradient estimators, and a rulebook for the envs.

Each suite returns a list of ``Check`` records; the CLI prints them and
exits non-zero if any fails.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, backward, exp, finite_difference_check, log_softmax, pick, sum_
from .envs import (DEATH, ENERGY, GOAL, ICE, KEY, LOCK, NORMAL, TELEPORTER, WALL, EnvConfig,
                   KrazyConfig, KrazyWorld, TaskSpec, flood_fill, maze_generate, sample_task)
from .envs.krazy import hand_task
from .metaalgos import (InnerOperatorConfig, MetaBatch, MetaConfig, TaskSample, explore_term,
                        exploit_term, inner_update)
from .params import ParamVector
from .policy import GRUPolicy, MLPPolicy
from .rlcore import Trajectory, surrogate_loss


@dataclass
class Check:
    suite: str
    name: str
    error: float
    tol: float
    detail: str = ""

    @property
    def passed(self):
        return bool(np.isfinite(self.error)) and self.error <= self.tol

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.suite}/{self.name}: error {self.error:.3g} (tol {self.tol:g}){extra}"


# ------------------------------------------------------------------ autodiff

def _w(rng, shape):
    return rng.normal(size=shape)


def primitive_cases(rng):
    """(name, f, theta) triples; f maps a ParamVector to a scalar Tensor.

    Inputs are kept away from kinks (relu at 0, clip bounds) and from the
    log/div singularities so central differences are valid.
    """
    def shape():
        return tuple(int(n) for n in rng.integers(1, 5, size=2))

    def away(x, point, gap=0.05):
        x = np.where(np.abs(x - point) < gap, point + np.sign(x - point + 1e-12) * gap, x)
        return x

    s = shape()
    cases = []
    w = _w(rng, s)
    cases.append(("add", lambda p, w=w: sum_(ad.add(p["a"], p["b"]) * w),
                  {"a": rng.normal(size=s), "b": rng.normal(size=s[1:])}))
    cases.append(("sub", lambda p, w=w: sum_(ad.sub(p["a"], p["b"]) * w),
                  {"a": rng.normal(size=s), "b": rng.normal(size=(s[0], 1))}))
    cases.append(("mul", lambda p, w=w: sum_(ad.mul(p["a"], p["b"]) * w),
                  {"a": rng.normal(size=s), "b": rng.normal(size=s)}))
    cases.append(("div", lambda p, w=w: sum_(ad.div(p["a"], p["b"]) * w),
                  {"a": rng.normal(size=s), "b": rng.uniform(0.5, 2.0, size=s) * rng.choice([-1, 1], size=s)}))
    cases.append(("neg", lambda p, w=w: sum_(ad.neg(p["a"]) * w), {"a": rng.normal(size=s)}))
    k = int(rng.integers(1, 5))
    wm = _w(rng, (s[0], k))
    cases.append(("matmul", lambda p, w=wm: sum_(ad.matmul(p["a"], p["b"]) * w),
                  {"a": rng.normal(size=s), "b": rng.normal(size=(s[1], k))}))
    cases.append(("tanh", lambda p, w=w: sum_(ad.tanh(p["a"]) * w), {"a": rng.normal(size=s)}))
    cases.append(("relu", lambda p, w=w: sum_(ad.relu(p["a"]) * w), {"a": away(rng.normal(size=s), 0.0)}))
    cases.append(("exp", lambda p, w=w: sum_(ad.exp(p["a"]) * w), {"a": rng.normal(size=s)}))
    cases.append(("log", lambda p, w=w: sum_(ad.log(p["a"]) * w), {"a": rng.uniform(0.3, 3.0, size=s)}))
    axis = int(rng.integers(0, 2))
    ws = _w(rng, (s[1 - axis],))
    cases.append(("sum", lambda p, w=ws, ax=axis: sum_(ad.sum_(p["a"], axis=ax) * w), {"a": rng.normal(size=s)}))
    cases.append(("mean", lambda p, w=ws, ax=axis: sum_(ad.mean(p["a"], axis=ax) * w), {"a": rng.normal(size=s)}))
    wc = _w(rng, (s[0], s[1] + 2))
    cases.append(("concat", lambda p, w=wc: sum_(ad.concat([p["a"], p["b"]], axis=1) * w),
                  {"a": rng.normal(size=s), "b": rng.normal(size=(s[0], 2))}))
    idx = rng.integers(0, s[0], size=int(rng.integers(1, 6)))
    wi = _w(rng, (len(idx), s[1]))
    cases.append(("index_select", lambda p, w=wi, i=idx: sum_(ad.index_select(p["a"], i, axis=0) * w),
                  {"a": rng.normal(size=s)}))
    cases.append(("log_softmax", lambda p, w=w: sum_(ad.log_softmax(p["a"]) * w), {"a": rng.normal(size=s)}))
    cases.append(("clip", lambda p, w=w: sum_(ad.clip(p["a"], -0.5, 0.5) * w),
                  {"a": away(away(rng.normal(size=s), -0.5), 0.5)}))
    wr = _w(rng, (s[0] * s[1],))
    cases.append(("reshape", lambda p, w=wr, n=s[0] * s[1]: sum_(ad.reshape(p["a"], (n,)) * w),
                  {"a": rng.normal(size=s)}))
    wt = _w(rng, s[::-1])
    cases.append(("transpose", lambda p, w=wt: sum_(ad.transpose(p["a"]) * w), {"a": rng.normal(size=s)}))
    wb = _w(rng, (3,) + s)
    cases.append(("broadcast_to", lambda p, w=wb, sh=(3,) + s: sum_(ad.broadcast_to(p["a"], sh) * w),
                  {"a": rng.normal(size=s)}))
    wst = _w(rng, (1, s[1]))
    cases.append(("sum_to", lambda p, w=wst, sh=(1, s[1]): sum_(ad.sum_to(p["a"], sh) * w),
                  {"a": rng.normal(size=s)}))
    cases.append(("sigmoid", lambda p, w=w: sum_(ad.sigmoid(p["a"]) * w), {"a": rng.normal(size=s)}))
    cases.append(("sqrt", lambda p, w=w: sum_(ad.sqrt(p["a"]) * w), {"a": rng.uniform(0.3, 3.0, size=s)}))
    b = rng.normal(size=s)
    cases.append(("minimum", lambda p, w=w: sum_(ad.minimum(p["a"], p["b"]) * w),
                  {"a": b + rng.choice([-1, 1], size=s) * rng.uniform(0.1, 1.0, size=s), "b": b}))
    return [(name, f, ParamVector(theta)) for name, f, theta in cases]


def composed_cases(rng):
    """Three small networks: MLP log-likelihood, 3-step GRU unroll, PPO surrogate."""
    cases = []
    mlp = MLPPolicy(5, 3, hidden=(6, 4))
    th = mlp.init_params(rng)
    th = ParamVector({k: v.data + 0.3 * rng.normal(size=v.shape) for k, v in th.items()})
    obs = rng.normal(size=(7, 5))
    acts = rng.integers(0, 3, size=7)
    adv = rng.normal(size=7)
    cases.append(("mlp_loglik", lambda p: sum_(pick(log_softmax(mlp.logits(p, obs)), acts) * adv), th))

    gru = GRUPolicy(3, 2, hidden=4, out_scale=1.0)
    tg = gru.init_params(rng)
    xs = rng.normal(size=(3, 2, gru.input_len))
    ga = rng.integers(0, 2, size=(3, 2))

    def gru_f(p):
        h = gru.initial_state(2)
        total = 0.0
        for t in range(3):
            logits, h = gru.step(p, h, xs[t])
            total = total + sum_(pick(log_softmax(logits), ga[t]))
        return total + sum_(h)
    cases.append(("gru_unroll3", gru_f, tg))

    old = pick(log_softmax(mlp.logits(th, obs)), acts).data + rng.uniform(-0.1, 0.1, size=7)
    cases.append(("ppo_surrogate", lambda p: surrogate_loss(
        pick(log_softmax(mlp.logits(p, obs)), acts), old, adv, "ppo", 0.2), th))
    return cases


def second_order_case(rng, alpha=0.1):
    mlp = MLPPolicy(4, 3, hidden=(5,))
    th = mlp.init_params(rng)
    th = ParamVector({k: v.data + 0.3 * rng.normal(size=v.shape) for k, v in th.items()})
    obs, acts, adv = rng.normal(size=(6, 4)), rng.integers(0, 3, size=6), rng.normal(size=6)
    obs2, acts2, adv2 = rng.normal(size=(6, 4)), rng.integers(0, 3, size=6), rng.normal(size=6)

    def inner(p):
        return -sum_(pick(log_softmax(mlp.logits(p, obs)), acts) * adv)

    def outer(p):
        g = ad.gradient(inner, p)
        q = ParamVector({k: p[k] - g[k] * alpha for k in p})
        return -sum_(pick(log_softmax(mlp.logits(q, obs2)), acts2) * adv2)
    return outer, th


def autodiff_suite(seed=0, repeats=3):
    rng = np.random.default_rng(seed)
    checks = []
    for _ in range(repeats):
        for name, f, theta in primitive_cases(rng):
            checks.append(Check("autodiff", f"primitive/{name}", finite_difference_check(f, theta), 1e-6))
    for name, f, theta in composed_cases(rng):
        checks.append(Check("autodiff", f"composed/{name}", finite_difference_check(f, theta), 1e-6))
    f, theta = second_order_case(rng)
    checks.append(Check("autodiff", "second_order/sgd_step", finite_difference_check(f, theta), 1e-4))
    # exact small cases
    _, g = ad.grad_value(lambda x: sum_(x * x), np.array([3.0]))
    checks.append(Check("autodiff", "exact/d(x^2)", abs(g[0] - 6.0), 1e-12))
    tape = Tape()
    x = tape.watch(np.array(2.0))
    (g1,) = backward(x * x * x, [x], create_graph=True)
    (g2,) = backward(g1, [x])
    checks.append(Check("autodiff", "exact/d2(x^3)", abs(g2.item() - 12.0), 1e-12))
    return checks


# ------------------------------------------------------- enumerable meta-MDP

class EnumerableMetaMDP:
    """Two tasks, two actions, two steps, fully enumerable.

    States: s0 at t=0, then s1 (after action 0) or s2 (after action 1).
    Observations are one-hot over the three states; rewards are a per-task
    table r[task, state, action].  The policy is linear (no hidden layer).
    U is one VPG step (per-trajectory sum of reward-to-go weighted log-probs)
    on a single explore trajectory; one exploit trajectory is then drawn.
    """

    def __init__(self, rewards=None, alpha=0.5, gamma=1.0, seed=0):
        if rewards is None:
            rewards = np.array([[[1.0, 0.0], [0.0, 1.0], [0.5, 0.0]],
                                [[0.0, 1.0], [1.0, 0.0], [0.0, 0.5]]])
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.n_tasks = self.rewards.shape[0]
        self.alpha, self.gamma = alpha, gamma
        self.policy = MLPPolicy(3, 2, hidden=())
        rng = np.random.default_rng(seed)
        self.theta = ParamVector({"W0": 0.5 * rng.normal(size=(3, 2)), "b0": 0.5 * rng.normal(size=2)})
        self.sequences = list(itertools.product(range(2), repeat=2))
        self.inner_cfg = InnerOperatorConfig("sgd_vpg", alpha=alpha)

    @staticmethod
    def observations(seq):
        obs = np.zeros((2, 3))
        obs[0, 0] = 1.0
        obs[1, 1 + seq[0]] = 1.0
        return obs

    def seq_rewards(self, task, seq):
        return np.array([self.rewards[task, 0, seq[0]], self.rewards[task, 1 + seq[0], seq[1]]])

    def log_prob(self, params, seq):
        """Differentiable log pi(seq)."""
        logp = log_softmax(self.policy.logits(params, self.observations(seq)))
        return sum_(pick(logp, np.array(seq)))

    def trajectory(self, task, seq, params, explore_flag):
        obs = self.observations(seq)
        lp = self.policy.log_probs_np(params.detach(), obs)[[0, 1], list(seq)]
        return Trajectory(obs, np.array(seq, dtype=np.int64), self.seq_rewards(task, seq),
                          np.array([False, True]), lp, explore_flag, task)

    def adapted(self, theta, task, seq_bar):
        return inner_update(theta, [self.trajectory(task, seq_bar, theta, 1)], self.inner_cfg,
                            self.policy, self.gamma)

    def ret(self, task, seq):
        r = self.seq_rewards(task, seq)
        return float(r[0] + self.gamma * r[1])

    def objective(self, theta, hold=None):
        """J(theta) = mean_task sum_tb P(tb) sum_t P_{U(theta,tb)}(t) R(t).
        With ``hold`` the explore distribution is evaluated at fixed params."""
        total = 0.0
        for task in range(self.n_tasks):
            for sb in self.sequences:
                pb = exp(self.log_prob(theta if hold is None else hold, sb))
                tp = self.adapted(theta, task, sb)
                inner = 0.0
                for s in self.sequences:
                    inner = inner + exp(self.log_prob(tp, s)) * self.ret(task, s)
                total = total + pb * inner
        return total * (1.0 / self.n_tasks)

    def brute_force_gradient(self, hold_explore=False):
        tape = Tape()
        th = self.theta.watch(tape)
        hold = self.theta.detach() if hold_explore else None
        return backward(self.objective(th, hold), th).flatten()

    def outcome_gradients(self, credit_mode, algo="emaml", lambda_explore=1.0):
        """Estimator gradient and probability of every (task, tb, t) outcome."""
        cfg = MetaConfig(lambda_explore=lambda_explore, gamma=self.gamma, credit_mode=credit_mode,
                         outer="vpg", ent_coeff=0.0, normalize_advantages=False,
                         explore_episodes=1, exploit_episodes=1, inner=self.inner_cfg)
        grads, probs = [], []
        theta0 = self.theta.detach()
        for task in range(self.n_tasks):
            for sb in self.sequences:
                pb = float(np.exp(self.log_prob(theta0, sb).item()))
                tp0 = self.adapted(theta0, task, sb)
                for s in self.sequences:
                    p = float(np.exp(self.log_prob(tp0, s).item()))
                    tape = Tape()
                    th = self.theta.watch(tape)
                    tp = self.adapted(th, task, sb)
                    entry = TaskSample(None, task, [self.trajectory(task, sb, theta0, 1)], tp,
                                       [self.trajectory(task, s, tp0, 0)])
                    batch = MetaBatch([entry])
                    loss = exploit_term(batch, cfg, self.policy)
                    if algo == "emaml":
                        loss = loss + explore_term(batch, cfg, self.policy, th) * lambda_explore
                    # the surrogate is minimized; the estimator of grad J is its negation
                    grads.append(-backward(loss, th).flatten())
                    probs.append(pb * p / self.n_tasks)
        return np.array(grads), np.array(probs)

    def expected_estimator(self, credit_mode, algo="emaml"):
        g, p = self.outcome_gradients(credit_mode, algo)
        return p @ g


def gradient_variance(grads, probs, n_samples=10_000, seed=0):
    """Resample outcomes; return (total-variance estimate per sample, exact)."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(probs), size=n_samples, p=probs / probs.sum())
    sample = grads[idx]
    per = np.sum((sample - sample.mean(axis=0)) ** 2, axis=1)
    mean = probs @ grads
    exact = float(probs @ np.sum((grads - mean) ** 2, axis=1))
    return per, exact


def variance_ordering(mdp=None, n_samples=10_000, seed=0):
    """Paired resampling of both credit modes on the same outcomes.

    Returns (var_dice, var_per_timestep, diff, stderr_of_diff)."""
    mdp = mdp or EnumerableMetaMDP()
    gd, p = mdp.outcome_gradients("dice_scalar")
    gp, _ = mdp.outcome_gradients("per_timestep")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(p), size=n_samples, p=p / p.sum())
    sd, sp = gd[idx], gp[idx]
    vd = np.sum((sd - sd.mean(axis=0)) ** 2, axis=1)
    vp = np.sum((sp - sp.mean(axis=0)) ** 2, axis=1)
    d = vd - vp
    return float(vd.mean()), float(vp.mean()), float(d.mean()), float(d.std(ddof=1) / np.sqrt(n_samples))


def estimator_suite(seed=0, n_samples=10_000):
    mdp = EnumerableMetaMDP(seed=seed)
    checks = []
    full = mdp.brute_force_gradient()
    held = mdp.brute_force_gradient(hold_explore=True)

    # the brute-force gradient itself is checked against finite differences of J
    fd = finite_difference_check(lambda p: mdp.objective(p), mdp.theta, analytic=full)
    checks.append(Check("estimator", "brute_force_vs_fd", fd, 1e-7))
    for mode in ("per_timestep", "dice_scalar"):
        est = mdp.expected_estimator(mode, "emaml")
        checks.append(Check("estimator", f"emaml_unbiased/{mode}", float(np.max(np.abs(est - full))), 1e-8))
        est = mdp.expected_estimator(mode, "maml")
        checks.append(Check("estimator", f"maml_held_fixed/{mode}", float(np.max(np.abs(est - held))), 1e-8))
    vd, vp, diff, se = variance_ordering(mdp, n_samples, seed)
    # one-sided: dice variance must exceed per-timestep variance by more than 3 standard errors
    checks.append(Check("estimator", "variance_ordering", max(0.0, 3 * se - diff), 0.0,
                        f"var dice {vd:.4g} vs per_timestep {vp:.4g}, diff {diff:.4g} +- {se:.2g}"))
    return checks


# --------------------------------------------------------------- env rules

def _grid(rows):
    from .envs import load_grid
    return load_grid("\n".join(rows))


def _krazy(rows, start, energy=None, dynamics=None, horizon=64):
    cfg = KrazyConfig(width=len(rows[0]), height=len(rows))
    env = KrazyWorld(hand_task(dynamics=dynamics, horizon=horizon), cfg, tiles=_grid(rows))
    env.reset(start=start, energy=energy)
    return env


def envs_suite(seed=0, n_mazes=100):
    checks = []

    def rule(name, ok, detail=""):
        checks.append(Check("envs", name, 0.0 if ok else 1.0, 0.0, detail))

    env = _krazy([".G.", "...", "..."], (0, 0))
    r = env.step(3)
    rule("goal_plus_one_not_terminal", r.reward == 1.0 and not r.done)
    env = _krazy([".D.", "...", "..."], (0, 0))
    r = env.step(3)
    rule("death_terminates", r.reward == 0.0 and r.done)
    env = _krazy([".X.", "...", "..."], (0, 0))
    env.step(3)
    rule("wall_blocks", env.state.agent == (0, 0))
    env = _krazy([".I..", "....", "...."], (0, 0))
    env.step(3)
    rule("ice_slides", env.state.agent == (2, 0))
    env = _krazy([".L.", "K..", "..."], (0, 0))
    env.step(3)
    blocked = env.state.agent == (0, 0)
    env.step(1)
    env.step(0)
    env.step(3)
    rule("lock_needs_key", blocked and env.state.agent == (1, 0))
    env = _krazy([".T..", "....", "...T"], (0, 0))
    env.step(3)
    rule("teleport", env.state.agent == (3, 2))
    env = _krazy(["...", "...", "..."], (0, 0), energy=0)
    env.step(3)
    rule("no_energy_no_move", env.state.agent == (0, 0))
    env = _krazy([".E.", "...", "..."], (0, 0), energy=2)
    env.step(3)
    rule("energy_refill", env.state.energy == 2 - 1 + env.cfg.energy_refill)

    # dynamics equivariance on a random default board
    rng = np.random.default_rng(seed)
    task = sample_task("krazy", rng)
    acts = rng.integers(0, 4, size=40)
    a = KrazyWorld(task)
    b = KrazyWorld(TaskSpec("krazy", task.layout_seed, task.palette_perm, tuple(range(4)), task.horizon))
    a.reset(np.random.default_rng(1))
    b.reset(np.random.default_rng(1))
    same = True
    for act in acts:
        if a.done:
            break
        ra, rb = a.step(int(act)), b.step(task.dynamics_perm[int(act)])
        same &= a.state.agent == b.state.agent and ra.reward == rb.reward and ra.done == rb.done
    rule("dynamics_equivariance", same)

    bad = 0
    for s in range(n_mazes):
        tiles, goal = maze_generate(seed * 1000 + s, 20)
        ys, xs = np.nonzero(tiles != WALL)
        reach = flood_fill(tiles, (int(xs[0]), int(ys[0])))
        bad += int(len(reach) != len(xs) or goal not in reach)
    rule(f"maze_connectivity_{n_mazes}_seeds", bad == 0, f"{bad} disconnected")
    return checks


SUITES = {"autodiff": autodiff_suite, "estimator": estimator_suite, "envs": envs_suite}


def run_suites(name="all"):
    names = list(SUITES) if name == "all" else [name]
    out = []
    for n in names:
        out.extend(SUITES[n]())
    return out
