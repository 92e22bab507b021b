"""MAML, E-MAML, RL^2 and E-RL^2.

MAML-family objective per task: J(theta) = E_{tb ~ pi_theta} E_{t ~ pi_{U(theta, tb)}} [R(t)].
Its score-function gradient has two terms:

    R(t) d/dtheta log pi_{U(theta)}(t)          (exploit term, through U)
  + R(t) d/dtheta log pi_theta(tb)              (explore term)

MAML keeps only the first; E-MAML adds the second weighted by
``lambda_explore``.  The recurrent algorithms adapt through the hidden
state instead of U; E-RL^2 zeroes explore-episode rewards in the return.
"""
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, as_tensor, backward, concat, gradient, index_select, log_softmax, mul, pick, reshape, sum_
from .envs import TaskSpec
from .errors import ContractViolation
from .params import ParamVector, is_tape_connected
from .policy import entropy, rl2_input
from .rlcore import Adam, Trajectory, clip_grad_norm, discounted_returns, masked_returns, normalize_advantages, sgd_step, surrogate_loss, surrogate_terms
from .sampling import episodes_unit, trial_unit

OPERATOR_KINDS = ("sgd_vpg", "sgd_ppo", "random_perturb", "eps_greedy", "sign_flip", "perpendicular")
DIFFERENTIABLE_KINDS = ("sgd_vpg", "sgd_ppo")
CREDIT_MODES = ("per_timestep", "dice_scalar")
ALGOS = ("maml", "emaml", "rl2", "erl2")


@dataclass
class InnerOperatorConfig:
    kind: str = "sgd_vpg"
    alpha: float = 0.01
    inner_steps: int = 1
    simple_sampling: bool = True
    sigma: float = 0.01
    eps_op: float = 0.1
    clip_eps: float = 0.2
    normalize: bool = False

    def validate(self):
        if self.kind not in OPERATOR_KINDS:
            raise ContractViolation(f"inner.kind: unknown operator {self.kind!r}")
        if not self.alpha > 0:
            raise ContractViolation("inner.alpha must be > 0")
        if not 1 <= self.inner_steps <= 20:
            raise ContractViolation("inner.inner_steps must be in 1..20")
        if not 0.0 <= self.eps_op <= 1.0:
            raise ContractViolation("inner.eps_op must be in [0, 1]")
        return self


@dataclass
class MetaConfig:
    lambda_explore: float = 1.0
    beta: float = 1e-3
    gamma: float = 0.99
    credit_mode: str = "per_timestep"
    explore_episodes: int = 2
    exploit_episodes: int = 2
    rl2_episodes: int = 5
    rl2_explore: int = 3
    outer: str = "ppo"
    meta_grad_steps: int = 1
    clip_eps: float = 0.2
    ent_coeff: float = 1e-3
    max_grad_norm: float = 1.0
    normalize_advantages: bool = True
    inner: InnerOperatorConfig = field(default_factory=InnerOperatorConfig)

    def validate(self):
        if self.lambda_explore < 0:
            raise ContractViolation("meta.lambda_explore must be >= 0")
        if self.credit_mode not in CREDIT_MODES:
            raise ContractViolation(f"meta.credit_mode: unknown mode {self.credit_mode!r}")
        if self.outer not in ("ppo", "vpg", "cpi"):
            raise ContractViolation(f"meta.outer: unknown surrogate {self.outer!r}")
        if self.meta_grad_steps < 1:
            raise ContractViolation("meta.meta_grad_steps must be >= 1")
        if self.meta_grad_steps > 1 and self.outer != "ppo":
            raise ContractViolation("meta.meta_grad_steps > 1 requires meta.outer = ppo")
        if self.explore_episodes < 1 or self.exploit_episodes < 1:
            raise ContractViolation("meta.explore_episodes and meta.exploit_episodes must be >= 1")
        if self.rl2_explore < 0 or self.rl2_episodes - self.rl2_explore < 1:
            raise ContractViolation("meta.rl2_episodes must exceed meta.rl2_explore (need an exploit episode)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractViolation("meta.gamma must be in [0, 1]")
        self.inner.validate()
        return self


@dataclass
class TaskSample:
    task: TaskSpec
    task_id: int
    explore: list
    theta_prime: ParamVector = None
    exploit: list = field(default_factory=list)


@dataclass
class MetaBatch:
    entries: list

    def __len__(self):
        return len(self.entries)


# ------------------------------------------------------------ inner operator

def _stack(trajs):
    obs = np.concatenate([t.observations for t in trajs])
    acts = np.concatenate([t.actions for t in trajs])
    old = np.concatenate([t.log_probs for t in trajs])
    return obs, acts, old


def _reward_to_go(trajs, gamma):
    return np.concatenate([discounted_returns(t.rewards, gamma) for t in trajs])


def traj_log_probs(policy, params, trajs):
    """Differentiable log pi(a_t|s_t) for all timesteps of ``trajs`` (concatenated)."""
    obs, acts, _ = _stack(trajs)
    logp = log_softmax(policy.logits(params, obs))
    return pick(logp, acts), logp


def inner_loss(policy, theta, trajs, cfg, gamma, sign=1.0):
    """Surrogate minimized by the inner step: per-trajectory sum, batch mean."""
    new, _ = traj_log_probs(policy, theta, trajs)
    _, _, old = _stack(trajs)
    adv = _reward_to_go(trajs, gamma)
    if cfg.normalize:
        adv = normalize_advantages(adv)[0]
    kind = "ppo" if cfg.kind == "sgd_ppo" else "vpg"
    w = np.full(len(adv), 1.0 / len(trajs))
    return surrogate_loss(new, old, sign * adv, kind, cfg.clip_eps, weights=w)


def _perpendicular_direction(g_flat):
    ref = np.random.default_rng(0x5EED).standard_normal(g_flat.size)
    gg = float(g_flat @ g_flat)
    v = ref - (float(ref @ g_flat) / gg) * g_flat if gg > 0 else ref
    # second pass removes the rounding residue of the first projection
    if gg > 0:
        v = v - (float(v @ g_flat) / gg) * g_flat
    return v / np.linalg.norm(v)


def inner_update(theta, explore, cfg, policy, gamma=0.99, rng=None, resample=None):
    """theta' = U(theta, explore trajectories).

    ``sgd_*`` kinds stay on theta's tape (if any) so the meta-gradient flows
    through U; every other kind returns constants.
    """
    if not explore:
        raise ContractViolation("inner_update needs at least one explore trajectory")
    cfg.validate()
    kind = cfg.kind
    if kind == "random_perturb":
        if rng is None:
            raise ContractViolation("random_perturb needs an rng")
        base = theta.detach()
        noise = ParamVector.unflatten(rng.standard_normal(base.total_len), base.schema)
        return ParamVector({k: base[k].data + cfg.sigma * noise[k].data for k in base})
    if cfg.inner_steps > 1 and not cfg.simple_sampling and resample is None:
        raise ContractViolation("inner_steps > 1 without simple_sampling needs a resample callback")

    if kind in DIFFERENTIABLE_KINDS:
        p, batch = theta, explore
        for step in range(cfg.inner_steps):
            if step > 0 and not cfg.simple_sampling:
                batch = resample(p.detach())
            g = gradient(lambda q: inner_loss(policy, q, batch, cfg, gamma), p)
            p = sgd_step(p, g, cfg.alpha)
        return p

    base = theta.detach()
    if kind == "eps_greedy":
        if rng is None:
            raise ContractViolation("eps_greedy needs an rng")
        u = rng.random()
        noise = rng.standard_normal(base.total_len)
        if u < cfg.eps_op:
            noise = ParamVector.unflatten(noise, base.schema)
            return ParamVector({k: base[k].data + cfg.sigma * noise[k].data for k in base})
        sgd_cfg = InnerOperatorConfig("sgd_vpg", cfg.alpha, cfg.inner_steps, cfg.simple_sampling,
                                      normalize=cfg.normalize)
        return inner_update(base, explore, sgd_cfg, policy, gamma, resample=resample).detach()
    vpg = InnerOperatorConfig("sgd_vpg", cfg.alpha, normalize=cfg.normalize)
    if kind == "sign_flip":
        g = gradient(lambda q: inner_loss(policy, q, explore, vpg, gamma, sign=-1.0), base)
        return sgd_step(base, g, cfg.alpha).detach()
    # perpendicular
    g = gradient(lambda q: inner_loss(policy, q, explore, vpg, gamma), base)
    v = ParamVector.unflatten(_perpendicular_direction(g.flatten()), base.schema)
    return ParamVector({k: base[k].data + cfg.alpha * v[k].data for k in base})


# ---------------------------------------------------------------- surrogates

def _exploit_advantages(entries, cfg):
    per_task = []
    for e in entries:
        if cfg.credit_mode == "per_timestep":
            per_task.append(_reward_to_go(e.exploit, cfg.gamma))
        else:
            per_task.append(np.concatenate(
                [np.full(len(t), discounted_returns(t.rewards, cfg.gamma)[0] if len(t) else 0.0)
                 for t in e.exploit]))
    if cfg.normalize_advantages:
        flat, _, _ = normalize_advantages(np.concatenate(per_task))
        out, off = [], 0
        for a in per_task:
            out.append(flat[off:off + len(a)])
            off += len(a)
        per_task = out
    return per_task


def exploit_term(meta_batch, cfg, policy, first_order=False):
    """Outer surrogate on exploit trajectories with log-probs under theta'."""
    entries = meta_batch.entries
    advs = _exploit_advantages(entries, cfg)
    news, olds, weights, ents = [], [], [], []
    for e, adv in zip(entries, advs):
        if e.theta_prime is None or (not first_order and not is_tape_connected(e.theta_prime)):
            raise ContractViolation(
                f"theta' for task {e.task_id} is not connected to the tape "
                f"(inner operator {cfg.inner.kind!r} is not differentiable)")
        new, logp = traj_log_probs(policy, e.theta_prime, e.exploit)
        news.append(new)
        ents.append(entropy(logp))
        olds.append(_stack(e.exploit)[2])
        weights.append(np.full(len(adv), 1.0 / (len(entries) * len(e.exploit))))
    adv = np.concatenate(advs)
    return surrogate_loss(concat(news), np.concatenate(olds), adv, cfg.outer, cfg.clip_eps,
                          cfg.ent_coeff, concat(ents), np.concatenate(weights))


def maml_surrogate(meta_batch, cfg, policy, first_order=False):
    return exploit_term(meta_batch, cfg, policy, first_order)


def explore_returns(meta_batch, cfg):
    """Per-task detached scalar: mean discounted exploit return R(t)."""
    return np.array([np.mean([discounted_returns(t.rewards, cfg.gamma)[0] if len(t) else 0.0
                              for t in e.exploit]) for e in meta_batch.entries])


def explore_term(meta_batch, cfg, policy, theta):
    """Credit to the pre-update sampling distribution (negated, to minimize).

    dice_scalar: -mean_i R_i * sum(explore log-probs of task i), built as one
    scalar times one summed log-likelihood per task.  per_timestep: each explore
    log-prob weighted by R_i, normalized across tasks when enabled.
    """
    entries = meta_batch.entries
    R = explore_returns(meta_batch, cfg)
    n = len(entries)
    if cfg.credit_mode == "dice_scalar":
        total = None
        for e, r in zip(entries, R):
            lp, _ = traj_log_probs(policy, theta, e.explore)
            t = mul(sum_(lp), float(r) / n)
            total = t if total is None else total + t
        return -total
    if cfg.normalize_advantages:
        R = normalize_advantages(R)[0]
    news, olds, advs, weights = [], [], [], []
    for e, r in zip(entries, R):
        lp, _ = traj_log_probs(policy, theta, e.explore)
        news.append(lp)
        olds.append(_stack(e.explore)[2])
        advs.append(np.full(lp.shape[0], r))
        weights.append(np.full(lp.shape[0], 1.0 / n))
    terms = surrogate_terms(concat(news), np.concatenate(olds), np.concatenate(advs),
                            cfg.outer, cfg.clip_eps)
    return -sum_(mul(terms, np.concatenate(weights)))


def emaml_surrogate(meta_batch, cfg, policy, theta, first_order=False):
    return maml_surrogate(meta_batch, cfg, policy, first_order) + \
        mul(explore_term(meta_batch, cfg, policy, theta), cfg.lambda_explore)


# -------------------------------------------------------------------- RL^2

def rl2_trial(env, policy, params, k, p, rngs, task_id=-1):
    """k consecutive episodes on one task; the hidden state is zeroed once at
    the start and carried across episode boundaries.  The first p episodes
    are flagged explore.  True rewards always enter the policy input."""
    if k < p + 1:
        raise ContractViolation(f"trial needs k >= p + 1 (k={k}, p={p})")
    theta = params.detach() if isinstance(params, ParamVector) else params
    h = np.zeros((1, policy.hidden))
    prev_a, prev_r, prev_d = -1, 0.0, False
    trial = []
    for ep in range(k):
        rng = rngs[ep]
        obs = env.reset(rng)
        xs, acts, rews, dones, lps, obs_seq = [], [], [], [], [], []
        info = {}
        for _ in range(env.task.horizon):
            x = rl2_input(obs, prev_a, prev_r, prev_d, policy.n_actions)
            logp, h = policy.step_np(theta, h, x[None, :])
            u = rng.random()
            a = int(min((np.cumsum(np.exp(logp[0])) < u).sum(), policy.n_actions - 1))
            res = env.step(a)
            xs.append(x)
            obs_seq.append(obs)
            acts.append(a)
            rews.append(res.reward)
            dones.append(res.done)
            lps.append(logp[0, a])
            info = res.info
            obs = res.obs
            prev_a, prev_r, prev_d = a, res.reward, False
            if res.done:
                break
        prev_d = True
        trial.append(Trajectory(np.array(obs_seq), np.array(acts, dtype=np.int64),
                                np.array(rews, dtype=np.float64), np.array(dones, dtype=bool),
                                np.array(lps, dtype=np.float64), int(ep < p), task_id, info,
                                inputs=np.array(xs)))
    return trial


def trial_returns(trial, gamma, masked):
    if masked:
        return masked_returns(trial, gamma)
    return discounted_returns(np.concatenate([t.rewards for t in trial]), gamma)


def rl2_log_probs(policy, theta, trials):
    """Replay the recurrent policy over padded trials.

    Returns (log-probs of taken actions at valid steps, entropies, valid index)."""
    lens = [sum(len(t) for t in tr) for tr in trials]
    B, T = len(trials), max(lens)
    X = np.zeros((B, T, policy.input_len))
    A = np.zeros((B, T), dtype=np.int64)
    for b, tr in enumerate(trials):
        X[b, :lens[b]] = np.concatenate([t.inputs for t in tr])
        A[b, :lens[b]] = np.concatenate([t.actions for t in tr])
    h = policy.initial_state(B)
    cols, ent_cols = [], []
    for t in range(T):
        logits, h = policy.step(theta, h, X[:, t, :])
        logp = log_softmax(logits)
        cols.append(reshape(pick(logp, A[:, t]), (B, 1)))
        ent_cols.append(reshape(entropy(logp), (B, 1)))
    valid = np.concatenate([b * T + np.arange(n) for b, n in enumerate(lens)])
    lp = index_select(reshape(concat(cols, axis=1), (B * T,)), valid)
    ent = index_select(reshape(concat(ent_cols, axis=1), (B * T,)), valid)
    return lp, ent


def erl2_surrogate(trials, cfg, policy, theta, masked=True):
    """Outer surrogate over all trial timesteps.  With ``masked`` the return
    is the explore-masked trial return; explore timesteps keep their
    log-prob terms and receive credit from later exploit rewards."""
    if masked:
        for tr in trials:
            if all(t.explore_flag for t in tr):
                raise ContractViolation("every episode of the trial is explore (p = k)")
    adv = np.concatenate([trial_returns(tr, cfg.gamma, masked) for tr in trials])
    if cfg.normalize_advantages:
        adv = normalize_advantages(adv)[0]
    old = np.concatenate([t.log_probs for tr in trials for t in tr])
    lp, ent = rl2_log_probs(policy, theta, trials)
    return surrogate_loss(lp, old, adv, cfg.outer, cfg.clip_eps, cfg.ent_coeff, ent)


# ---------------------------------------------------------------- meta step

@dataclass
class MetaContext:
    """What a meta-step needs besides theta: the policy, env settings, the
    sampler, the optimizer state, and the rng key base."""
    policy: object
    env_cfg: object
    sampler: object
    adam: Adam
    seed: int = 0


def _first_order_grads(meta_batch, cfg, policy, theta_t):
    """Exploit-term gradient w.r.t. each theta' (as leaves), averaged into theta."""
    total = None
    for e in meta_batch.entries:
        tape = Tape()
        leaf = e.theta_prime.detach().watch(tape)
        sub_batch = MetaBatch([TaskSample(e.task, e.task_id, e.explore, leaf, e.exploit)])
        g = backward(exploit_term(sub_batch, cfg, policy), leaf)
        g = g.scale(1.0 / len(meta_batch))
        total = g if total is None else total + g
    return total


def build_meta_batch(theta_t, tasks, explore, cfg, policy, seed, it):
    entries = []
    for i, (task, ex) in enumerate(zip(tasks, explore)):
        rng = np.random.default_rng([int(seed), 99, int(it), i])
        tp = inner_update(theta_t, ex, cfg.inner, policy, cfg.gamma, rng=rng)
        entries.append(TaskSample(task, i, ex, tp))
    return MetaBatch(entries)


def meta_step(algo, theta, tasks, cfg, ctx, it=0):
    """One meta-iteration: collect, build the surrogate, backprop, clip, Adam.

    Returns (theta_new, stats).  ``stats`` includes env_steps, explore/exploit
    mean returns, per-task pre/post returns, and gradient norms.
    """
    if algo not in ALGOS:
        raise ContractViolation(f"unknown algorithm {algo!r}")
    cfg.validate()
    policy, sampler = ctx.policy, ctx.sampler
    theta = theta.detach()
    stats = {"grad_norm_pre_clip": [], "grad_norm": []}

    if algo in ("rl2", "erl2"):
        k, p = cfg.rl2_episodes, cfg.rl2_explore
        units = [(t, ctx.env_cfg, policy, theta, k, p, (ctx.seed, "trial", it), i)
                 for i, t in enumerate(tasks)]
        trials = sampler.map(trial_unit, units)
        for _ in range(cfg.meta_grad_steps):
            tape = Tape()
            th = theta.watch(tape)
            loss = erl2_surrogate(trials, cfg, policy, th, masked=(algo == "erl2"))
            theta, gn = _apply(loss, th, theta, cfg, ctx, stats)
        ep_means = [float(np.mean([tr[e].total_return for tr in trials])) for e in range(k)]
        stats.update(
            env_steps=sum(len(t) for tr in trials for t in tr),
            episode_returns=ep_means,
            explore_return=float(np.mean(ep_means[:p])) if p else float("nan"),
            exploit_return=float(np.mean(ep_means[p:])),
            pre_returns=[float(np.mean([t.total_return for t in tr[:p]])) if p else float("nan") for tr in trials],
            post_returns=[float(np.mean([t.total_return for t in tr[p:]])) for tr in trials],
            loss=float(loss.item()))
        return theta, stats

    units = [(t, ctx.env_cfg, policy, theta, cfg.explore_episodes, (ctx.seed, "explore", it), 1, i)
             for i, t in enumerate(tasks)]
    explore = sampler.map(episodes_unit, units)
    differentiable = cfg.inner.kind in DIFFERENTIABLE_KINDS
    tape = Tape()
    th = theta.watch(tape)
    batch = build_meta_batch(th, tasks, explore, cfg, policy, ctx.seed, it)
    units = [(t, ctx.env_cfg, policy, e.theta_prime.detach(), cfg.exploit_episodes,
              (ctx.seed, "exploit", it), 0, i) for i, (t, e) in enumerate(zip(tasks, batch.entries))]
    for e, ex in zip(batch.entries, sampler.map(episodes_unit, units)):
        e.exploit = ex
    for step in range(cfg.meta_grad_steps):
        if step > 0:
            tape = Tape()
            th = theta.watch(tape)
            fresh = build_meta_batch(th, tasks, explore, cfg, policy, ctx.seed, it)
            for e, f in zip(batch.entries, fresh.entries):
                e.theta_prime = f.theta_prime
        if differentiable:
            loss = maml_surrogate(batch, cfg, policy)
            if algo == "emaml":
                loss = loss + mul(explore_term(batch, cfg, policy, th), cfg.lambda_explore)
            theta, _ = _apply(loss, th, theta, cfg, ctx, stats)
        else:
            g = _first_order_grads(batch, cfg, policy, th)
            loss = maml_surrogate(batch, cfg, policy, first_order=True)
            if algo == "emaml":
                ex_loss = mul(explore_term(batch, cfg, policy, th), cfg.lambda_explore)
                g = g + backward(ex_loss, th)
                loss = loss + ex_loss
            theta = _apply_grads(g, theta, cfg, ctx, stats)
    pre = [float(np.mean([t.total_return for t in e.explore])) for e in batch.entries]
    post = [float(np.mean([t.total_return for t in e.exploit])) for e in batch.entries]
    stats.update(
        env_steps=sum(len(t) for e in batch.entries for t in e.explore + e.exploit),
        explore_return=float(np.mean(pre)), exploit_return=float(np.mean(post)),
        pre_returns=pre, post_returns=post, loss=float(as_tensor(loss).item()))
    return theta, stats


def _apply(loss, th, theta, cfg, ctx, stats):
    g = backward(loss, th)
    return _apply_grads(g, theta, cfg, ctx, stats), g


def _apply_grads(g, theta, cfg, ctx, stats):
    g = g.detach()
    clipped, norm = clip_grad_norm(g, cfg.max_grad_norm)
    stats["grad_norm_pre_clip"].append(norm)
    stats["grad_norm"].append(clipped.norm())
    return ctx.adam.step(theta, clipped)
