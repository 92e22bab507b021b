"""Single-task RL pieces: rollouts, returns and advantages, the VPG / CPI /
PPO-clip surrogates, SGD and Adam, and global-norm clipping."""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Tensor, as_tensor, clip, exp, minimum, mul, no_record, sub, sum_
from .errors import ContractViolation, NumericFault
from .params import ParamVector
from .policy import sample_from_logp

log = logging.getLogger(__name__)

SURROGATE_KINDS = ("vpg", "cpi", "ppo")


@dataclass
class Trajectory:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    log_probs: np.ndarray
    explore_flag: int = 0
    task_id: int = -1
    info: dict = field(default_factory=dict)
    inputs: np.ndarray = None  # RL^2 policy inputs x_t, when recorded

    def __len__(self):
        return len(self.actions)

    @property
    def total_return(self):
        return float(np.sum(self.rewards))

    def __post_init__(self):
        n = len(self.actions)
        for name in ("observations", "rewards", "dones", "log_probs"):
            if len(getattr(self, name)) != n:
                raise ContractViolation(f"trajectory field {name} has length "
                                        f"{len(getattr(self, name))}, expected {n}")
        if n and not np.isfinite(self.log_probs).all():
            raise NumericFault("trajectory", detail="non-finite log-prob")


@dataclass
class AdvantageBatch:
    returns: np.ndarray
    advantages: np.ndarray
    mean: float = 0.0
    std: float = 1.0
    normalized: bool = False


class _Episode:
    __slots__ = ("env", "rng", "obs", "acts", "rews", "dones", "lps", "info", "done")

    def __init__(self, env, rng, obs):
        self.env, self.rng = env, rng
        self.obs, self.acts, self.rews, self.dones, self.lps = [obs], [], [], [], []
        self.info, self.done = {}, False


def collect_batch(envs, policy, params, horizon, rngs, explore_flag=0, task_id=-1, starts=None):
    """Run one episode per env in lockstep with frozen ``params``.

    Each episode owns its rng (reset draw, then one uniform per action), so
    the sampled actions do not depend on how many episodes share the batch.
    Log-probs may differ from a one-episode run in the last bits, since a
    batched matmul rounds differently; a given batch is still reproducible.
    """
    theta = params.detach() if isinstance(params, ParamVector) else params
    eps = []
    with no_record():
        for i, (env, rng) in enumerate(zip(envs, rngs)):
            try:
                obs = env.reset(rng) if starts is None else env.reset(rng, start=starts[i])
            except Exception as e:
                e.task_id = task_id
                raise
            eps.append(_Episode(env, rng, obs))
        for _ in range(horizon):
            live = [e for e in eps if not e.done]
            if not live:
                break
            obs = np.stack([e.obs[-1] for e in live])
            logp = policy.log_probs_np(theta, obs)
            for e, row in zip(live, logp):
                a = sample_from_logp(row, e.rng.random())
                try:
                    res = e.env.step(a)
                except Exception as exc:
                    exc.task_id = task_id
                    raise
                e.acts.append(a)
                e.lps.append(row[a])
                e.rews.append(res.reward)
                e.dones.append(res.done)
                e.info = res.info
                e.done = res.done
                e.obs.append(res.obs)
    return [Trajectory(np.array(e.obs[:-1]), np.array(e.acts, dtype=np.int64),
                       np.array(e.rews, dtype=np.float64), np.array(e.dones, dtype=bool),
                       np.array(e.lps, dtype=np.float64), explore_flag, task_id, e.info)
            for e in eps]


def collect_rollout(env, policy, params, horizon, rng, explore_flag=0, task_id=-1):
    """One episode, truncated at ``horizon`` or ``done``."""
    return collect_batch([env], policy, params, horizon, [rng], explore_flag, task_id)[0]


# ------------------------------------------------------------------ returns

def _check_gamma(gamma):
    if not 0.0 <= gamma <= 1.0:
        raise ContractViolation(f"discount {gamma} outside [0, 1]")


def discounted_returns(rewards, gamma):
    _check_gamma(gamma)
    return kernels.discounted_returns(np.asarray(rewards, dtype=np.float64), float(gamma))


def masked_returns(trial, gamma):
    """Trial-level return with explore-episode rewards removed from the sum.

    ``trial`` is the ordered list of Trajectories of one RL^2 trial.  The
    result covers the concatenated trial, one value per timestep.
    """
    _check_gamma(gamma)
    if not any(t.explore_flag == 0 for t in trial):
        raise ContractViolation("trial has no exploit episode; masked return is undefined")
    rewards = np.concatenate([t.rewards for t in trial]).astype(np.float64)
    mask = np.concatenate([np.full(len(t), 0.0 if t.explore_flag else 1.0) for t in trial])
    return kernels.masked_returns(rewards, mask, float(gamma))


def normalize_advantages(adv, eps=1e-8):
    """Returns ``(normalized, mean, std)``; zero-variance batches are returned
    unchanged with a warning."""
    adv = np.asarray(adv, dtype=np.float64)
    mean, std = float(adv.mean()), float(adv.std())
    if adv.size < 2 or std < 1e-12:
        log.warning("advantage batch has zero variance; leaving it unnormalized")
        return adv.copy(), mean, std
    return (adv - mean) / (std + eps), mean, std


def gae_advantages(trajectory, values, gamma, lam, normalize=False, last_value=0.0):
    """TD(lambda) advantages.  ``trajectory`` is a Trajectory or a reward array;
    ``values`` of None means the value head is off (all zeros)."""
    _check_gamma(gamma)
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation(f"GAE lambda {lam} outside [0, 1]")
    rewards = trajectory.rewards if isinstance(trajectory, Trajectory) else np.asarray(trajectory, dtype=np.float64)
    values = np.zeros_like(rewards) if values is None else np.asarray(values, dtype=np.float64)
    if values.shape != rewards.shape:
        raise ContractViolation("values and rewards differ in length")
    adv = kernels.gae_advantages(rewards, values, float(gamma), float(lam), float(last_value))
    ret = discounted_returns(rewards, gamma)
    if normalize:
        norm, mean, std = normalize_advantages(adv)
        return AdvantageBatch(ret, norm, mean, std, normalized=adv.size >= 2 and std >= 1e-12)
    return AdvantageBatch(ret, adv, float(adv.mean()) if adv.size else 0.0,
                          float(adv.std()) if adv.size else 0.0)


# --------------------------------------------------------------- surrogates

def surrogate_terms(new_log_probs, old_log_probs, advantages, kind, clip_eps=0.2):
    """Per-sample objective (to be maximized) for each surrogate kind."""
    new = as_tensor(new_log_probs)
    adv = np.asarray(advantages, dtype=np.float64)
    if kind == "vpg":
        return mul(new, adv)
    if kind not in ("cpi", "ppo"):
        raise ContractViolation(f"unknown surrogate kind {kind!r}")
    old = np.asarray(old_log_probs, dtype=np.float64)
    ratio = exp(sub(new, old))
    if not np.isfinite(ratio.data).all():
        raise NumericFault("surrogate_loss", detail="non-finite probability ratio")
    unclipped = mul(ratio, adv)
    if kind == "cpi":
        return unclipped
    return minimum(unclipped, mul(clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv))


def surrogate_loss(new_log_probs, old_log_probs, advantages, kind="ppo", clip_eps=0.2,
                   ent_coeff=0.0, entropies=None, weights=None):
    """Negated surrogate.  ``weights`` replaces the default 1/N mean, e.g.
    1/n_trajectories for a per-trajectory sum."""
    terms = surrogate_terms(new_log_probs, old_log_probs, advantages, kind, clip_eps)
    n = terms.shape[0]
    if n == 0:
        raise ContractViolation("surrogate over an empty batch")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = -sum_(mul(terms, w))
    if ent_coeff and entropies is not None:
        loss = loss - mul(sum_(mul(as_tensor(entropies), w)), ent_coeff)
    return loss


# --------------------------------------------------------------- optimizers

def clip_grad_norm(grads, max_norm):
    """Global-norm clipping; returns ``(clipped, pre_clip_norm)``."""
    for name, g in grads.items():
        if not np.isfinite(g.data).all():
            raise NumericFault("clip_grad_norm", detail=f"non-finite gradient in segment {name!r}")
    norm = grads.norm()
    if max_norm is not None and norm > max_norm:
        return grads.scale(max_norm / norm), norm
    return grads, norm


def sgd_step(params, grads, alpha):
    """theta - alpha * g; differentiable when either side is on a tape."""
    return ParamVector({k: params[k] - mul(as_tensor(grads[k]), alpha) for k in params})


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = {k: np.zeros(v.shape) for k, v in params.items()}
            self.v = {k: np.zeros(v.shape) for k, v in params.items()}
        if params.schema != grads.schema:
            raise ContractViolation("gradient schema does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, p in params.items():
            g = grads[k].data
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            out[k] = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return ParamVector(out)

    def state_dict(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def optimizer_step(kind, params, grads, max_grad_norm=None, lr=0.01, adam=None):
    grads, _ = clip_grad_norm(grads, max_grad_norm)
    if kind == "sgd":
        return sgd_step(params, grads, lr)
    if kind == "adam":
        adam = adam or Adam(lr)
        return adam.step(params, grads)
    raise ContractViolation(f"unknown optimizer {kind!r}")


def dump_trajectory(traj, fh):
    """One tab-separated line per timestep: t, action, reward, done, log_prob, explore."""
    for t in range(len(traj)):
        fh.write(f"{t}\t{int(traj.actions[t])}\t{float(traj.rewards[t])!r}\t{int(traj.dones[t])}\t"
                 f"{float(traj.log_probs[t])!r}\t{traj.explore_flag}\n")
