"""Categorical policies on top of the autodiff engine.

``MLPPolicy`` is the feed-forward policy adapted by MAML-style inner updates;
``GRUPolicy`` is the recurrent RL^2 policy whose hidden state carries
information across the episodes of one trial.
"""
import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat, broadcast_to, exp, log_softmax, matmul, mul, pick, sigmoid, sub, sum_, tanh
from .errors import ContractViolation, NumericFault
from .params import ParamVector

MANIFEST_MAGIC = "metaexp-params v1"


@dataclass
class PolicyConfig:
    hidden: tuple = (64, 64)
    gru_hidden: int = 64
    bias_transform: bool = False
    bias_dim: int = 4
    out_scale: float = 0.01


def _dense_init(rng, fan_in, fan_out, scale=1.0):
    return rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))


def _as_batch(obs):
    obs = as_tensor(obs)
    if obs.ndim == 1:
        return obs.reshape(1, obs.shape[0]), True
    return obs, False


class MLPPolicy:
    """tanh MLP -> logits.  With ``bias_transform`` a learned vector is
    appended to every observation before the first layer."""

    def __init__(self, obs_len, n_actions=4, hidden=(64, 64), bias_transform=False,
                 bias_dim=4, out_scale=0.01):
        self.obs_len = obs_len
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        self.bias_transform = bias_transform
        self.bias_dim = bias_dim if bias_transform else 0
        self.out_scale = out_scale

    @classmethod
    def from_config(cls, obs_len, n_actions, cfg):
        return cls(obs_len, n_actions, cfg.hidden, cfg.bias_transform, cfg.bias_dim, cfg.out_scale)

    def init_params(self, rng):
        sizes = (self.obs_len + self.bias_dim,) + self.hidden + (self.n_actions,)
        segs = {}
        for i in range(len(sizes) - 1):
            last = i == len(sizes) - 2
            segs[f"W{i}"] = _dense_init(rng, sizes[i], sizes[i + 1], self.out_scale if last else 1.0)
            segs[f"b{i}"] = np.zeros(sizes[i + 1])
        if self.bias_transform:
            segs["bias_t"] = np.zeros(self.bias_dim)
        return ParamVector(segs)

    def logits(self, params, obs):
        x, single = _as_batch(obs)
        if x.shape[1] != self.obs_len:
            raise ContractViolation(f"observation width {x.shape[1]} != {self.obs_len}")
        if self.bias_transform:
            x = bias_transform(x, params["bias_t"])
        n_layers = len(self.hidden) + 1
        for i in range(n_layers):
            x = matmul(x, params[f"W{i}"]) + params[f"b{i}"]
            if i < n_layers - 1:
                x = tanh(x)
        return x.reshape(self.n_actions) if single else x

    def log_probs_np(self, params, obs):
        """Tape-free forward for rollouts: (N, obs_len) -> (N, A) log-probs."""
        x = np.asarray(obs, dtype=np.float64)
        if self.bias_transform:
            b = params["bias_t"].data
            x = np.concatenate([x, np.broadcast_to(b, (x.shape[0], b.shape[0]))], axis=1)
        n_layers = len(self.hidden) + 1
        for i in range(n_layers):
            x = x @ params[f"W{i}"].data + params[f"b{i}"].data
            if i < n_layers - 1:
                x = np.tanh(x)
        return _log_softmax_np(x)


def _log_softmax_np(x):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def mlp_policy_logits(params, obs, policy=None):
    if policy is None:
        w0 = params["W0"]
        n_layers = sum(1 for k in params if k.startswith("W"))
        hidden = tuple(params[f"W{i}"].shape[1] for i in range(n_layers - 1))
        bias = "bias_t" in params
        bias_dim = params["bias_t"].shape[0] if bias else 0
        policy = MLPPolicy(w0.shape[0] - bias_dim, params[f"W{n_layers - 1}"].shape[1],
                           hidden, bias, bias_dim)
    return policy.logits(params, obs)


def bias_transform(obs, bias_vec):
    """Append a learned vector to each observation row."""
    x, single = _as_batch(obs)
    b = as_tensor(bias_vec)
    tiled = broadcast_to(b.reshape(1, b.shape[0]), (x.shape[0], b.shape[0]))
    out = concat([x, tiled], axis=1)
    return out.reshape(out.shape[1]) if single else out


class GRUPolicy:
    """Gated recurrent cell with a linear categorical head.

    z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
    n = tanh(x Wn + (r*h) Un + bn), h' = (1-z)*n + z*h, logits = h' Wo + bo.
    """

    def __init__(self, obs_len, n_actions=4, hidden=64, out_scale=0.01):
        self.obs_len = obs_len
        self.n_actions = n_actions
        self.hidden = hidden
        self.input_len = obs_len + n_actions + 2
        self.out_scale = out_scale

    @classmethod
    def from_config(cls, obs_len, n_actions, cfg):
        return cls(obs_len, n_actions, cfg.gru_hidden, cfg.out_scale)

    def init_params(self, rng):
        i, h = self.input_len, self.hidden
        segs = {}
        for gate in ("z", "r", "n"):
            segs[f"W{gate}"] = _dense_init(rng, i, h)
            segs[f"U{gate}"] = _dense_init(rng, h, h)
            segs[f"b{gate}"] = np.zeros(h)
        segs["Wo"] = _dense_init(rng, h, self.n_actions, self.out_scale)
        segs["bo"] = np.zeros(self.n_actions)
        return ParamVector(segs)

    def initial_state(self, batch=1):
        return Tensor(np.zeros((batch, self.hidden)))

    def step(self, params, h, x):
        x, single = _as_batch(x)
        h = as_tensor(h)
        if h.ndim == 1:
            h = h.reshape(1, h.shape[0])
        if x.shape[1] != self.input_len or h.shape[1] != self.hidden:
            raise ContractViolation(
                f"GRU step: input {x.shape} / hidden {h.shape} vs ({self.input_len}, {self.hidden})")
        if not np.isfinite(h.data).all():
            raise NumericFault("gru_policy_step")
        z = sigmoid(matmul(x, params["Wz"]) + matmul(h, params["Uz"]) + params["bz"])
        r = sigmoid(matmul(x, params["Wr"]) + matmul(h, params["Ur"]) + params["br"])
        n = tanh(matmul(x, params["Wn"]) + matmul(mul(r, h), params["Un"]) + params["bn"])
        h_new = mul(sub(1.0, z), n) + mul(z, h)
        logits = matmul(h_new, params["Wo"]) + params["bo"]
        if single:
            return logits.reshape(self.n_actions), h_new.reshape(self.hidden)
        return logits, h_new

    def step_np(self, params, h, x):
        """Tape-free GRU step on (N, input_len) inputs; returns (log-probs, h')."""
        p = {k: v.data for k, v in params.items()}
        if not np.isfinite(h).all():
            raise NumericFault("gru_policy_step")
        sig = lambda v: 0.5 * np.tanh(0.5 * v) + 0.5
        z = sig(x @ p["Wz"] + h @ p["Uz"] + p["bz"])
        r = sig(x @ p["Wr"] + h @ p["Ur"] + p["br"])
        n = np.tanh(x @ p["Wn"] + (r * h) @ p["Un"] + p["bn"])
        h_new = (1.0 - z) * n + z * h
        return _log_softmax_np(h_new @ p["Wo"] + p["bo"]), h_new


def gru_policy_step(params, h, x, policy):
    return policy.step(params, h, x)


def rl2_input(obs, prev_action, prev_reward, prev_done, n_actions=4):
    """x_t = [o, onehot(a_prev), r_prev, d_prev]; a_prev < 0 means "none"."""
    obs = np.asarray(obs, dtype=np.float64)
    x = np.zeros(obs.shape[0] + n_actions + 2)
    x[:obs.shape[0]] = obs
    if prev_action is not None and prev_action >= 0:
        x[obs.shape[0] + int(prev_action)] = 1.0
    x[-2] = float(prev_reward)
    x[-1] = 1.0 if prev_done else 0.0
    return x


def log_probs(logits):
    return log_softmax(logits)


def entropy(logp):
    """Per-row entropy of a log-probability matrix."""
    return -sum_(mul(exp(logp), logp), axis=-1)


def sample_action(logits, rng):
    """Categorical draw.  Returns ``(action, log_prob)`` with ``log_prob`` a
    Tensor (differentiable when ``logits`` is)."""
    logits = as_tensor(logits)
    single = logits.ndim == 1
    lp = log_softmax(logits.reshape(1, logits.shape[0]) if single else logits)
    probs = np.exp(lp.data)
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    actions = np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)
    chosen = pick(lp, actions)
    if single:
        return int(actions[0]), chosen.reshape(())
    return actions, chosen


def sample_from_logp(logp_row, u):
    """Inverse-CDF draw from one row of log-probabilities (numpy, no tape)."""
    cdf = np.cumsum(np.exp(logp_row))
    a = int((cdf < u).sum())
    return min(a, logp_row.shape[0] - 1)


# ---------------------------------------------------------------- checkpoints

def save_params(path, params, extra=None):
    """Write ``<path>`` (little-endian float64 blob) and ``<path>.manifest``."""
    path = os.fspath(path)
    blob = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in params.values())
    lines = [MANIFEST_MAGIC, f"sha256\t{hashlib.sha256(blob).hexdigest()}"]
    for k, v in (extra or {}).items():
        lines.append(f"meta\t{k}\t{v}")
    off = 0
    for name, t in params.items():
        shape = ",".join(str(n) for n in t.shape)
        lines.append(f"segment\t{name}\t{shape}\t{off}\t{t.size}")
        off += t.size
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    with open(path + ".manifest.tmp", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(path + ".manifest.tmp", path + ".manifest")


def read_manifest(path):
    with open(os.fspath(path) + ".manifest") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise ContractViolation(f"{path}: not a parameter manifest")
    segments, meta, digest = [], {}, None
    for line in lines[1:]:
        parts = line.split("\t")
        if parts[0] == "segment":
            shape = tuple(int(n) for n in parts[2].split(",") if n)
            segments.append((parts[1], shape, int(parts[3]), int(parts[4])))
        elif parts[0] == "meta":
            meta[parts[1]] = parts[2]
        elif parts[0] == "sha256":
            digest = parts[1]
    return segments, meta, digest


def load_params(path, schema=None):
    """Read a checkpoint; ``schema`` (name, shape) pairs must match exactly if given."""
    segments, _, digest = read_manifest(path)
    with open(os.fspath(path), "rb") as fh:
        blob = fh.read()
    if digest is not None and hashlib.sha256(blob).hexdigest() != digest:
        raise ContractViolation(f"{path}: checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    got = tuple((name, shape) for name, shape, _, _ in segments)
    if schema is not None and tuple((n, tuple(s)) for n, s in schema) != got:
        raise ContractViolation(f"{path}: parameter schema mismatch")
    total = sum(count for *_, count in segments)
    if flat.size != total:
        raise ContractViolation(f"{path}: blob holds {flat.size} values, manifest {total}")
    return ParamVector({name: flat[off:off + n].reshape(shape).copy()
                        for name, shape, off, n in segments})
