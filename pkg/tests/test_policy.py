import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaexp.autodiff import Tape, backward, finite_difference_check, log_softmax, pick, sum_
from metaexp.errors import ContractViolation, NumericFault
from metaexp.params import ParamVector
from metaexp.policy import (GRUPolicy, MLPPolicy, PolicyConfig, entropy, load_params,
                            read_manifest, rl2_input, sample_action, sample_from_logp, save_params)


def test_mlp_shapes_and_numpy_path_agree(rng):
    pol = MLPPolicy(5, 4, hidden=(8, 8))
    th = pol.init_params(rng)
    obs = rng.normal(size=(7, 5))
    lp = log_softmax(pol.logits(th, obs)).data
    assert lp.shape == (7, 4)
    assert np.allclose(pol.log_probs_np(th, obs), lp, atol=1e-12)
    assert pol.logits(th, obs[0]).shape == (4,)


def test_mlp_rejects_wrong_width(rng):
    pol = MLPPolicy(5, 4)
    with pytest.raises(ContractViolation):
        pol.logits(pol.init_params(rng), np.zeros(6))


def test_bias_transform_adds_segment(rng):
    pol = MLPPolicy.from_config(3, 4, PolicyConfig(hidden=(6,), bias_transform=True, bias_dim=2))
    th = pol.init_params(rng)
    assert "bias_t" in th
    assert th["W0"].shape == (5, 6)
    obs = rng.normal(size=(4, 3))
    f = lambda p: sum_(pick(log_softmax(pol.logits(p, obs)), np.array([0, 1, 2, 3])))  # noqa: E731
    assert finite_difference_check(f, th) < 1e-6


def test_initial_policy_near_uniform(rng):
    pol = MLPPolicy(4, 4)
    lp = pol.log_probs_np(pol.init_params(rng), rng.normal(size=(10, 4)))
    assert np.allclose(np.exp(lp), 0.25, atol=0.02)


def test_gru_step_matches_numpy_and_fd(rng):
    pol = GRUPolicy(3, 4, hidden=5, out_scale=1.0)
    th = pol.init_params(rng)
    x = rng.normal(size=(2, pol.input_len))
    h = rng.normal(size=(2, 5)) * 0.1
    logits, h1 = pol.step(th, h, x)
    lp_np, h1_np = pol.step_np(th, h, x)
    assert np.allclose(h1.data, h1_np, atol=1e-12)
    assert np.allclose(log_softmax(logits).data, lp_np, atol=1e-12)

    def unroll(p):
        hh = pol.initial_state(2)
        total = 0.0
        for _ in range(3):
            lg, hh = pol.step(p, hh, x)
            total = total + sum_(pick(log_softmax(lg), np.array([1, 2])))
        return total
    assert finite_difference_check(unroll, th) < 1e-6


def test_gru_rejects_nonfinite_hidden(rng):
    pol = GRUPolicy(3, 4, hidden=5)
    with pytest.raises(NumericFault):
        pol.step(pol.init_params(rng), np.full((1, 5), np.nan), np.zeros((1, pol.input_len)))


def test_rl2_input_layout():
    x = rl2_input(np.array([0.5, -0.5]), 2, 1.0, True, 4)
    assert np.array_equal(x, [0.5, -0.5, 0, 0, 1, 0, 1.0, 1.0])
    x0 = rl2_input(np.array([0.5, -0.5]), -1, 0.0, False, 4)
    assert np.array_equal(x0, [0.5, -0.5, 0, 0, 0, 0, 0.0, 0.0])


def test_sample_action_frequencies():
    rng = np.random.default_rng(0)
    logits = np.log(np.array([[0.1, 0.2, 0.3, 0.4]] * 20000))
    actions, lp = sample_action(logits, rng)
    freq = np.bincount(actions, minlength=4) / len(actions)
    assert np.allclose(freq, [0.1, 0.2, 0.3, 0.4], atol=0.015)
    assert np.allclose(lp.data, np.log(np.array([0.1, 0.2, 0.3, 0.4]))[actions])


def test_sample_action_is_differentiable():
    tape = Tape()
    z = tape.watch(np.array([0.1, 0.2, -0.3, 0.0]))
    a, lp = sample_action(z, np.random.default_rng(0))
    (g,) = backward(lp, [z])
    p = np.exp(log_softmax(z.reshape(1, 4)).data[0])
    onehot = np.eye(4)[a]
    assert np.allclose(g.data, onehot - p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(0, 1, exclude_max=True))
def test_sample_from_logp_in_range(row, u):
    lp = np.asarray(row) - np.log(np.exp(row).sum())
    a = sample_from_logp(lp, u)
    assert 0 <= a < len(row)


def test_entropy_of_uniform():
    lp = np.log(np.full((2, 4), 0.25))
    assert np.allclose(entropy(lp).data, np.log(4))


def test_checkpoint_roundtrip(tmp_path, rng):
    pol = MLPPolicy(3, 4, hidden=(5,))
    th = pol.init_params(rng)
    path = tmp_path / "ck.bin"
    save_params(path, th, {"algo": "maml"})
    back = load_params(path, th.schema)
    assert back.equal(th)
    _, meta, digest = read_manifest(path)
    assert meta == {"algo": "maml"} and len(digest) == 64


def test_checkpoint_detects_corruption_and_schema(tmp_path, rng):
    pol = MLPPolicy(3, 4, hidden=(5,))
    th = pol.init_params(rng)
    path = tmp_path / "ck.bin"
    save_params(path, th)
    with pytest.raises(ContractViolation):
        load_params(path, MLPPolicy(3, 4, hidden=(6,)).init_params(rng).schema)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ContractViolation):
        load_params(path)


def test_param_vector_flatten_roundtrip(rng):
    th = GRUPolicy(2, 4, hidden=3).init_params(rng)
    assert ParamVector.unflatten(th.flatten(), th.schema).equal(th)


# ------------------------------------------------------- worked examples

def test_zero_weights_give_uniform_logits():
    pol = MLPPolicy(3, 4, hidden=(5, 5))
    th = pol.init_params(np.random.default_rng(0)).zeros_like()
    assert np.array_equal(pol.logits(th, np.ones(3)).data, np.zeros(4))
    gru = GRUPolicy(3, 4, hidden=5)
    gth = gru.init_params(np.random.default_rng(0)).zeros_like()
    logits, h = gru.step(gth, np.zeros(5), np.ones(gru.input_len))
    assert np.array_equal(logits.data, np.zeros(4)) and np.all(np.abs(h.data) < 1)


def test_hidden_state_sees_rewards():
    gru = GRUPolicy(2, 4, hidden=8)
    th = gru.init_params(np.random.default_rng(0))
    obs = np.array([0.1, -0.2])
    _, h1 = gru.step(th, np.zeros(8), rl2_input(obs, 1, 0.0, False))
    _, h2 = gru.step(th, np.zeros(8), rl2_input(obs, 1, 1.0, False))
    assert not np.allclose(h1.data, h2.data)


def test_near_deterministic_logits():
    a, lp = sample_action(np.array([1000.0, 0, 0, 0]), np.random.default_rng(0))
    assert a == 0 and abs(lp.item()) < 1e-12


def test_uniform_sampling_frequencies_1e5():
    n = 100_000
    acts, lp = sample_action(np.zeros((n, 4)), np.random.default_rng(5))
    counts = np.bincount(acts, minlength=4)
    sd = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) <= 3 * sd)
    assert np.allclose(np.exp(lp.data), 0.25, atol=1e-12)


def test_log_prob_consistency_and_score_identity(rng):
    pol = MLPPolicy(3, 4, hidden=(6,))
    th = pol.init_params(rng)
    th = ParamVector({k: v.data + rng.normal(size=v.shape) for k, v in th.items()})
    obs = rng.normal(size=3)
    lp = log_softmax(pol.logits(th, obs.reshape(1, 3))).data[0]
    assert abs(np.exp(lp).sum() - 1.0) < 1e-12
    total = None
    for a in range(4):
        tape = Tape()
        p = th.watch(tape)
        g = backward(sum_(pick(log_softmax(pol.logits(p, obs.reshape(1, 3))), np.array([a]))), p)
        g = g.scale(float(np.exp(lp[a])))
        total = g if total is None else total + g
    assert np.abs(total.flatten()).max() < 1e-10


def test_bias_transform_off_and_on_lengths(rng):
    from metaexp.policy import bias_transform
    obs = np.ones((2, 3))
    assert bias_transform(obs, np.zeros(4)).shape == (2, 7)
    assert MLPPolicy(3, 4, hidden=(5,)).init_params(rng)["W0"].shape == (3, 5)


def test_bias_transform_receives_meta_gradient(rng):
    from metaexp.envs import TaskSpec, make_env
    from metaexp.metaalgos import (InnerOperatorConfig, MetaBatch, MetaConfig, TaskSample,
                                   exploit_term, inner_update)
    from metaexp.rlcore import Trajectory, collect_batch
    pol = MLPPolicy(2, 4, hidden=(6,), bias_transform=True, bias_dim=4, out_scale=1.0)
    th = pol.init_params(rng)
    task = TaskSpec("pointmass", 0, horizon=8, corner=0)
    def batch(seed, flag):
        ts = collect_batch([make_env(task) for _ in range(2)], pol, th, 8,
                           [np.random.default_rng([seed, i]) for i in range(2)], flag)
        return [Trajectory(t.observations, t.actions, rng.normal(size=len(t)), t.dones, t.log_probs, flag)
                for t in ts]
    ex, xp = batch(1, 1), batch(2, 0)
    tape = Tape()
    p = th.watch(tape)
    tp = inner_update(p, ex, InnerOperatorConfig(alpha=0.5), pol)
    g = backward(exploit_term(MetaBatch([TaskSample(task, 0, ex, tp, xp)]),
                              MetaConfig(outer="vpg"), pol), p)
    assert np.abs(g["bias_t"].data).max() > 0
