import numpy as np
import pytest

from metaexp.envs import KrazyConfig, TaskSpec, make_env
from metaexp.errors import ContractViolation
from metaexp.harness import (CSV_HEADER, TEST_SEED_RANGE, TRAIN_SEED_RANGE, ExperimentConfig,
                             _iteration_bound, env_obs_len, evaluate_gap, grad_steps_sweep,
                             heuristic_metrics, make_policy, read_curve, run_experiment, train_one,
                             train_tasks)
from metaexp.harness import test_tasks as held_out_tasks
from metaexp.policy import load_params
from metaexp.rlcore import collect_rollout
from metaexp.sampling import Sampler, resolve_workers


def small_cfg(**kw):
    cfg = ExperimentConfig(env="pointmass", n_train_tasks=3, n_test_tasks=4, budget=2000,
                           eval_every=2, repeats=1, samplers=1, horizon=20)
    cfg.policy.hidden = (8,)
    cfg.policy.gru_hidden = 8
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg.validate()


def test_pools_deterministic_and_disjoint():
    cfg = small_cfg(env="krazy", horizon=None)
    a, b = held_out_tasks(cfg, 3), held_out_tasks(cfg, 3)
    assert a == b
    assert all(TEST_SEED_RANGE[0] <= t.layout_seed < TEST_SEED_RANGE[1] for t in a)
    for it in range(3):
        assert all(TRAIN_SEED_RANGE[0] <= t.layout_seed < TRAIN_SEED_RANGE[1] for t in train_tasks(cfg, 3, it))
    assert train_tasks(cfg, 3, 0) != train_tasks(cfg, 3, 1)


def test_config_validation_names_keys():
    with pytest.raises(ContractViolation, match="algo"):
        ExperimentConfig(algo="ppo").validate()
    with pytest.raises(ContractViolation, match="budget"):
        ExperimentConfig(budget=0).validate()
    with pytest.raises(ContractViolation, match="meta.credit_mode"):
        cfg = ExperimentConfig()
        cfg.meta.credit_mode = "x"
        cfg.validate()


@pytest.mark.parametrize("algo", ["maml", "emaml", "rl2", "erl2"])
def test_training_respects_budget_and_eval_schedule(algo):
    cfg = small_cfg(algo=algo)
    points, theta, policy = train_one(cfg, 0, Sampler(1))
    assert points[0].env_steps == 0
    assert points[-1].env_steps <= cfg.budget
    assert all(b.env_steps > a.env_steps for a, b in zip(points, points[1:]))
    # the next iteration would not have fit
    assert points[-1].env_steps + _iteration_bound(cfg) > cfg.budget or len(points) == 1


def test_fresh_policy_gap_near_zero():
    cfg = small_cfg(algo="emaml", n_test_tasks=16, horizon=40)
    pol = make_policy(cfg, env_obs_len(cfg))
    th = pol.init_params(np.random.default_rng(0))
    ev = evaluate_gap(th, held_out_tasks(cfg, 0), cfg, pol, seed=0)
    assert abs(ev["mean_gap"]) < 0.2
    assert ev["pre"].shape == (16,)


def test_rl2_gap_uses_episode_split():
    cfg = small_cfg(algo="erl2", n_test_tasks=4)
    pol = make_policy(cfg, env_obs_len(cfg))
    ev = evaluate_gap(pol.init_params(np.random.default_rng(0)), held_out_tasks(cfg, 0), cfg, pol)
    assert len(ev["episode_means"]) == cfg.meta.rl2_episodes
    em = ev["episode_means"]
    assert np.isclose(ev["mean_pre"], np.mean(em[:3])) and np.isclose(ev["mean_post"], np.mean(em[3:]))


def test_grad_steps_sweep_rows():
    cfg = small_cfg(algo="maml")
    pol = make_policy(cfg, env_obs_len(cfg))
    rows = grad_steps_sweep(pol.init_params(np.random.default_rng(0)), held_out_tasks(cfg, 0), cfg, pol, 5)
    assert [r[0] for r in rows] == list(range(6))
    with pytest.raises(ContractViolation):
        grad_steps_sweep(None, [], small_cfg(algo="rl2"), pol, 2)


def test_heuristics_for_agent_that_never_moves():
    cfg = KrazyConfig(initial_energy=0)
    task = TaskSpec("krazy", 11, horizon=10)
    pol = make_policy(ExperimentConfig(algo="maml"), 81)
    th = pol.init_params(np.random.default_rng(0))
    trial = [collect_rollout(make_env(task, type("E", (), {"krazy": cfg})()), pol, th, 10,
                             np.random.default_rng(i)) for i in range(3)]
    tf, deaths, goals = heuristic_metrics([trial])
    assert tf == 1 / 8 and deaths == 0 and goals == 0
    with pytest.raises(ContractViolation):
        heuristic_metrics([trial], family="maze")


def test_run_experiment_outputs(tmp_path):
    cfg = small_cfg(algo="maml", repeats=2)
    res = run_experiment(cfg, tmp_path, workers=1)
    rows = read_curve(res["paths"]["curve"])
    assert tuple(rows[0].keys()) == CSV_HEADER
    assert rows[0]["tile_fraction"] == ""
    for s in (0, 1):
        assert (tmp_path / f"curve_seed{s}.csv").exists()
    ck0 = load_params(tmp_path / "checkpoint_seed0.bin")
    assert load_params(tmp_path / "checkpoint.bin").equal(ck0)
    text = (tmp_path / "curve.csv").read_text()
    assert text.splitlines()[1].startswith("0,maml,pointmass,0,")


def test_curve_identical_across_workers(tmp_path):
    cfg = small_cfg(algo="emaml")
    run_experiment(cfg, tmp_path / "a", workers=1)
    run_experiment(cfg, tmp_path / "b", workers=3)
    assert (tmp_path / "a" / "curve.csv").read_bytes() == (tmp_path / "b" / "curve.csv").read_bytes()


def test_krazy_curve_has_heuristics(tmp_path):
    cfg = small_cfg(algo="rl2", env="krazy", horizon=10, budget=800)
    run_experiment(cfg, tmp_path, workers=1)
    row = read_curve(tmp_path / "curve.csv")[0]
    assert 0 < float(row["tile_fraction"]) <= 1


def test_sampled_hyper_mode_changes_run():
    def cfg(**kw):
        c = small_cfg(algo="maml", env="maze", **kw)
        c.envs.maze.size = 7
        return c
    a, _, _ = train_one(cfg(), 0, Sampler(1))
    b, _, _ = train_one(cfg(hyper_mode="sampled"), 0, Sampler(1))
    assert a[0] == b[0] and a[-1] != b[-1]


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("METAEXP_THREADS", "2")
    assert resolve_workers(8) == 2
    monkeypatch.delenv("METAEXP_THREADS")
    assert resolve_workers(8) == 8


def test_gap_is_post_minus_pre_and_eval_is_pure():
    from metaexp.harness import params_hash
    cfg = small_cfg(algo="maml")
    pol = make_policy(cfg, env_obs_len(cfg))
    th = pol.init_params(np.random.default_rng(1))
    before = params_hash(th)
    ev = evaluate_gap(th, held_out_tasks(cfg, 0), cfg, pol, seed=0)
    assert params_hash(th) == before
    assert np.array_equal(ev["gap"], ev["post"] - ev["pre"])
    rows = grad_steps_sweep(th, held_out_tasks(cfg, 0), cfg, pol, 1)
    assert rows[0][1] == ev["mean_pre"] and rows[1][1] == ev["mean_post"]


def test_step_counter_equals_trajectory_lengths(monkeypatch):
    import metaexp.metaalgos as ma
    seen = []
    real_ep, real_trial = ma.episodes_unit, ma.trial_unit

    def ep(args):
        out = real_ep(args)
        seen.extend(len(t) for t in out)
        return out

    def trial(args):
        out = real_trial(args)
        seen.extend(len(t) for t in out)
        return out

    monkeypatch.setattr(ma, "episodes_unit", ep)
    monkeypatch.setattr(ma, "trial_unit", trial)
    for algo in ("emaml", "erl2"):
        seen.clear()
        with Sampler(1) as s:
            points, _, _ = train_one(small_cfg(algo=algo), 0, s)
        assert points[-1].env_steps == sum(seen) > 0


def test_averaged_curve_is_mean_of_repeats(tmp_path):
    cfg = small_cfg(algo="maml", repeats=3)
    run_experiment(cfg, tmp_path, workers=1)
    avg = read_curve(tmp_path / "curve.csv")
    reps = [read_curve(tmp_path / f"curve_seed{s}.csv") for s in range(3)]
    for i, row in enumerate(avg):
        for col in ("pre_return", "post_return", "gap"):
            mean = np.mean([float(r[i][col]) for r in reps])
            assert abs(float(row[col]) - mean) <= 1e-12


def test_random_policy_collects_some_goals():
    from metaexp.envs import sample_task
    cfg = ExperimentConfig(algo="maml", env="krazy")
    pol = make_policy(cfg, 81)
    th = pol.init_params(np.random.default_rng(0))
    rng = np.random.default_rng(0)
    trials = []
    for i in range(100):
        task = sample_task("krazy", rng)
        trials.append([collect_rollout(make_env(task), pol, th, task.horizon, np.random.default_rng(i))])
    _, _, goals = heuristic_metrics(trials)
    assert 0 < goals <= 3
