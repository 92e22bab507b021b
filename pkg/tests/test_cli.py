import json
import subprocess
import sys

import pytest
import yaml

from metaexp import config as config_mod
from metaexp.cli import main
from metaexp.errors import ContractViolation

FAST = ["--set", "n_train_tasks=2", "--set", "n_test_tasks=3", "--set", "horizon=10",
        "--set", "policy.hidden=[8]", "--repeats", "1", "--workers", "1"]


def train(out, *extra):
    return main(["train", "--algo", "emaml", "--env", "pointmass", "--seed", "0",
                 "--budget", "600", "--out", str(out), *FAST, *extra])


def test_train_writes_run_dir(tmp_path):
    assert train(tmp_path) == 0
    for name in ("curve.csv", "checkpoint.bin", "checkpoint.bin.manifest", "config.yaml", "manifest.json"):
        assert (tmp_path / name).exists(), name
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["exit_status"] == 0 and man["finished"]
    assert man["config_hash"] == config_mod.blob_sha1((tmp_path / "config.yaml").read_text())
    echoed = yaml.safe_load((tmp_path / "config.yaml").read_text())
    assert echoed["budget"] == 600 and echoed["policy"]["hidden"] == [8]
    assert not list(tmp_path.glob("*.tmp"))


def test_identical_invocations_identical_csv(tmp_path):
    assert train(tmp_path / "a") == 0
    assert train(tmp_path / "b") == 0
    assert (tmp_path / "a" / "curve.csv").read_bytes() == (tmp_path / "b" / "curve.csv").read_bytes()


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--algo", "bogus"]) == 2
    assert main([]) == 2
    assert main(["train", "--out", str(tmp_path), "--set", "meta.inner.alpha=fast"]) == 2
    assert "meta.inner.alpha" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path), "--set", "meta.nope=1"]) == 2


def test_config_file_then_flags(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("algo: maml\nbudget: 5000\nmeta:\n  beta: 0.01\n  inner:\n    alpha: 0.2\n")
    cfg = config_mod.resolve(f, {"budget": 700, "algo": None})
    assert cfg.algo == "maml" and cfg.budget == 700
    assert cfg.meta.beta == 0.01 and cfg.meta.inner.alpha == 0.2
    assert cfg.meta.gamma == 0.99  # default kept


def test_config_errors_name_key_path(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("meta:\n  inner:\n    inner_steps: lots\n")
    with pytest.raises(ContractViolation, match="meta.inner.inner_steps"):
        config_mod.resolve(f)
    f.write_text("envs:\n  krazy:\n    colour: 3\n")
    with pytest.raises(ContractViolation, match="envs.krazy.colour"):
        config_mod.resolve(f)
    f.write_text("meta: [1, 2]\n")
    with pytest.raises(ContractViolation, match="meta"):
        config_mod.resolve(f)
    with pytest.raises(ContractViolation, match="config"):
        config_mod.resolve(tmp_path / "missing.yaml")


def test_config_roundtrip_through_yaml(tmp_path):
    cfg = config_mod.resolve(None, overrides=["meta.lambda_explore=0.5", "horizon=50"])
    f = tmp_path / "c.yaml"
    f.write_text(config_mod.dump_yaml(cfg))
    again = config_mod.resolve(f)
    assert config_mod.to_tree(again) == config_mod.to_tree(cfg)


def test_blob_sha1_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert config_mod.blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_eval_and_sweep(tmp_path, capsys):
    assert train(tmp_path / "run") == 0
    ck = str(tmp_path / "run" / "checkpoint.bin")
    args = ["eval", "--algo", "emaml", "--env", "pointmass", "--checkpoint", ck,
            "--out", str(tmp_path / "ev"), *FAST]
    assert main(args + ["--sweep-steps", "5"]) == 0
    assert "gap" in capsys.readouterr().out
    lines = (tmp_path / "ev" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "steps,mean_return" and len(lines) == 1 + 6
    assert len((tmp_path / "ev" / "eval_gap.csv").read_text().splitlines()) == 1 + 3


def test_eval_errors(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert train(tmp_path / "run") == 0
    ck = str(tmp_path / "run" / "checkpoint.bin")
    # a GRU policy cannot load an MLP checkpoint
    assert main(["eval", "--algo", "rl2", "--env", "pointmass", "--checkpoint", ck,
                 "--out", str(tmp_path / "ev"), *FAST]) == 2


def test_oracle_command(capsys):
    assert main(["oracle", "--suite", "envs"]) == 0
    out = capsys.readouterr().out
    assert "PASS  envs/death_terminates" in out and "checks passed" in out


def test_oracle_detects_injected_sign_error(monkeypatch, capsys):
    from metaexp import autodiff
    orig = autodiff.VJP_RULES["tanh"]
    monkeypatch.setitem(autodiff.VJP_RULES, "tanh", lambda g, node: [autodiff.neg(x) for x in orig(g, node)])
    assert main(["oracle", "--suite", "autodiff"]) == 1
    assert "FAIL  autodiff/primitive/tanh" in capsys.readouterr().out


def test_numeric_fault_exits_3(tmp_path, monkeypatch, capsys):
    from metaexp.errors import NumericFault

    def boom(*a, **k):
        raise NumericFault("clip_grad_norm", detail="non-finite gradient in segment 'W0'")
    monkeypatch.setattr("metaexp.metaalgos.clip_grad_norm", boom)
    assert train(tmp_path) == 3
    assert "clip_grad_norm" in capsys.readouterr().err
    assert json.loads((tmp_path / "manifest.json").read_text())["exit_status"] == 3


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "metaexp.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "train" in out.stdout
