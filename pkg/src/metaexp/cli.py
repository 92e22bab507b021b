"""Command-line front end: ``metaexp train | eval | oracle``.

Exit codes: 0 ok, 1 oracle failure, 2 usage or config error, 3 numeric fault.
"""
import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import config as config_mod
from .errors import ContractViolation, NumericFault
from .harness import (env_obs_len, evaluate_gap, grad_steps_sweep, heuristic_metrics,
                      make_policy, run_experiment, test_tasks)
from .policy import load_params
from .sampling import Sampler

EXIT_OK, EXIT_ORACLE, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("metaexp")


def _write_atomic(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


class RunManifest:
    """``manifest.json`` in the run directory; rewritten atomically at start
    and when the command finishes."""

    def __init__(self, out_dir, command, cfg):
        self.path = os.path.join(out_dir, "manifest.json")
        text = config_mod.dump_yaml(cfg)
        self.config_hash = config_mod.blob_sha1(text)
        self.data = {
            "run_id": f"{cfg.algo}-{cfg.env}-s{cfg.seed}-{self.config_hash[:10]}",
            "command": command,
            "config_hash": self.config_hash,
            "config": config_mod.to_tree(cfg),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "finished": None,
            "exit_status": None,
        }
        _write_atomic(os.path.join(out_dir, "config.yaml"), text)
        self._flush()

    def _flush(self):
        _write_atomic(self.path, json.dumps(self.data, indent=2) + "\n")

    def finish(self, status, error=None):
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.data["exit_status"] = status
        if error:
            self.data["error"] = error
        self._flush()


def _add_run_flags(p):
    p.add_argument("--algo", choices=("maml", "emaml", "rl2", "erl2"))
    p.add_argument("--env", choices=("krazy", "maze", "pointmass"))
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/latest", help="run directory")
    p.add_argument("--budget", type=int, help="training env steps per repeat")
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int, help="rollout processes (capped by METAEXP_THREADS)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. meta.inner.alpha=0.05")


def build_parser():
    ap = argparse.ArgumentParser(prog="metaexp", description="Meta-RL exploration experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="meta-train and write learning curves")
    _add_run_flags(tr)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test pool")
    _add_run_flags(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--sweep-steps", type=int, default=None,
                    help="also record returns after 0..N test-time updates")

    orc = sub.add_parser("oracle", help="run the oracle suites")
    orc.add_argument("--suite", choices=("autodiff", "estimator", "envs", "all"), default="all")
    return ap


def _resolve(args):
    flags = {"algo": args.algo, "env": args.env, "seed": args.seed, "budget": args.budget,
             "repeats": args.repeats}
    return config_mod.resolve(args.config, flags, args.set)


def cmd_train(args):
    cfg = _resolve(args)
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(args.out, "train", cfg)
    try:
        res = run_experiment(cfg, args.out, args.workers)
    except NumericFault as e:
        manifest.finish(EXIT_NUMERIC, str(e))
        raise
    manifest.finish(EXIT_OK)
    last = res["points"][-1]
    print(f"final env_steps {last.env_steps} pre {last.pre_return:.4f} "
          f"post {last.post_return:.4f} gap {last.gap:.4f}")
    print(f"curve: {res['paths']['curve']}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _resolve(args)
    if not os.path.exists(args.checkpoint) or not os.path.exists(args.checkpoint + ".manifest"):
        raise ContractViolation(f"checkpoint: {args.checkpoint} not found")
    if args.sweep_steps is not None and args.sweep_steps < 1:
        raise ContractViolation("sweep-steps: must be >= 1")
    policy = make_policy(cfg, env_obs_len(cfg))
    ref = policy.init_params(np.random.default_rng(0))
    theta = load_params(args.checkpoint, ref.schema)
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(args.out, "eval", cfg)
    tasks = test_tasks(cfg, cfg.seed)
    workers = cfg.samplers if args.workers is None else args.workers
    try:
        with Sampler(workers) as sampler:
            ev = evaluate_gap(theta, tasks, cfg, policy, sampler, cfg.seed)
            path = os.path.join(args.out, "eval_gap.csv")
            with open(path + ".tmp", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("task", "pre_return", "post_return", "gap"))
                for i, (a, b, g) in enumerate(zip(ev["pre"], ev["post"], ev["gap"])):
                    w.writerow((i, repr(float(a)), repr(float(b)), repr(float(g))))
            os.replace(path + ".tmp", path)
            if cfg.env == "krazy":
                tf, dv, gr = heuristic_metrics(ev["rollouts"])
                print(f"tile_fraction {tf:.4f} death_visits {dv:.4f} goals_reached {gr:.4f}")
            if args.sweep_steps is not None:
                rows = grad_steps_sweep(theta, tasks, cfg, policy, args.sweep_steps, sampler, cfg.seed)
                spath = os.path.join(args.out, "sweep.csv")
                with open(spath + ".tmp", "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(("steps", "mean_return"))
                    for s, r in rows:
                        w.writerow((s, repr(r)))
                os.replace(spath + ".tmp", spath)
    except NumericFault as e:
        manifest.finish(EXIT_NUMERIC, str(e))
        raise
    manifest.finish(EXIT_OK)
    print(f"mean pre {ev['mean_pre']:.4f} post {ev['mean_post']:.4f} gap {ev['mean_gap']:.4f}")
    return EXIT_OK


def cmd_oracle(args):
    from .oracles import run_suites
    checks = run_suites(args.suite)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_ORACLE if failed else EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "oracle": cmd_oracle}


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ContractViolation as e:
        print(f"metaexp: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFault as e:
        print(f"metaexp: numeric fault in {e.op}: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
