"""Command-line entry point: plan, train, eval, ablate, fewshot, baselines, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..env.tasks import TASKS, UnknownTask
from ..plan import SchemaError
from ..planner.backends import BackendError
from ..rl.checkpoint import CheckpointError
from .config import BACKENDS, MODES, ConfigError, RunConfig, dump_config, load_config, small_profile
from .planning import (PlanValidationFailure, TRAIN_SPLIT, build_plan_bank, load_plan_bundles,
                       make_backend, sample_scenes, save_plan_bundles)
from .report import MissingMetrics

log = logging.getLogger("dexscaffold")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _base_config(args) -> RunConfig:
    run = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    updates = {}
    for key in ("task", "backend", "mode", "seed", "cache_dir"):
        v = getattr(args, key, None)
        if v is not None:
            updates[key] = v
    if getattr(args, "out", None):
        updates["out_dir"] = args.out
    run = run.with_updates(**updates)
    if getattr(args, "small", False):
        run = small_profile(run)
    if getattr(args, "iterations", None) is not None:
        run = run.with_updates(ppo=replace(run.ppo, max_iterations=args.iterations))
    return run


def _print(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


def cmd_plan(args) -> int:
    run = _base_config(args).with_updates(n_waypoints=args.n, n_conditions=args.count)
    scenes = sample_scenes(run.spec, run.seed, TRAIN_SPLIT, run.n_conditions)
    bank = build_plan_bank(run, scenes, make_backend(run))
    out = Path(args.out or f"plans/{run.task}")
    paths = save_plan_bundles(bank, out, run.task)
    if bank.excluded:
        (out / "excluded.json").write_text(json.dumps(bank.excluded, indent=1))
    _print({"task": run.task, "backend": run.backend, "n": run.n_waypoints,
            "plans": len(paths), "excluded": len(bank.excluded), "dir": str(out)})
    return 0


def cmd_train(args) -> int:
    from .train import train
    run = _base_config(args)
    if args.conditions is not None:
        run = run.with_updates(n_conditions=args.conditions)

    def progress(row):
        if "eval_success" in row:
            log.info("iteration %d: greedy success %.3f", row["iteration"], row["eval_success"])

    res = train(run, progress=progress)
    _print({"checkpoint": str(res.checkpoint), "last": str(res.last_checkpoint),
            "metrics": str(res.metrics), "best_success": res.best_success,
            "best_iteration": res.best_iteration, "iterations": res.iterations,
            "wall_time_s": round(res.wall_time, 1)})
    return 0


def _checkpoint_config(args) -> RunConfig:
    """Explicit --config, else the config.yaml written next to the checkpoints."""
    if args.config:
        run = load_config(args.config)
    else:
        guess = Path(args.checkpoint).resolve().parent.parent / "config.yaml"
        run = load_config(guess) if guess.exists() else RunConfig()
    updates = {k: getattr(args, k) for k in ("backend", "mode", "cache_dir")
               if getattr(args, k, None) is not None}
    return run.with_updates(**updates)


def cmd_eval(args) -> int:
    from .evaluate import evaluate
    run = _checkpoint_config(args)
    pre = None
    if run.mode == "prerecorded":
        plan_dir = args.plans or Path(args.checkpoint).resolve().parent.parent / "plans"
        pre = load_plan_bundles(plan_dir)
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent / "eval"
    res = evaluate(args.checkpoint, run, prerecorded=pre, configs=args.configs,
                   trials=args.trials, out_dir=out)
    _print({"success_rate": res.success_rate, "episodes": res.n, **res.report.to_dict(),
            "dir": str(out)})
    return 0


def cmd_ablate(args) -> int:
    from .experiments import ablate_waypoints
    if args.sweep != "waypoints":
        raise ConfigError(f"unknown sweep {args.sweep!r}")
    run = _base_config(args)
    rows = ablate_waypoints(run, _ints(args.n_list), _ints(args.seeds) if args.seeds else None,
                            run.out_dir, configs=args.configs, trials=args.trials)
    _print(rows)
    return 0


def cmd_baselines(args) -> int:
    from .experiments import compare_methods
    run = _base_config(args)
    modes = [m.strip() for m in args.modes.split(",")]
    rows = compare_methods(run, modes, _ints(args.seeds) if args.seeds else None, run.out_dir,
                           configs=args.configs, trials=args.trials)
    _print(rows)
    return 0


def cmd_fewshot(args) -> int:
    from .experiments import fewshot_loop
    from .train import Policy
    from ..rl.checkpoint import load_checkpoint
    run = _checkpoint_config(args)
    net, norm, _ = load_checkpoint(args.checkpoint)
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent / "fewshot"
    rounds, pool = fewshot_loop(run, Policy(net, norm), args.rounds, configs=args.configs,
                                trials=args.trials, out_dir=out)
    _print({"rounds": [r.row() for r in rounds], "pool": len(pool), "dir": str(out)})
    return 0


def cmd_report(args) -> int:
    from .report import report
    paths = report(args.dir, args.out)
    _print([str(p) for p in paths])
    return 0


def cmd_config(args) -> int:
    run = _base_config(args)
    path = dump_config(run, args.write)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dexscaffold", description=__doc__)
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(sp, task=True):
        sp.add_argument("--config", help="YAML run config")
        if task:
            sp.add_argument("--task", choices=sorted(TASKS))
        sp.add_argument("--backend", choices=BACKENDS)
        sp.add_argument("--mode", choices=MODES)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--cache-dir", dest="cache_dir")
        sp.add_argument("--out")

    sp = sub.add_parser("plan", help="generate and validate plans for sampled conditions")
    run_opts(sp)
    sp.add_argument("--n", type=int, default=20, help="waypoints per plan")
    sp.add_argument("--count", type=int, default=10, help="initial conditions")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("train", help="plan, then train a residual policy with PPO")
    run_opts(sp)
    sp.add_argument("--small", action="store_true", help="128-wide networks, <= 300 iterations")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--conditions", type=int)
    sp.set_defaults(func=cmd_train)

    def ckpt_opts(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--config")
        sp.add_argument("--backend", choices=BACKENDS)
        sp.add_argument("--mode", choices=MODES)
        sp.add_argument("--cache-dir", dest="cache_dir")
        sp.add_argument("--configs", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("eval", help="evaluate a checkpoint on fresh conditions")
    ckpt_opts(sp)
    sp.add_argument("--plans", help="plan bundle dir for the prerecorded mode")
    sp.set_defaults(func=cmd_eval)

    def sweep_opts(sp):
        run_opts(sp)
        sp.add_argument("--small", action="store_true")
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
        sp.add_argument("--configs", type=int)
        sp.add_argument("--trials", type=int)

    sp = sub.add_parser("ablate", help="waypoint-count ablation")
    sweep_opts(sp)
    sp.add_argument("--sweep", required=True, choices=["waypoints"])
    sp.add_argument("--n-list", dest="n_list", default="3,5,10,20,40")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("baselines", help="train and evaluate every baseline mode")
    sweep_opts(sp)
    sp.add_argument("--modes", default=",".join(MODES))
    sp.set_defaults(func=cmd_baselines)

    sp = sub.add_parser("fewshot", help="few-shot plan refinement rounds")
    ckpt_opts(sp)
    sp.add_argument("--rounds", type=int, default=3)
    sp.set_defaults(func=cmd_fewshot)

    sp = sub.add_parser("report", help="tables and figures from run directories")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("config", help="write a run config with the given overrides")
    run_opts(sp)
    sp.add_argument("--small", action="store_true")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--write", required=True)
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return int(args.func(args) or 0)
    except (ConfigError, UnknownTask, MissingMetrics, BackendError, SchemaError,
            PlanValidationFailure, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
