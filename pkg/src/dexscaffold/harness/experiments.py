"""Baseline comparisons, waypoint ablation, few-shot rounds and arm-mode replay."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..control import ArmModel, pose_error, solve_ik
from ..geometry import euler_to_matrix
from ..plan import KeypointPlan
from ..planner.backends import PlannerBackend
from ..planner.core import FEWSHOT_M
from .config import MODES, ConfigError, RunConfig
from .evaluate import eval_plans, evaluate
from .planning import EVAL_SPLIT, hard_violations, make_backend, sample_scenes, waypoints_of
from .train import train

log = logging.getLogger(__name__)

TABLE_VERSION = 1
REDUCED_N = 3
ABLATION_COLUMNS = ("n_waypoints", "seeds", "success_mean", "success_sem", "train_success_mean")
METHOD_COLUMNS = ("method", "seeds", "success_mean", "success_sem")
FEWSHOT_COLUMNS = ("iteration", "examples", "success_rate", "validator_pass_rate", "plans",
                   "pool_size")


def mean_sem(values) -> tuple[float, float]:
    """Mean and standard error (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    sem = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), sem


def write_table(path, columns, rows, name: str) -> Path:
    """CSV with a ``# <name> v<version>`` schema line and fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {name} v{TABLE_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([f"{r[c]:.6g}" if isinstance(r[c], float) else r[c] for c in columns])
    return path


def _seeds(run: RunConfig, seeds) -> list[int]:
    return [run.seed] if seeds is None else [int(s) for s in seeds]


def method_config(run: RunConfig, mode: str) -> RunConfig:
    """The run under a baseline mode; reduced-n plans with three waypoints."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    n = REDUCED_N if mode == "reduced-n" else run.n_waypoints
    return run.with_updates(mode=mode, n_waypoints=n)


def train_and_evaluate(run: RunConfig, backend: PlannerBackend | None = None,
                       configs: int | None = None, trials: int | None = None) -> tuple[float, float]:
    """One train+eval cycle; returns (held-out success, best training success)."""
    res = train(run, backend=backend)
    pre = res.bank.plans if run.mode == "prerecorded" else None
    ev = evaluate(res.checkpoint, run, backend=backend, prerecorded=pre, configs=configs,
                  trials=trials, out_dir=Path(run.out_dir) / "eval")
    return ev.success_rate, res.best_success


def ablate_waypoints(run: RunConfig, n_list=(3, 5, 10, 20, 40), seeds=None, out_dir=None,
                     backend: PlannerBackend | None = None, configs: int | None = None,
                     trials: int | None = None) -> list[dict]:
    """Train and evaluate once per waypoint count (and seed); one row per n, in order."""
    n_list = [int(n) for n in n_list]
    runs = [run.with_updates(n_waypoints=n) for n in n_list]     # rejects n < 3 up front
    out = Path(out_dir or run.out_dir)
    rows = []
    for n, base in zip(n_list, runs):
        ev, tr = [], []
        for s in _seeds(run, seeds):
            sub = base.with_updates(seed=s, out_dir=str(out / f"n_{n:02d}" / f"seed_{s}"))
            e, t = train_and_evaluate(sub, backend, configs, trials)
            ev.append(e)
            tr.append(t)
            log.info("ablation n=%d seed=%d: eval %.3f train %.3f", n, s, e, t)
        m, se = mean_sem(ev)
        rows.append({"n_waypoints": n, "seeds": len(ev), "success_mean": m, "success_sem": se,
                     "train_success_mean": mean_sem(tr)[0]})
    write_table(out / "ablation.csv", ABLATION_COLUMNS, rows, "ablation")
    return rows


def compare_methods(run: RunConfig, modes=MODES, seeds=None, out_dir=None,
                    backend: PlannerBackend | None = None, configs: int | None = None,
                    trials: int | None = None) -> list[dict]:
    """Success per baseline mode, aggregated over seeds."""
    out = Path(out_dir or run.out_dir)
    rows = []
    for mode in modes:
        base = method_config(run, mode)
        ev = []
        for s in _seeds(run, seeds):
            sub = base.with_updates(seed=s, out_dir=str(out / mode / f"seed_{s}"))
            ev.append(train_and_evaluate(sub, backend, configs, trials)[0])
        m, se = mean_sem(ev)
        rows.append({"method": mode, "seeds": len(ev), "success_mean": m, "success_sem": se})
    write_table(out / "methods.csv", METHOD_COLUMNS, rows, "methods")
    return rows


@dataclass
class FewShotRound:
    iteration: int
    examples: int
    success_rate: float
    validator_pass_rate: float
    plans: int
    pool_size: int

    def row(self) -> dict:
        return dict(self.__dict__)


def fewshot_loop(run: RunConfig, policy, rounds: int = 3, backend: PlannerBackend | None = None,
                 configs: int | None = None, trials: int | None = None, out_dir=None,
                 m: int = FEWSHOT_M) -> tuple[list[FewShotRound], list]:
    """Zero-shot deployment followed by ``rounds`` in-context refinement rounds.

    Every round re-plans the same evaluation conditions with the ``m`` most
    recent successful plans as examples; a plan joins the pool only when all
    of its trials succeed.  Returns the per-round summaries and the pool.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    backend = backend or make_backend(run)
    spec = run.spec
    configs = configs or run.eval_configs
    trials = trials or run.eval_trials
    scenes = sample_scenes(spec, run.seed, EVAL_SPLIT, configs)
    pool: list = []
    out: list[FewShotRound] = []
    for it in range(rounds + 1):
        examples = tuple(pool[-m:]) if m > 0 else ()
        plans = eval_plans(run, scenes, backend, examples=examples)
        valid = [p is not None and not hard_violations(p, spec) for p in plans]
        res = evaluate(policy, run, backend=backend, configs=configs, trials=trials, plans=plans,
                       out_dir=None if out_dir is None else Path(out_dir) / f"round_{it}")
        per_plan = np.zeros(configs, dtype=bool)
        ok = np.ones(configs, dtype=bool)
        for e in res.episodes:
            ok[e["config"]] &= bool(e["success"])
            per_plan[e["config"]] = True
        for c, p in enumerate(plans):
            if p is not None and ok[c] and per_plan[c]:
                pool.append(waypoints_of(p))
        out.append(FewShotRound(it, len(examples), res.success_rate, float(np.mean(valid)),
                                len(plans), len(pool)))
        log.info("few-shot round %d: success %.3f, validator pass %.3f, pool %d", it,
                 res.success_rate, out[-1].validator_pass_rate, len(pool))
    if out_dir is not None:
        write_table(Path(out_dir) / "fewshot.csv", FEWSHOT_COLUMNS, [r.row() for r in out],
                    "fewshot")
    return out, pool


# -- arm mode ---------------------------------------------------------------

def wrist_targets(plan: KeypointPlan, euler, base=(0.0, 0.0, 0.0)) -> np.ndarray:
    """4x4 wrist targets in the arm base frame for every plan step."""
    R = euler_to_matrix(np.asarray(euler, dtype=np.float64))
    T = np.tile(np.eye(4), (plan.T, 1, 1))
    T[:, :3, :3] = R
    T[:, :3, 3] = plan.wrist - np.asarray(base, dtype=np.float64)
    return T


def arm_track(plan: KeypointPlan, euler, arm: ArmModel | None = None, base=(0.0, 0.0, 0.0),
              theta0=None, iterations: int = 200, tol: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Map a plan's wrist path to arm joints with warm-started DLS-IK.

    Returns joint angles (T, dof) and the residual 6-D pose error per step.
    """
    arm = arm or ArmModel()
    targets = wrist_targets(plan, euler, base)
    theta = np.zeros(arm.dof) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    thetas = np.empty((plan.T, arm.dof))
    errors = np.empty(plan.T)
    for t in range(plan.T):
        theta, _, _ = solve_ik(arm, theta, targets[t], iterations, tol)
        thetas[t] = theta
        errors[t] = np.linalg.norm(pose_error(arm.fk(theta), targets[t]))
    return thetas, errors


__all__ = ["ablate_waypoints", "compare_methods", "fewshot_loop", "FewShotRound", "method_config",
           "train_and_evaluate", "mean_sem", "write_table", "arm_track", "wrist_targets",
           "REDUCED_N", "ABLATION_COLUMNS", "METHOD_COLUMNS", "FEWSHOT_COLUMNS"]
