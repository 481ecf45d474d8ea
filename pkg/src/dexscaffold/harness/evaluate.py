"""Frozen-policy evaluation with failure-mode decomposition."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._rng import spawn
from ..env.episode import CATEGORIES, EpisodeRecord, anneal, check_success, step_record, write_traces
from ..env.scene import Scene
from ..env.vec import TERMINATED, TrackingEnv
from ..plan import KeypointPlan, SchemaError
from ..planner.backends import BackendError, PlannerBackend
from ..rl.checkpoint import load_checkpoint
from .config import RunConfig
from .planning import EVAL_SPLIT, jitter_scene, make_backend, plan_for_scene, sample_scenes
from .train import Policy

log = logging.getLogger(__name__)

KP_ERROR, INCOMPLETE, TRACKED_FAIL, SUCCESS = CATEGORIES
EPISODE_COLUMNS = ("config", "trial", "category", "success", "cause", "max_error",
                   "stiffness", "damping", "plan_digest")
CHUNK = 512


@dataclass
class FailureReport:
    categories: list[str] = field(default_factory=list)
    early_success: int = 0          # successful episodes that also hit the error cutoff

    def __post_init__(self):
        bad = set(self.categories) - set(CATEGORIES)
        if bad:
            raise ValueError(f"unknown categories {sorted(bad)}")

    @property
    def total(self) -> int:
        return len(self.categories)

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(self.categories)
        return {k: c.get(k, 0) for k in CATEGORIES}

    @property
    def percentages(self) -> dict[str, float]:
        n = max(self.total, 1)
        return {k: 100.0 * v / n for k, v in self.counts.items()}

    def to_dict(self) -> dict:
        return {"total": self.total, "counts": self.counts, "percentages": self.percentages,
                "early_success": self.early_success}


@dataclass
class EvalResult:
    success_rate: float
    report: FailureReport
    episodes: list[dict]
    plans: list[KeypointPlan | None]

    @property
    def n(self) -> int:
        return len(self.episodes)


def classify(success: bool, detected, scene: Scene, terminated: bool, d_kp: float) -> str:
    """Success overrides; then bad detections, early termination, plain failure."""
    if success:
        return SUCCESS
    if detected is None or np.any(scene.surface_distance(detected) > d_kp):
        return KP_ERROR
    if terminated:
        return INCOMPLETE
    return TRACKED_FAIL


def eval_plans(run: RunConfig, scenes: list[Scene], backend: PlannerBackend | None = None,
               prerecorded: list[KeypointPlan] | None = None,
               examples=()) -> list[KeypointPlan | None]:
    """One plan per evaluation config (None when planning fails twice).

    Prerecorded mode cycles through the training plans instead.
    """
    if run.mode == "prerecorded":
        if not prerecorded:
            raise ValueError("prerecorded mode needs the training plans")
        return [prerecorded[c % len(prerecorded)] for c in range(len(scenes))]
    backend = backend or make_backend(run)
    out: list[KeypointPlan | None] = []
    for c, sc in enumerate(scenes):
        plan = None
        for regen in range(2):
            try:
                plan = plan_for_scene(sc, run, backend, examples, regen)
                break
            except (SchemaError, BackendError) as exc:
                log.warning("eval config %d: planning failed (%s)", c, exc)
        out.append(plan)
    return out


def rollout(policy, run: RunConfig, scenes: list[Scene], plans: list[KeypointPlan],
            seed: int, trace: int = 0):
    """Run one episode per (scene, plan) pair at the final cutoff.

    Returns per-episode ``(success, terminated, max_error, multipliers)``
    arrays and the :class:`EpisodeRecord` of the first ``trace`` episodes.
    """
    spec = run.spec
    n = len(scenes)
    success = np.zeros(n, dtype=bool)
    terminated = np.zeros(n, dtype=bool)
    max_err = np.zeros(n)
    mult = np.ones((n, 2))
    records: list[EpisodeRecord] = []
    delta = anneal(spec.delta_init, 1.0)
    for start in range(0, n, CHUNK):
        idx = np.arange(start, min(n, start + CHUNK))
        B = idx.size
        env = TrackingEnv(spec, [scenes[i] for i in idx], [plans[i] for i in idx], B,
                          int(spawn(seed, start).integers(2**62)), dr=run.dr, delta=delta,
                          auto_reset=False, assign=np.arange(B))
        sim_o = env.sim.success_obj
        mult[idx] = env.multipliers
        target = spec.object_index(spec.success_params["target"]) \
            if spec.success == "pick_place" else None
        traced = [i for i in range(B) if start + i < trace]
        recs = [EpisodeRecord(spec.task_id, int(start + i), 0,
                              detected_keypoints=plans[start + i].keypoints[0].tolist())
                for i in traced]

        def snap(i, rec):
            s = env.state
            rec.steps.append(step_record(
                int(min(s.t[i], env.T - 1)), s.keypoints[i], env.planned_keypoints()[i],
                s.n_contact[i], s.success_point[i], s.pos[i, sim_o, :2],
                s.rest_gap[i, sim_o], s.art[i, sim_o],
                s.pos[i, target, :2] if target is not None else None))

        for i, rec in zip(traced, recs):
            snap(i, rec)
        obs = env.observe()
        active = np.ones(B, dtype=bool)
        for _ in range(env.T):
            obs, _, cause, info = env.step(policy(obs))
            for i, rec in zip(traced, recs):
                if active[i]:
                    snap(i, rec)
            done = info["done"] & active
            if done.any():
                flags = np.zeros(B, dtype=bool)
                errs = np.zeros(B)
                fin = np.flatnonzero(info["done"])
                flags[fin] = info["success"]
                errs[fin] = info["max_error"]
                success[idx[done]] = flags[done]
                terminated[idx[done]] = cause[done] == TERMINATED
                max_err[idx[done]] = errs[done]
                active &= ~done
            if not active.any():
                break
        for i, rec in zip(traced, recs):
            rec.cause = "threshold" if terminated[start + i] else "timeout"
            rec.success = check_success(spec, rec)
            if rec.success != bool(success[start + i]):
                log.warning("episode %d: offline and online success disagree", start + i)
            records.append(rec)
    return success, terminated, max_err, mult, records


def evaluate(policy, run: RunConfig, backend: PlannerBackend | None = None,
             prerecorded: list[KeypointPlan] | None = None, configs: int | None = None,
             trials: int | None = None, out_dir=None, plans=None) -> EvalResult:
    """``configs`` fresh conditions x ``trials`` jittered rollouts each.

    ``policy`` is a checkpoint path or any ``obs -> action`` callable such as
    :class:`Policy`.  Artifacts (episode
    CSV, failure summary, JSON-lines traces) go to ``out_dir`` when given.
    """
    if isinstance(policy, (str, Path)):
        net, norm, _ = load_checkpoint(policy)
        policy = Policy(net, norm)
    spec = run.spec
    configs = configs or run.eval_configs
    trials = trials or run.eval_trials
    scenes = sample_scenes(spec, run.seed, EVAL_SPLIT, configs)
    if plans is None:
        plans = eval_plans(run, scenes, backend, prerecorded)
    ep_scenes, ep_plans, keys = [], [], []
    for c, (sc, p) in enumerate(zip(scenes, plans)):
        for j in range(trials):
            keys.append((c, j))
            ep_scenes.append(jitter_scene(sc, spawn(run.seed, 4, c, j), run.eval_jitter))
            ep_plans.append(p)
    ok = [i for i, p in enumerate(ep_plans) if p is not None]
    success = np.zeros(len(keys), dtype=bool)
    terminated = np.ones(len(keys), dtype=bool)
    max_err = np.full(len(keys), np.inf)
    mult = np.full((len(keys), 2), np.nan)
    records: list[EpisodeRecord] = []
    if ok:
        s, t, e, m, records = rollout(policy, run, [ep_scenes[i] for i in ok],
                                   [ep_plans[i] for i in ok], int(spawn(run.seed, 5).integers(2**62)),
                                   trace=run.trace_episodes)
        success[ok], terminated[ok], max_err[ok], mult[ok] = s, t, e, m
        for rec in records:
            c, j = keys[ok[rec.condition]]
            rec.condition, rec.trial = c, j
    episodes, cats = [], []
    early = 0
    for i, (c, j) in enumerate(keys):
        p = ep_plans[i]
        detected = None if p is None else p.keypoints[0]
        cat = classify(bool(success[i]), detected, ep_scenes[i], bool(terminated[i]),
                       run.kp_error_distance)
        early += int(success[i] and terminated[i])
        cats.append(cat)
        episodes.append({"config": c, "trial": j, "category": cat, "success": int(success[i]),
                         "cause": "no-plan" if p is None else
                         ("threshold" if terminated[i] else "timeout"),
                         "max_error": float(max_err[i]),
                         "stiffness": float(mult[i, 0]), "damping": float(mult[i, 1]),
                         "plan_digest": "" if p is None else p.digest()[:16]})
    for rec in records:
        rec.category = cats[keys.index((rec.condition, rec.trial))]
        rec.early_success = rec.success and rec.cause == "threshold"
    report = FailureReport(cats, early)
    result = EvalResult(float(success.mean()), report, episodes, plans)
    if out_dir is not None:
        write_eval_artifacts(result, records, out_dir)
    return result


def write_eval_artifacts(result: EvalResult, records: list[EpisodeRecord], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval_episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for e in result.episodes:
            w.writerow([e[k] if not isinstance(e[k], float) else f"{e[k]:.6g}"
                        for k in EPISODE_COLUMNS])
    with open(out / "failure_report.json", "w") as fh:
        json.dump({"success_rate": result.success_rate, **result.report.to_dict()}, fh,
                  indent=1, sort_keys=True)
    write_traces(out / "eval_traces.jsonl", records)
    return out
