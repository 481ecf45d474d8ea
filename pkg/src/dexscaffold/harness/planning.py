"""Plan generation over a bank of sampled initial conditions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .._rng import spawn
from ..env.render import default_camera, render
from ..env.scene import Scene, sample_scene
from ..env.tasks import TaskSpec
from ..plan import (KeypointPlan, SchemaError, Violation, interpolate, load_bundle,
                    plan_from_json_obj, plan_to_json_obj, save_bundle, validate_plan)
from ..planner.backends import BackendError, OracleBackend, PlannerBackend, backend_from_name
from ..planner.core import RETRIES, PlannerRequest, detect_keypoints, generate_waypoints_meta
from ..planner.prompts import load_prompt
from .config import RunConfig

log = logging.getLogger(__name__)

TRAIN_SPLIT, EVAL_SPLIT = 0, 1


class PlanValidationFailure(RuntimeError):
    pass


def scene_seed(run_seed: int, split: int, index: int) -> int:
    """Disjoint integer seeds per (run seed, split, index)."""
    return int(spawn(run_seed, split, index).integers(2**62))


def sample_scenes(spec: TaskSpec, run_seed: int, split: int, count: int) -> list[Scene]:
    return [sample_scene(spec, scene_seed(run_seed, split, i)) for i in range(count)]


def jitter_scene(scene: Scene, rng: np.random.Generator, amount: float) -> Scene:
    """Shift every movable root object (and its children) by U(-amount, amount) in x, y."""
    spec = scene.task
    names = [o.name for o in spec.objects]
    offset = np.zeros((len(names), 3))
    for i, o in enumerate(spec.objects):
        if o.parent is not None:
            offset[i] = offset[names.index(o.parent)]
        elif not (o.static or o.hand_mounted or o.support):
            offset[i, :2] = rng.uniform(-amount, amount, 2)
    return replace(scene, rest_pos=scene.rest_pos + offset)


def planner_request(scene: Scene, run: RunConfig, examples=()) -> PlannerRequest:
    snap = render(scene, default_camera(run.image_size, run.image_size))
    return PlannerRequest(snap.png(), snap.camera, tuple(scene.hand_position),
                          load_prompt(scene.task.task_id), tuple(examples), run.n_waypoints,
                          context={"scene": scene})


def plan_for_scene(scene: Scene, run: RunConfig, backend: PlannerBackend, examples=(),
                   regeneration: int = 0) -> KeypointPlan:
    """One plan under the run's baseline mode.

    ``oracle-keypoints`` takes detections from ground truth and trajectories
    from the backend; ``oracle-trajectory`` the reverse.  Every other mode
    asks the backend for both.
    """
    spec = scene.task
    req = planner_request(scene, run, examples)
    kp_backend = OracleBackend() if run.mode == "oracle-keypoints" else backend
    tr_backend = OracleBackend() if run.mode == "oracle-trajectory" else backend
    keypoints = detect_keypoints(req, kp_backend, attempt=regeneration)
    w, meta = generate_waypoints_meta(req, keypoints, tr_backend,
                                      first_attempt=regeneration * (RETRIES + 1))
    meta.update(n_waypoints=w.n, regeneration=regeneration, scene_seed=scene.seed,
                mode=run.mode, waypoints=plan_to_json_obj(w))
    source = {"vlm": "vlm", "reduced-n": "reduced", "prerecorded": "prerecorded",
              "oracle-keypoints": "oracle-keypoints",
              "oracle-trajectory": "oracle-trajectory"}[run.mode]
    return interpolate(w, spec.horizon, source=source, meta=meta)


def waypoints_of(plan: KeypointPlan):
    return plan_from_json_obj(plan.meta["waypoints"])


def hard_violations(plan: KeypointPlan, spec: TaskSpec) -> list[Violation]:
    return validate_plan(plan, spec.workspace, spec.rigid_pairs)


@dataclass
class PlanBank:
    """Validated plans for the training conditions; rejected ones are logged."""

    scenes: list[Scene]
    plans: list[KeypointPlan]
    excluded: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.plans)


def build_plan_bank(run: RunConfig, scenes: list[Scene], backend: PlannerBackend,
                    examples=(), validate: bool = True) -> PlanBank:
    """Plan every scene; a plan with violations is regenerated once, then dropped."""
    spec = run.spec
    kept_s, kept_p, excluded = [], [], []
    for i, sc in enumerate(scenes):
        plan, why = None, ""
        for regen in range(2):
            try:
                cand = plan_for_scene(sc, run, backend, examples, regen)
            except (SchemaError, BackendError) as exc:
                why = f"{type(exc).__name__}: {exc}"
                continue
            viol = hard_violations(cand, spec) if validate else []
            if not viol:
                plan = cand
                break
            why = "; ".join(f"{v.kind}@{v.step}: {v.detail}" for v in viol)
        if plan is None:
            log.warning("condition %d excluded after regeneration (%s)", i, why)
            excluded.append({"condition": i, "scene_seed": sc.seed, "reason": why})
            continue
        kept_s.append(sc)
        kept_p.append(plan)
    if not kept_p:
        raise PlanValidationFailure(f"all {len(scenes)} plans failed validation")
    return PlanBank(kept_s, kept_p, excluded)


def make_backend(run: RunConfig, seed: int | None = None) -> PlannerBackend:
    return backend_from_name(run.backend, run.cache_dir, run.seed if seed is None else seed)


def save_plan_bundles(bank: PlanBank, out_dir, task_id: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (sc, p) in enumerate(zip(bank.scenes, bank.plans)):
        path = out / f"plan_{i:04d}.json"
        meta = {k: v for k, v in p.meta.items() if k != "waypoints"}
        meta["digest"] = p.digest()
        save_bundle(path, task_id, f"{task_id}-{sc.seed}", waypoints_of(p), p.T, meta)
        paths.append(path)
    return paths


def load_plan_bundles(plan_dir, source: str = "prerecorded") -> list[KeypointPlan]:
    """Dense plans rebuilt from saved bundles; identical digests to the originals."""
    paths = sorted(Path(plan_dir).glob("plan_*.json"))
    if not paths:
        raise FileNotFoundError(f"no plan bundles in {plan_dir}")
    plans = []
    for path in paths:
        doc, w = load_bundle(path)
        meta = dict(doc["meta"], waypoints=plan_to_json_obj(w))
        plans.append(interpolate(w, doc["T"], source=source, meta=meta))
    return plans
