"""Keypoint detection, trajectory generation and few-shot prompting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from ..geometry import CameraModel, backproject_pixels, denormalize, NormalizedKeypoint2D
from ..plan import (HAND, DEFAULT_HORIZON, KeypointPlan, SchemaError, WaypointSequence,
                    interpolate, parse_keypoint_json, parse_plan_json, plan_to_json_obj)
from .backends import PlannerBackend, VLMQuery
from .prompts import TaskPrompt

FEWSHOT_M = 3
KEYPOINT_TEMPERATURE = 0.5
TRAJECTORY_TEMPERATURE = 0.5
THINKING_BUDGET = 1000
RETRIES = 1


class CountMismatch(SchemaError):
    pass


@dataclass(frozen=True, eq=False)
class PlannerRequest:
    rgb: bytes | None
    camera: CameraModel
    wrist: tuple[float, float, float]
    prompt: TaskPrompt
    examples: tuple[WaypointSequence, ...] = ()
    n: int = 20
    context: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 waypoints")
        object.__setattr__(self, "wrist", tuple(float(v) for v in self.wrist))
        object.__setattr__(self, "examples", tuple(self.examples))

    @property
    def m(self) -> int:
        return len(self.examples)


def _query(req: PlannerRequest, kind: str, text: str, temperature: float, attempt: int,
           **ctx) -> VLMQuery:
    context = dict(req.context, camera=req.camera, n=req.n, examples=req.m, **ctx)
    return VLMQuery(kind, text, req.rgb, temperature, THINKING_BUDGET, attempt, context)


def detect_keypoints(req: PlannerRequest, backend: PlannerBackend,
                     temperature: float = KEYPOINT_TEMPERATURE,
                     attempt: int = 0) -> list[tuple[str, np.ndarray]]:
    """Ask for 2D keypoints and lift them to world points through the depth map."""
    names = req.prompt.keypoint_names
    text = backend.complete(_query(req, "keypoints",
                                   req.prompt.keypoint_text() + fewshot_block(req.examples),
                                   temperature, attempt))
    entries = parse_keypoint_json(text, names)
    uv = np.array([denormalize(NormalizedKeypoint2D(y, x, nm), req.camera) for nm, y, x in entries])
    pts = backproject_pixels(uv, req.camera)
    return [(nm, pts[i]) for i, (nm, _, _) in enumerate(entries)]


def fewshot_block(examples) -> str:
    """In-context examples, each in its own first-keypoint-relative frame."""
    if not examples:
        return ""
    chunks = ["Here are trajectories that succeeded on this task before, "
              "in the same json format and the same relative frame:"]
    for i, w in enumerate(examples):
        origin = w.points[0, 0]
        obj = plan_to_json_obj(w.translated(-origin), precision=3)
        chunks.append(f"Example {i + 1}:\n{json.dumps(obj)}")
    return "\n".join(chunks) + "\n"


def trajectory_prompt(req: PlannerRequest, keypoints) -> tuple[str, np.ndarray]:
    """Fill the trajectory template; returns the text and the world origin used."""
    names = req.prompt.keypoint_names
    pts = dict((nm, np.asarray(p, dtype=np.float64)) for nm, p in keypoints)
    if tuple(pts) != names:
        raise SchemaError(f"keypoints {tuple(pts)} do not match prompt names {names}")
    origin = pts[names[0]]
    initial = {nm: p - origin for nm, p in pts.items()}
    initial[HAND] = np.asarray(req.wrist) - origin
    text = req.prompt.trajectory_text(initial, req.n)
    return text + fewshot_block(req.examples), origin


def generate_waypoints(req: PlannerRequest, keypoints, backend: PlannerBackend,
                       temperature: float = TRAJECTORY_TEMPERATURE,
                       retries: int = RETRIES) -> WaypointSequence:
    """Query, parse, translate back to the world frame and anchor waypoint 0."""
    w, _ = generate_waypoints_meta(req, keypoints, backend, temperature, retries)
    return w


def generate_waypoints_meta(req: PlannerRequest, keypoints, backend: PlannerBackend,
                            temperature: float = TRAJECTORY_TEMPERATURE,
                            retries: int = RETRIES,
                            first_attempt: int = 0) -> tuple[WaypointSequence, dict]:
    """``first_attempt`` offsets the attempt index so regenerations issue fresh queries."""
    text, origin = trajectory_prompt(req, keypoints)
    names = req.prompt.keypoint_names + (HAND,)
    last: Exception | None = None
    for attempt in range(first_attempt, first_attempt + retries + 1):
        answer = backend.complete(_query(req, "trajectory", text, temperature, attempt,
                                         origin=origin))
        try:
            rel = parse_plan_json(answer, names)
            if rel.n != req.n:
                raise CountMismatch(f"expected {req.n} waypoints, got {rel.n}")
        except SchemaError as exc:
            last = exc
            continue
        w, corr = anchor(rel.translated(origin), keypoints, req.wrist)
        meta = {"temperature": temperature, "attempts": attempt - first_attempt + 1,
                "anchor_correction": corr, "examples": req.m,
                "backend": getattr(backend, "name", type(backend).__name__)}
        return w, meta
    assert last is not None
    raise last


def anchor(w: WaypointSequence, keypoints, wrist) -> tuple[WaypointSequence, float]:
    """Shift every track so waypoint 0 sits exactly on its detected start."""
    start = dict((nm, np.asarray(p, dtype=np.float64)) for nm, p in keypoints)
    start[HAND] = np.asarray(wrist, dtype=np.float64)
    shift = np.stack([start[nm] - w.points[0, j] for j, nm in enumerate(w.names)])
    pts = w.points + shift[None]
    pts[0] = np.stack([start[nm] for nm in w.names])
    return WaypointSequence(w.names, pts), float(np.linalg.norm(shift, axis=-1).max())


def refine_fewshot(history, req: PlannerRequest, m: int = FEWSHOT_M) -> PlannerRequest:
    """Attach the ``m`` most recent successful plans as in-context examples."""
    if m <= 0 or not history:
        return req
    return replace(req, examples=tuple(history[-m:]))


def make_plan(req: PlannerRequest, backend: PlannerBackend, T: int = DEFAULT_HORIZON,
              source: str = "vlm", keypoints=None, regeneration: int = 0) -> KeypointPlan:
    """Full pipeline: detection (unless given), trajectory generation, interpolation.

    ``regeneration`` > 0 re-asks with fresh attempt indices after a rejected plan.
    """
    if keypoints is None:
        keypoints = detect_keypoints(req, backend, attempt=regeneration)
    w, meta = generate_waypoints_meta(req, keypoints, backend,
                                      first_attempt=regeneration * (RETRIES + 1))
    meta["n_waypoints"] = w.n
    meta["regeneration"] = regeneration
    meta["waypoints"] = plan_to_json_obj(w)
    return interpolate(w, T, source=source, meta=meta)


__all__ = ["CountMismatch", "PlannerRequest", "detect_keypoints", "generate_waypoints",
           "generate_waypoints_meta", "refine_fewshot", "make_plan", "anchor", "FEWSHOT_M",
           "trajectory_prompt", "fewshot_block"]
