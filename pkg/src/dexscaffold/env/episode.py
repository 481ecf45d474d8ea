"""Termination curriculum, episode traces and offline success checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..kernels import zigzag_update
from ..reward import tracking_error
from .tasks import TaskSpec

CAUSES = ("timeout", "threshold")
CATEGORIES = ("keypoint-detection-error", "incomplete-tracking", "tracked-but-unsuccessful",
              "success")


def anneal(delta_init: float, progress: float) -> float:
    """Linear cutoff schedule from ``delta_init`` at p=0 to ``delta_init / 2`` at p=1."""
    if delta_init <= 0:
        raise ValueError("delta_init must be positive")
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must lie in [0, 1]")
    return delta_init * (1.0 - progress / 2.0)


def should_terminate(tracked, planned, delta):
    """True where the mean keypoint error exceeds ``delta``; batched over leading dims."""
    err = tracking_error(tracked, planned)
    out = np.asarray(err) > delta
    return bool(out) if out.ndim == 0 else out


@dataclass
class EpisodeRecord:
    """Per-step ground-truth trace of one episode.

    ``steps`` holds one dict per recorded step, starting with the reset state
    (``t = 0``).  Each dict carries the tracked and planned keypoints, the
    tracking error, the contact count and the success-object quantities the
    offline predicates need.
    """

    task_id: str
    condition: int
    trial: int
    steps: list[dict] = field(default_factory=list)
    cause: str = "timeout"
    success: bool = False
    category: str = ""
    early_success: bool = False
    detected_keypoints: list | None = None

    def to_json_lines(self) -> str:
        head = {k: v for k, v in asdict(self).items() if k != "steps"}
        head["record"] = "episode"
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps({"record": "step", **s}, sort_keys=True) for s in self.steps]
        return "\n".join(lines) + "\n"

    @property
    def max_error(self) -> float:
        errs = [s["error"] for s in self.steps[1:]]
        return max(errs) if errs else 0.0


def step_record(t: int, tracked, planned, n_contact: int, success_point, object_xy, rest_gap,
                art, target_xy=None) -> dict:
    tracked = np.asarray(tracked, dtype=np.float64)
    planned = np.asarray(planned, dtype=np.float64)
    rec = {"t": int(t), "tracked": tracked.round(6).tolist(), "planned": planned.round(6).tolist(),
           "error": float(tracking_error(tracked, planned)), "n_contact": int(n_contact),
           "success_point": np.asarray(success_point, dtype=np.float64).tolist(),
           "object_xy": np.asarray(object_xy, dtype=np.float64).tolist(),
           "rest_gap": float(rest_gap), "art": float(art)}
    if target_xy is not None:
        rec["target_xy"] = np.asarray(target_xy, dtype=np.float64).tolist()
    return rec


def write_traces(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json_lines())
    return path


def read_traces(path) -> list[EpisodeRecord]:
    out: list[EpisodeRecord] = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            kind = row.pop("record")
            if kind == "episode":
                out.append(EpisodeRecord(**row))
            elif not out:
                raise ValueError("trace step before any episode header")
            else:
                out[-1].steps.append(row)
    return out


def check_success(spec: TaskSpec, trace: EpisodeRecord) -> bool:
    """Evaluate the task predicate from a recorded episode alone."""
    if not trace.steps:
        raise ValueError("empty episode trace")
    sp = spec.success_params
    kind = spec.success
    last = trace.steps[-1]
    if kind == "pick_place":
        d = np.linalg.norm(np.subtract(last["object_xy"], last["target_xy"]))
        return bool(d <= sp["radius"] and last["rest_gap"] <= sp["rest_tolerance"])
    if kind == "articulation_min":
        return bool(last["art"] >= sp["min"])
    if kind == "articulation_max":
        return bool(last["art"] < sp["max"])
    if kind == "swings":
        z0 = trace.steps[0]["success_point"][2]
        trend = np.zeros(1, dtype=np.int8)
        ext, hi = np.array([z0]), np.array([z0])
        swings = np.zeros(1, dtype=np.int32)
        for s in trace.steps[1:]:
            zigzag_update(np.array([s["success_point"][2]]), trend, ext, hi, swings,
                          float(sp.get("height", 0.05)))
        return bool(swings[0] >= sp["count"])
    if kind == "wipe":
        band = float(sp.get("band", 0.03))
        length = 0.0
        for prev, s in zip(trace.steps[:-1], trace.steps[1:]):
            if s["rest_gap"] <= band:
                length += float(np.linalg.norm(np.subtract(s["object_xy"], prev["object_xy"])))
        return bool(length >= sp["length"])
    if kind == "max_error":
        return bool(trace.max_error <= sp["max"])
    raise ValueError(f"unknown success predicate {kind!r}")
