"""Keypoint scaffolds: waypoint sequences, interpolated plans, plan windows, plan JSON."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Array

HAND = "hand"
WINDOW = 15
DEFAULT_HORIZON = 300
RIGID_TOLERANCE = 0.02

SOURCES = ("vlm", "oracle", "prerecorded", "reduced", "oracle-keypoints", "oracle-trajectory")


class SchemaError(ValueError):
    """Plan or keypoint JSON does not match the expected schema."""


class TooShort(ValueError):
    pass


class OutOfRange(IndexError):
    pass


@dataclass(frozen=True, eq=False)
class WaypointSequence:
    """``n`` waypoints for each named keypoint plus the wrist ("hand").

    ``points`` has shape ``(n, len(names), 3)``; ``names`` contains ``"hand"``
    exactly once (conventionally last, as in the prompt schema).
    """

    names: tuple[str, ...]
    points: Array

    def __post_init__(self):
        names = tuple(self.names)
        pts = np.array(self.points, dtype=np.float64)
        if names.count(HAND) != 1:
            raise SchemaError('"hand" must appear exactly once')
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate keypoint names in {names}")
        if pts.ndim != 3 or pts.shape[1:] != (len(names), 3):
            raise SchemaError(f"points shape {pts.shape} does not match {len(names)} names")
        if pts.shape[0] < 2:
            raise SchemaError("a waypoint sequence needs at least 2 waypoints")
        if not np.all(np.isfinite(pts)):
            raise SchemaError("non-finite waypoint coordinate")
        pts.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def keypoint_names(self) -> tuple[str, ...]:
        return tuple(nm for nm in self.names if nm != HAND)

    @property
    def k(self) -> int:
        return len(self.names) - 1

    def track(self, name: str) -> Array:
        return self.points[:, self.names.index(name)]

    def keypoint_tracks(self) -> Array:
        """``(n, k, 3)`` in keypoint-name order."""
        idx = [self.names.index(nm) for nm in self.keypoint_names]
        return self.points[:, idx]

    def translated(self, offset) -> WaypointSequence:
        return WaypointSequence(self.names, self.points + np.asarray(offset, dtype=np.float64))

    def resampled(self, n: int) -> WaypointSequence:
        """Index-parameterised linear resampling to ``n`` waypoints."""
        if n < 2:
            raise TooShort("need at least 2 waypoints")
        return WaypointSequence(self.names, _resample_index(self.points, n))

    def __eq__(self, other):
        return (isinstance(other, WaypointSequence) and self.names == other.names
                and np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash((self.names, self.points.tobytes()))


def _resample_index(points: Array, T: int) -> Array:
    n = points.shape[0]
    # Segment and fraction from exact integer arithmetic on i * (n - 1) / (T - 1).
    num = np.arange(T, dtype=np.int64) * (n - 1)
    i0 = np.minimum(num // (T - 1), n - 2)
    frac = ((num - i0 * (T - 1)) / (T - 1))[:, None, None]
    out = (1.0 - frac) * points[i0] + frac * points[i0 + 1]
    # Exact endpoints and exact knots when they fall on the grid.
    knot = frac[:, 0, 0] == 0.0
    out[knot] = points[i0[knot]]
    out[-1] = points[-1]
    return out


def _resample_arclength(points: Array, T: int) -> Array:
    # Shared parameter across tracks: cumulative mean segment length.
    seg = np.linalg.norm(np.diff(points, axis=0), axis=-1).mean(axis=1)
    if seg.sum() == 0.0:
        return _resample_index(points, T)
    knots = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
    s = np.linspace(0.0, 1.0, T)
    out = np.empty((T,) + points.shape[1:])
    for j in range(points.shape[1]):
        for c in range(3):
            out[:, j, c] = np.interp(s, knots, points[:, j, c])
    out[0], out[-1] = points[0], points[-1]
    return out


@dataclass(frozen=True, eq=False)
class KeypointPlan:
    """Dense scaffold over ``T`` control steps.

    ``wrist`` is ``(T, 3)``; ``keypoints`` is ``(T, k, 3)``.  Step indices are
    0-based throughout the package.
    """

    wrist: Array
    keypoints: Array
    names: tuple[str, ...]
    source: str = "oracle"
    n_waypoints: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.wrist, dtype=np.float64)
        kp = np.array(self.keypoints, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 3:
            raise ValueError(f"wrist shape {w.shape}")
        if kp.ndim != 3 or kp.shape[0] != w.shape[0] or kp.shape[2] != 3:
            raise ValueError(f"keypoint shape {kp.shape} inconsistent with wrist {w.shape}")
        if kp.shape[1] != len(self.names):
            raise ValueError("keypoint names do not match keypoint tracks")
        if self.n_waypoints and w.shape[0] < self.n_waypoints:
            raise TooShort("T must be >= n")
        w.setflags(write=False)
        kp.setflags(write=False)
        object.__setattr__(self, "wrist", w)
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def T(self) -> int:
        return self.wrist.shape[0]

    @property
    def k(self) -> int:
        return self.keypoints.shape[1]

    @property
    def initial_keypoints(self) -> Array:
        return self.keypoints[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.wrist.tobytes())
        h.update(self.keypoints.tobytes())
        h.update("\x00".join(self.names).encode())
        return h.hexdigest()


def interpolate(w: WaypointSequence, T: int = DEFAULT_HORIZON, *, mode: str = "index",
                source: str = "oracle", meta: dict | None = None) -> KeypointPlan:
    """Linearly resample every track of ``w`` to ``T`` steps."""
    if T < w.n:
        raise TooShort(f"T={T} < n={w.n}")
    if mode == "index":
        dense = _resample_index(w.points, T)
    elif mode == "arclength":
        dense = _resample_arclength(w.points, T)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    hi = w.names.index(HAND)
    kidx = [i for i in range(len(w.names)) if i != hi]
    return KeypointPlan(dense[:, hi], dense[:, kidx], w.keypoint_names, source, w.n,
                        dict(meta or {}))


def window_indices(t: int, T: int, H: int = WINDOW) -> np.ndarray:
    """``H`` indices uniformly spaced over ``[t, T-1]`` (round half up)."""
    if not 0 <= t < T:
        raise OutOfRange(f"step {t} outside [0, {T})")
    pos = t + np.arange(H, dtype=np.float64) * (T - 1 - t) / (H - 1)
    return np.minimum(np.floor(pos + 0.5).astype(int), T - 1)


@dataclass(frozen=True)
class PlanWindow:
    indices: np.ndarray
    wrist: Array       # (H, 3)
    keypoints: Array   # (H, k, 3)


def window(plan: KeypointPlan, t: int, H: int = WINDOW) -> PlanWindow:
    idx = window_indices(t, plan.T, H)
    return PlanWindow(idx, plan.wrist[idx], plan.keypoints[idx])


# -- JSON -----------------------------------------------------------------

_FENCE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.S)


def extract_json(text: str):
    """Parse raw JSON or the first fenced block; anything else is a SchemaError."""
    s = text.strip()
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        pass
    for m in _FENCE.finditer(text):
        try:
            return json.loads(m.group(1).strip())
        except json.JSONDecodeError:
            continue
    raise SchemaError("response is neither JSON nor a fenced JSON block")


def _coord(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"non-numeric coordinate at {where}: {v!r}")
    f = float(v)
    if not np.isfinite(f):
        raise SchemaError(f"non-finite coordinate at {where}")
    return f


def plan_from_json_obj(data, names: Sequence[str] | None = None) -> WaypointSequence:
    if not isinstance(data, list) or not data:
        raise SchemaError("plan JSON must be a non-empty array")
    if names is None:
        first = data[0]
        if not isinstance(first, dict):
            raise SchemaError("waypoint entries must be objects")
        names = [key for key in first if key != "waypoint_num"]
    names = tuple(names)
    if HAND not in names:
        raise SchemaError('schema lacks "hand"')
    expected = set(names) | {"waypoint_num"}
    pts = np.empty((len(data), len(names), 3))
    for i, wp in enumerate(data):
        if not isinstance(wp, dict):
            raise SchemaError(f"waypoint {i} is not an object")
        keys = set(wp)
        if keys != expected:
            missing, extra = expected - keys, keys - expected
            raise SchemaError(f"waypoint {i}: missing {sorted(missing)} unknown {sorted(extra)}")
        num = wp["waypoint_num"]
        if isinstance(num, bool) or not isinstance(num, int) or num != i:
            raise SchemaError(f"waypoint_num {num!r} at position {i}; expected {i}")
        for j, nm in enumerate(names):
            xyz = wp[nm]
            if not isinstance(xyz, dict) or set(xyz) != {"x", "y", "z"}:
                raise SchemaError(f"waypoint {i} {nm!r}: expected {{x, y, z}} object")
            pts[i, j] = [_coord(xyz[c], f"{i}/{nm}/{c}") for c in "xyz"]
    try:
        return WaypointSequence(names, pts)
    except SchemaError:
        raise
    except ValueError as e:
        raise SchemaError(str(e)) from e


def parse_plan_json(text: str, names: Sequence[str] | None = None) -> WaypointSequence:
    """Parse the trajectory answer format (array of ``waypoint_num`` objects)."""
    return plan_from_json_obj(extract_json(text), names)


def plan_to_json_obj(w: WaypointSequence, precision: int | None = None) -> list:
    out = []
    for i in range(w.n):
        entry: dict = {"waypoint_num": i}
        for j, nm in enumerate(w.names):
            x, y, z = (float(v) for v in w.points[i, j])
            if precision is not None:
                x, y, z = round(x, precision), round(y, precision), round(z, precision)
            entry[nm] = {"x": x, "y": y, "z": z}
        out.append(entry)
    return out


def emit_plan_json(w: WaypointSequence, precision: int | None = None, indent: int | None = None) -> str:
    """Serialise ``w``; floats use shortest round-trip repr unless ``precision`` is set."""
    return json.dumps(plan_to_json_obj(w, precision), indent=indent)


def parse_keypoint_json(text: str, names: Sequence[str]) -> list[tuple[str, int, int]]:
    """Parse ``[{"name": ..., "point": [y, x]}, ...]``; returns entries in ``names`` order."""
    data = extract_json(text)
    if not isinstance(data, list):
        raise SchemaError("keypoint answer must be a JSON array")
    found: dict[str, tuple[int, int]] = {}
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or set(entry) != {"name", "point"}:
            raise SchemaError(f"keypoint entry {i} must have exactly 'name' and 'point'")
        nm, pt = entry["name"], entry["point"]
        if not isinstance(nm, str):
            raise SchemaError(f"keypoint entry {i}: name must be a string")
        if nm not in names:
            raise SchemaError(f"unexpected keypoint {nm!r}")
        if nm in found:
            raise SchemaError(f"duplicate keypoint {nm!r}")
        if not isinstance(pt, list) or len(pt) != 2:
            raise SchemaError(f"keypoint {nm!r}: point must be [y, x]")
        yx = [_coord(c, f"{nm}/point") for c in pt]
        if not all(0.0 <= c <= 1000.0 for c in yx):
            raise SchemaError(f"keypoint {nm!r}: coordinates outside 0-1000")
        found[nm] = (int(round(yx[0])), int(round(yx[1])))
    missing = [nm for nm in names if nm not in found]
    if missing:
        raise SchemaError(f"missing keypoints {missing}")
    return [(nm, *found[nm]) for nm in names]


def emit_keypoint_json(entries: Iterable[tuple[str, int, int]]) -> str:
    return json.dumps([{"name": nm, "point": [int(y), int(x)]} for nm, y, x in entries])


# -- plan bundles -----------------------------------------------------------

BUNDLE_VERSION = 1


def save_bundle(path, task_id: str, snapshot_id: str, w: WaypointSequence, T: int,
                meta: dict | None = None) -> None:
    doc = {
        "version": BUNDLE_VERSION,
        "task": task_id,
        "snapshot": snapshot_id,
        "T": int(T),
        "meta": meta or {},
        "waypoints": plan_to_json_obj(w),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_bundle(path) -> tuple[dict, WaypointSequence]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != BUNDLE_VERSION:
        raise SchemaError(f"unsupported bundle version {doc.get('version')!r}")
    names = [key for key in doc["waypoints"][0] if key != "waypoint_num"]
    return doc, plan_from_json_obj(doc["waypoints"], names)


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str       # "workspace" | "rigid" | "proximity" | "anchor"
    step: int
    detail: str


def grasp_step(plan: KeypointPlan, moved: float = 0.03) -> int | None:
    """First step at which any keypoint departs ``moved`` metres from its start."""
    disp = np.linalg.norm(plan.keypoints - plan.keypoints[0], axis=-1).max(axis=1)
    hits = np.nonzero(disp > moved)[0]
    return int(hits[0]) if hits.size else None


def validate_plan(plan: KeypointPlan, bounds, rigid_pairs: Sequence[tuple[str, str]] = (),
                  *, rho: float = RIGID_TOLERANCE, proximity: float = 0.20,
                  anchor_tolerance: float = 0.02) -> list[Violation]:
    """Report workspace, rigid-pair, wrist-proximity and anchoring violations."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    out: list[Violation] = []
    for j, nm in enumerate(plan.names):
        tr = plan.keypoints[:, j]
        bad = np.nonzero(np.any((tr < lo) | (tr > hi), axis=1))[0]
        if bad.size:
            out.append(Violation("workspace", int(bad[0]), f"{nm} leaves workspace"))
    bad = np.nonzero(np.any((plan.wrist < lo) | (plan.wrist > hi), axis=1))[0]
    if bad.size:
        out.append(Violation("workspace", int(bad[0]), "hand leaves workspace"))
    for a, b in rigid_pairs:
        ia, ib = plan.names.index(a), plan.names.index(b)
        d = np.linalg.norm(plan.keypoints[:, ia] - plan.keypoints[:, ib], axis=-1)
        drift = np.abs(d - d[0])
        if drift.max() > rho:
            out.append(Violation("rigid", int(np.argmax(drift > rho)),
                                 f"{a}-{b} distance drifts {drift.max():.3f} m"))
    g = grasp_step(plan)
    if g is not None:
        d = np.linalg.norm(plan.keypoints[g] - plan.wrist[g], axis=-1).min()
        if d > proximity:
            out.append(Violation("proximity", g, f"wrist {d:.3f} m from nearest keypoint at grasp"))
    corr = plan.meta.get("anchor_correction")
    if corr is not None and corr > anchor_tolerance:
        out.append(Violation("anchor", 0, f"waypoint 0 shifted {corr:.3f} m to anchor"))
    return out
