"""Task specifications for the quasi-static task suite.

World frame: counter top at z = 0, x forward from the robot, y left, z up.
Object anchors are given in the object frame (at articulation 0 / closed grip).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np
import yaml

# Fingertips converge this far below the wrist when the hand closes.
GRASP_DEPTH = 0.14

# Initial termination thresholds (m), per task object.
TERMINATION_THRESHOLDS = {
    "apple": 0.10,
    "bottle": 0.10,
    "hammer": 0.08,
    "drawer": 0.15,
    "sponge": 0.08,
    "plier": 0.05,
    "scissors": 0.03,
    "fridge": 0.20,
}


@dataclass(frozen=True)
class Articulation:
    kind: str                                   # prismatic | revolute | grip
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    pivot: tuple[float, float, float] = (0.0, 0.0, 0.0)
    range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("prismatic", "revolute", "grip"):
            raise ValueError(f"unknown articulation {self.kind!r}")
        if self.range[0] > self.range[1]:
            raise ValueError("articulation range is reversed")


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    shape: str                                  # sphere | box | cylinder
    dims: tuple[float, float, float]            # sphere (r,_,_); box sizes; cylinder (r,_,h)
    position: tuple[float, float, float]        # nominal centre (parent frame if parent set)
    position_range: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_range: float = 0.0
    anchors: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    anchor_sides: dict[str, int] = field(default_factory=dict)
    articulation: Articulation | None = None
    initial_articulation: tuple[float, float] = (0.0, 0.0)
    graspable: bool = True
    static: bool = False
    support: bool = False
    marker: bool = False
    hand_mounted: bool = False
    parent: str | None = None

    def __post_init__(self):
        if self.shape not in ("sphere", "box", "cylinder"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if min(self.dims) < 0:
            raise ValueError("dimensions must be non-negative")

    def half_height(self) -> float:
        if self.shape == "sphere":
            return self.dims[0]
        return self.dims[2] / 2.0


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    instruction: str
    objects: tuple[ObjectSpec, ...]
    keypoints: tuple[tuple[str, str, str], ...]          # (keypoint, object, anchor)
    success: str
    success_params: dict[str, Any]
    delta_init: float
    archetype: str
    hand_start: tuple[float, float, float] = (0.35, 0.0, 0.30)
    hand_range: tuple[float, float, float] = (0.04, 0.04, 0.03)
    horizon: int = 300
    finger_arity: int = 1
    wrist_euler: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rigid_pairs: tuple[tuple[str, str], ...] = ()
    script_params: dict[str, Any] = field(default_factory=dict)
    workspace: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (-0.5, -1.0, -0.1), (1.5, 1.0, 1.5))

    def __post_init__(self):
        if self.delta_init <= 0:
            raise ValueError("delta_init must be positive")
        if not self.keypoints:
            raise ValueError("a task needs at least one keypoint")
        if self.finger_arity not in (1, 4):
            raise ValueError("finger arity must be 1 or 4")
        names = [o.name for o in self.objects]
        for kp, obj, anchor in self.keypoints:
            if obj not in names:
                raise ValueError(f"keypoint {kp!r} references unknown object {obj!r}")
            if anchor not in self.objects[names.index(obj)].anchors:
                raise ValueError(f"object {obj!r} has no anchor {anchor!r}")

    @property
    def keypoint_names(self) -> tuple[str, ...]:
        return tuple(k[0] for k in self.keypoints)

    @property
    def k(self) -> int:
        return len(self.keypoints)

    @property
    def action_dim(self) -> int:
        return 6 + self.finger_arity

    def object_index(self, name: str) -> int:
        return [o.name for o in self.objects].index(name)

    def with_overrides(self, **kw) -> TaskSpec:
        return replace(self, **kw)


# -- (de)serialisation ------------------------------------------------------

def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def task_to_dict(spec: TaskSpec) -> dict:
    return asdict(spec)


def task_from_dict(d: dict) -> TaskSpec:
    d = dict(d)
    objs = []
    for o in d.pop("objects"):
        o = dict(o)
        art = o.pop("articulation", None)
        if art is not None:
            art = Articulation(**{k: _tuplify(v) for k, v in art.items()})
        o["anchors"] = {k: tuple(v) for k, v in o.get("anchors", {}).items()}
        for key in ("dims", "position", "position_range", "initial_articulation"):
            if key in o:
                o[key] = tuple(o[key])
        objs.append(ObjectSpec(articulation=art, **o))
    for key in ("keypoints", "hand_start", "hand_range", "wrist_euler", "rigid_pairs", "workspace"):
        if key in d:
            d[key] = _tuplify(d[key])
    return TaskSpec(objects=tuple(objs), **d)


def dump_task(spec: TaskSpec, path) -> None:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v
    with open(path, "w") as fh:
        yaml.safe_dump(plain(task_to_dict(spec)), fh, sort_keys=False)


def load_task(path) -> TaskSpec:
    with open(path) as fh:
        return task_from_dict(yaml.safe_load(fh))


# -- registry ---------------------------------------------------------------

def _pick_place(task_id, instruction, obj, target, kp_obj, kp_target, delta, **kw) -> TaskSpec:
    return TaskSpec(
        task_id=task_id,
        instruction=instruction,
        objects=(obj, target),
        keypoints=((kp_obj, obj.name, "top"), (kp_target, target.name, "top")),
        success="pick_place",
        success_params={"object": obj.name, "target": target.name, "radius": 0.08,
                        "rest_tolerance": 0.02},
        delta_init=delta,
        archetype="pick_place",
        script_params={"lift": 0.15},
        **kw,
    )


def _registry() -> dict[str, TaskSpec]:
    tasks: dict[str, TaskSpec] = {}

    apple = ObjectSpec("apple", "sphere", (0.04, 0.0, 0.0), (0.45, 0.12, 0.04), (0.06, 0.06, 0.0),
                       0.0, anchors={"top": (0.0, 0.0, 0.04)})
    board = ObjectSpec("cutting board", "box", (0.26, 0.18, 0.02), (0.45, -0.25, 0.01),
                       (0.05, 0.05, 0.0), 0.3, anchors={"top": (0.0, 0.0, 0.01)},
                       graspable=False, static=True, support=True)
    tasks["move_apple"] = _pick_place(
        "move_apple", "Move the apple to the cutting board", apple, board, "apple",
        "cutting board", TERMINATION_THRESHOLDS["apple"])

    bottle = ObjectSpec("bottle", "cylinder", (0.035, 0.0, 0.20), (0.45, -0.22, 0.10),
                        (0.06, 0.05, 0.0), 0.0, anchors={"top": (0.0, 0.0, 0.10)})
    point = ObjectSpec("point", "box", (0.04, 0.04, 0.002), (0.42, 0.40, 0.001), (0.05, 0.05, 0.0),
                       0.0, anchors={"top": (0.0, 0.0, 0.001)}, graspable=False, static=True,
                       marker=True)
    tasks["move_bottle"] = _pick_place(
        "move_bottle", "Move the bottle to the other side of the sink", bottle, point, "bottle",
        "point", TERMINATION_THRESHOLDS["bottle"])

    plate = ObjectSpec("plate", "cylinder", (0.10, 0.0, 0.02), (0.50, 0.25, 0.01), (0.05, 0.05, 0.0),
                       0.0, anchors={"top": (0.0, 0.0, 0.01)}, graspable=False, static=True,
                       support=True)
    tasks["place_bottle"] = _pick_place(
        "place_bottle", "Place the bottle onto the plate", replace(bottle, position=(0.42, -0.12, 0.10)),
        plate, "bottle", "plate", TERMINATION_THRESHOLDS["bottle"])

    cabinet = ObjectSpec("cabinet", "box", (0.40, 0.60, 0.50), (0.80, 0.0, 0.25), (0.05, 0.08, 0.0),
                         0.15, anchors={"front": (-0.20, 0.0, 0.0)}, graspable=False, static=True)
    drawer = ObjectSpec("drawer", "box", (0.42, 0.55, 0.12), (0.0, 0.0, 0.17), anchors={
        "handle": (-0.22, 0.0, 0.0)}, articulation=Articulation("prismatic", (-1.0, 0.0, 0.0),
                                                               range=(0.0, 0.40)),
        parent="cabinet")
    tasks["open_drawer"] = TaskSpec(
        task_id="open_drawer", instruction="Open the top drawer",
        objects=(cabinet, drawer), keypoints=(("handle", "drawer", "handle"),),
        success="articulation_min", success_params={"object": "drawer", "min": 0.20},
        delta_init=TERMINATION_THRESHOLDS["drawer"], archetype="drawer",
        hand_start=(0.30, 0.05, 0.45), script_params={"pull": 0.30})

    fridge = ObjectSpec("fridge", "box", (0.60, 0.64, 1.00), (0.95, 0.0, 0.50), (0.04, 0.06, 0.0),
                        0.1, anchors={"front": (-0.30, 0.0, 0.0)}, graspable=False, static=True)
    door = ObjectSpec("door", "box", (0.04, 0.64, 0.90), (-0.32, 0.0, 0.0), anchors={
        "handle": (-0.035, 0.27, 0.05)},
        articulation=Articulation("revolute", (0.0, 0.0, 1.0), (0.0, -0.32, 0.0),
                                  range=(0.0, np.deg2rad(110.0))),
        parent="fridge")
    tasks["open_fridge"] = TaskSpec(
        task_id="open_fridge", instruction="Open the refrigerator door",
        objects=(fridge, door), keypoints=(("handle", "door", "handle"),),
        success="articulation_min", success_params={"object": "door", "min": float(np.deg2rad(60.0))},
        delta_init=TERMINATION_THRESHOLDS["fridge"], archetype="fridge",
        hand_start=(0.30, 0.15, 0.55), script_params={"open": float(np.deg2rad(90.0))})

    hammer = ObjectSpec("hammer", "box", (0.30, 0.035, 0.035), (0.45, 0.0, 0.0175),
                        (0.05, 0.08, 0.0), 0.5,
                        anchors={"handle": (-0.05, 0.0, 0.0175), "head": (0.13, 0.0, 0.0175)})
    tasks["hammer"] = TaskSpec(
        task_id="hammer", instruction="Hammer on the counter three times",
        objects=(hammer,), keypoints=(("handle", "hammer", "handle"), ("head", "hammer", "head")),
        success="swings", success_params={"object": "hammer", "anchor": "head", "count": 3,
                                          "height": 0.05},
        delta_init=TERMINATION_THRESHOLDS["hammer"], archetype="hammer",
        rigid_pairs=(("handle", "head"),), script_params={"up": 0.15, "down": 0.0})

    sponge = ObjectSpec("sponge", "box", (0.10, 0.065, 0.04), (0.45, 0.0, 0.02), (0.06, 0.08, 0.0),
                        0.5, anchors={"top": (0.0, 0.0, 0.02)})
    tasks["wipe_sponge"] = TaskSpec(
        task_id="wipe_sponge", instruction="Wipe the counter with the sponge",
        objects=(sponge,), keypoints=(("sponge", "sponge", "top"),),
        success="wipe", success_params={"object": "sponge", "length": 0.30, "band": 0.03},
        delta_init=TERMINATION_THRESHOLDS["sponge"], archetype="wipe",
        script_params={"stroke": 0.15, "strokes": 5})

    scissors = ObjectSpec("scissors", "box", (0.20, 0.10, 0.015), (0.45, 0.05, 0.0075),
                          (0.05, 0.06, 0.0), 0.4,
                          anchors={"loop 1": (-0.09, 0.0, 0.0075), "loop 2": (-0.09, 0.0, 0.0075)},
                          anchor_sides={"loop 1": 1, "loop 2": -1},
                          articulation=Articulation("grip", range=(0.0, np.deg2rad(60.0))),
                          initial_articulation=(np.deg2rad(35.0), np.deg2rad(45.0)))
    tasks["close_scissors"] = TaskSpec(
        task_id="close_scissors", instruction="Close the scissors",
        objects=(scissors,), keypoints=(("loop 1", "scissors", "loop 1"),
                                        ("loop 2", "scissors", "loop 2")),
        success="articulation_max", success_params={"object": "scissors",
                                                    "max": float(np.deg2rad(5.0))},
        delta_init=TERMINATION_THRESHOLDS["scissors"], archetype="grip", finger_arity=4)

    pliers = replace(scissors, name="pliers", dims=(0.22, 0.12, 0.02), position=(0.45, 0.0, 0.01),
                     anchors={"handle left": (-0.10, 0.0, 0.01), "handle right": (-0.10, 0.0, 0.01)},
                     anchor_sides={"handle left": 1, "handle right": -1},
                     initial_articulation=(np.deg2rad(30.0), np.deg2rad(40.0)))
    tasks["close_pliers"] = TaskSpec(
        task_id="close_pliers", instruction="Close the pliers",
        objects=(pliers,), keypoints=(("handle left", "pliers", "handle left"),
                                      ("handle right", "pliers", "handle right")),
        success="articulation_max", success_params={"object": "pliers",
                                                    "max": float(np.deg2rad(5.0))},
        delta_init=TERMINATION_THRESHOLDS["plier"], archetype="grip", finger_arity=4)

    marker = ObjectSpec("marker", "sphere", (0.01, 0.0, 0.0), (0.0, 0.0, -GRASP_DEPTH),
                        anchors={"centre": (0.0, 0.0, 0.0)}, graspable=False, hand_mounted=True)
    tasks["point_track"] = TaskSpec(
        task_id="point_track", instruction="Move the hand marker along the path",
        objects=(marker,), keypoints=(("marker", "marker", "centre"),),
        success="max_error", success_params={"max": 0.02},
        delta_init=0.04, archetype="toy", horizon=120,
        hand_start=(0.40, 0.0, 0.35), hand_range=(0.08, 0.08, 0.05),
        script_params={"bias": (0.025, 0.035), "path": 0.12})
    return tasks


TASKS: dict[str, TaskSpec] = _registry()
SIM_TASKS = ("move_apple", "move_bottle", "open_drawer", "open_fridge", "hammer", "wipe_sponge",
             "close_scissors", "close_pliers")


class UnknownTask(KeyError):
    pass


def get_task(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id]
    except KeyError:
        raise UnknownTask(task_id) from None
