"""Scripted ground-truth keyframes for every task archetype.

Each script emits 20 canonical keyframes (keypoints in task order, then the
wrist).  Coarser plans are index-resampled from these.
"""

from __future__ import annotations

import numpy as np

from ..env.scene import Scene, support_height
from ..env.tasks import GRASP_DEPTH, UnknownTask, get_task
from ..geometry import Array, rot_z
from ..plan import HAND, WaypointSequence

N_CANONICAL = 20
LIFT = np.array([0.0, 0.0, 1.0])
UP = np.array([0.0, 0.0, GRASP_DEPTH])


def _lerp(a, b, f):
    return np.asarray(a) + (np.asarray(b) - np.asarray(a)) * f


def _approach(h0, pre, g) -> list[Array]:
    """Wrist frames 0..3: start, halfway to pre-grasp, pre-grasp, grasp."""
    return [np.asarray(h0), _lerp(h0, pre, 0.5), np.asarray(pre), np.asarray(g)]


def _pick_place(scene: Scene) -> Array:
    spec = scene.task
    lay = scene.layout
    kp = scene.keypoints()
    o = spec.object_index(spec.success_params["object"])
    tgt = spec.object_index(spec.success_params["target"])
    pos, rot = scene.poses()
    c = pos[o]
    g = c + UP
    pre = g + 0.08 * LIFT
    lift = spec.script_params["lift"]
    floor = support_height(lay, pos[None], rot[None], pos[None, None, tgt, :2])[0, 0]
    f = np.array([pos[tgt, 0], pos[tgt, 1], floor + lay.half_height[o]])
    fw = f + UP
    hand = _approach(scene.hand_position, pre, g)
    hand += [g, g, g]
    hand += [g + LIFT * lift * j / 3 for j in (1, 2, 3)]
    top = g + LIFT * lift
    hand += [_lerp(top, fw + LIFT * lift, j / 6) for j in range(1, 7)]
    hand += [_lerp(fw + LIFT * lift, fw, j / 2) for j in (1, 2)]
    hand += [fw, fw]
    hand = np.array(hand)
    moved = np.arange(N_CANONICAL) >= 7
    obj = np.where(moved[:, None], kp[0] + hand - g, kp[0])
    target = np.broadcast_to(kp[1], (N_CANONICAL, 3))
    return np.stack([obj, target, hand], axis=1)


def _pull(scene: Scene, prismatic: bool) -> Array:
    spec = scene.task
    kp = scene.keypoints()[0]
    name = spec.keypoints[0][1]
    o = spec.object_index(name)
    obj = spec.objects[o]
    R0 = scene.rest_rot[o]
    outward = R0 @ np.array([-1.0, 0.0, 0.0])
    g = kp + UP
    pre = g + 0.08 * outward
    hand = _approach(scene.hand_position, pre, g) + [g, g, g]
    handle = [kp] * 7
    for j in range(1, 14):
        if prismatic:
            h = kp + outward * spec.script_params["pull"] * j / 13
        else:
            ang = spec.script_params["open"] * j / 13
            axis_w = R0 @ np.asarray(obj.articulation.axis)
            if abs(axis_w[2]) < 0.999:
                raise ValueError("scripted hinge must be vertical")
            piv = scene.rest_pos[o] + R0 @ np.asarray(obj.articulation.pivot)
            h = piv + rot_z(np.sign(axis_w[2]) * ang) @ (kp - piv)
        handle.append(h)
        hand.append(h + UP)
    return np.stack([np.array(handle), np.array(hand)], axis=1)


_SWING = (0.5, 1.0, 0.5, 0.0)


def _hammer(scene: Scene) -> Array:
    spec = scene.task
    kp = scene.keypoints()
    o = spec.object_index("hammer")
    centre = kp[0] - np.array([0.0, 0.0, scene.layout.half_height[o]])
    g = centre + UP
    pre = g + 0.08 * LIFT
    up = spec.script_params["up"]
    hand = _approach(scene.hand_position, pre, g) + [g, g]
    lifts = [0.0] * 6 + [up * f for f in _SWING * 3] + [0.0, 0.0]
    hand += [g + LIFT * lifts[k] for k in range(6, N_CANONICAL)]
    hand = np.array(hand)
    off = (hand - g) * (np.arange(N_CANONICAL) >= 6)[:, None]
    return np.stack([kp[0] + off, kp[1] + off, hand], axis=1)


def _wipe(scene: Scene) -> Array:
    spec = scene.task
    kp = scene.keypoints()[0]
    o = spec.object_index("sponge")
    g = scene.rest_pos[o] + UP
    pre = g + 0.08 * LIFT
    d = scene.rest_rot[o] @ np.array([0.0, 1.0, 0.0])
    if d[1] < 0:
        d = -d
    stroke = spec.script_params["stroke"]
    hand = _approach(scene.hand_position, pre, g) + [g, g]
    frac = list(_SWING * 3) + [0.0, 0.0]
    hand += [g + d * stroke * f for f in frac]
    hand = np.array(hand)
    off = (hand - g) * (np.arange(N_CANONICAL) >= 6)[:, None]
    return np.stack([kp + off, hand], axis=1)


def _grip(scene: Scene) -> Array:
    spec = scene.task
    o = spec.object_index(spec.success_params["object"])
    obj = spec.objects[o]
    g = scene.rest_pos[o] + UP
    pre = g + 0.08 * LIFT
    hand = np.array(_approach(scene.hand_position, pre, g) + [g] * 16)
    theta0 = scene.articulation[o]
    frames = []
    for k in range(N_CANONICAL):
        f = min(max(k - 5, 0), 10) / 10.0
        theta = theta0 * (1.0 - f)
        pts = []
        for _, _, anchor in spec.keypoints:
            side = obj.anchor_sides.get(anchor, 0)
            local = rot_z(side * theta / 2.0) @ np.asarray(obj.anchors[anchor])
            pts.append(scene.rest_pos[o] + scene.rest_rot[o] @ local)
        frames.append(pts + [hand[k]])
    return np.array(frames)


def _toy(scene: Scene) -> Array:
    spec = scene.task
    m0 = scene.keypoints()[0]
    ctrl = np.vstack([m0, m0 + np.asarray(scene.params["path"])])
    s = np.linspace(0.0, len(ctrl) - 1, N_CANONICAL)
    i = np.minimum(np.floor(s).astype(int), len(ctrl) - 2)
    f = (s - i)[:, None]
    marker = ctrl[i] * (1 - f) + ctrl[i + 1] * f
    mount = np.asarray(spec.objects[0].position)
    ramp = np.clip(np.arange(N_CANONICAL) / 10.0, 0.0, 1.0)[:, None]
    hand = marker - mount + ramp * np.asarray(scene.params["bias"])
    return np.stack([marker, hand], axis=1)


_SCRIPTS = {
    "pick_place": _pick_place,
    "drawer": lambda sc: _pull(sc, True),
    "fridge": lambda sc: _pull(sc, False),
    "hammer": _hammer,
    "wipe": _wipe,
    "grip": _grip,
    "toy": _toy,
}


def canonical_keyframes(scene: Scene) -> Array:
    """(20, k + 1, 3) ground-truth keyframes for ``scene``."""
    try:
        script = _SCRIPTS[scene.task.archetype]
    except KeyError:
        raise UnknownTask(scene.task.archetype) from None
    return script(scene)


def oracle_waypoints(scene: Scene, n: int = N_CANONICAL) -> WaypointSequence:
    names = scene.task.keypoint_names + (HAND,)
    w = WaypointSequence(names, canonical_keyframes(scene))
    return w if n == N_CANONICAL else w.resampled(n)


def oracle_plan(task: str, scene: Scene, n: int = N_CANONICAL) -> WaypointSequence:
    """Ground-truth waypoints for a known task and scene."""
    spec = get_task(task)
    if spec.task_id != scene.task.task_id:
        raise ValueError(f"scene belongs to {scene.task.task_id!r}, not {task!r}")
    return oracle_waypoints(scene, n)
