"""Scene sampling and batched object/keypoint kinematics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .._rng import make_rng
from ..geometry import Array, euler_to_matrix, rot_z
from ..kernels import BOX, CYLINDER, SPHERE, signed_distances
from .tasks import GRASP_DEPTH, TaskSpec

SHAPE_CODES = {"sphere": SPHERE, "box": BOX, "cylinder": CYLINDER}


def axis_angle_matrix(axis, angle) -> Array:
    """Rodrigues rotation, broadcasting over leading dims of ``axis``/``angle``."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    R = np.empty(np.broadcast_shapes(x.shape, angle.shape) + (3, 3))
    R[..., 0, 0] = c + x * x * C
    R[..., 0, 1] = x * y * C - z * s
    R[..., 0, 2] = x * z * C + y * s
    R[..., 1, 0] = y * x * C + z * s
    R[..., 1, 1] = c + y * y * C
    R[..., 1, 2] = y * z * C - x * s
    R[..., 2, 0] = z * x * C - y * s
    R[..., 2, 1] = z * y * C + x * s
    R[..., 2, 2] = c + z * z * C
    return R


@dataclass(frozen=True)
class StaticLayout:
    """Per-task arrays that never change during an episode."""

    shapes: np.ndarray          # (O,) shape codes
    dims: Array                 # (O, 3)
    half_height: Array          # (O,)
    kind: np.ndarray            # (O,) 0 none, 1 prismatic, 2 revolute, 3 grip
    axis: Array                 # (O, 3) object frame
    pivot: Array                # (O, 3) object frame
    lo: Array                   # (O,)
    hi: Array                   # (O,)
    graspable: np.ndarray       # (O,) bool
    static: np.ndarray
    support: np.ndarray
    marker: np.ndarray
    hand_mounted: np.ndarray
    mount_offset: Array         # (O, 3) wrist frame offset for hand-mounted objects
    free: np.ndarray            # movable, unarticulated, not hand mounted
    touchable: np.ndarray       # counts towards fingertip contacts

    @classmethod
    def from_spec(cls, spec: TaskSpec) -> StaticLayout:
        kinds = {None: 0, "prismatic": 1, "revolute": 2, "grip": 3}
        objs = spec.objects
        kind = np.array([kinds[o.articulation.kind if o.articulation else None] for o in objs])
        art = [o.articulation for o in objs]
        hand_mounted = np.array([o.hand_mounted for o in objs])
        static = np.array([o.static for o in objs])
        marker = np.array([o.marker for o in objs])
        return cls(
            shapes=np.array([SHAPE_CODES[o.shape] for o in objs], dtype=np.int64),
            dims=np.array([o.dims for o in objs], dtype=np.float64).reshape(-1, 3),
            half_height=np.array([o.half_height() for o in objs]),
            kind=kind,
            axis=np.array([a.axis if a else (0.0, 0.0, 1.0) for a in art], dtype=np.float64),
            pivot=np.array([a.pivot if a else (0.0, 0.0, 0.0) for a in art], dtype=np.float64),
            lo=np.array([a.range[0] if a else 0.0 for a in art]),
            hi=np.array([a.range[1] if a else 0.0 for a in art]),
            graspable=np.array([o.graspable for o in objs]),
            static=static,
            support=np.array([o.support for o in objs]),
            marker=marker,
            hand_mounted=hand_mounted,
            mount_offset=np.array([o.position if o.hand_mounted else (0.0, 0.0, 0.0)
                                   for o in objs], dtype=np.float64),
            free=(kind == 0) & ~static & ~hand_mounted,
            touchable=~marker & ~hand_mounted,
        )


def object_poses(layout: StaticLayout, rest_pos: Array, rest_rot: Array, art: Array,
                 wrist_pos: Array | None = None, wrist_rot: Array | None = None):
    """Current object poses from rest poses and articulation scalars.

    Batched over the leading dim: rest_pos (B, O, 3), rest_rot (B, O, 3, 3),
    art (B, O).  Hand-mounted objects follow the wrist when it is given.
    """
    pos = rest_pos.copy()
    rot = rest_rot.copy()
    pri = np.flatnonzero(layout.kind == 1)
    if len(pri):
        ax = np.einsum("boij,oj->boi", rest_rot[:, pri], layout.axis[pri])
        pos[:, pri] = rest_pos[:, pri] + art[:, pri, None] * ax
    rev = np.flatnonzero(layout.kind == 2)
    if len(rev):
        ax = np.einsum("boij,oj->boi", rest_rot[:, rev], layout.axis[rev])
        piv = rest_pos[:, rev] + np.einsum("boij,oj->boi", rest_rot[:, rev], layout.pivot[rev])
        Ra = axis_angle_matrix(ax, art[:, rev])
        pos[:, rev] = piv + np.einsum("boij,boj->boi", Ra, rest_pos[:, rev] - piv)
        rot[:, rev] = Ra @ rest_rot[:, rev]
    mounted = np.flatnonzero(layout.hand_mounted)
    if len(mounted) and wrist_pos is not None:
        pos[:, mounted] = wrist_pos[:, None] + np.einsum("bij,oj->boi", wrist_rot,
                                                         layout.mount_offset[mounted])
        rot[:, mounted] = wrist_rot[:, None]
    return pos, rot


def anchor_world(layout: StaticLayout, pos: Array, rot: Array, art: Array, obj_idx: np.ndarray,
                 local: Array, side: Array) -> Array:
    """World positions of object-frame anchors.

    obj_idx (B, K) or (K,); local (B, K, 3); side (B, K) in {-1, 0, 1} rotates
    the anchor about the object z axis by side * art / 2 (grip objects).
    """
    B = pos.shape[0]
    idx = np.broadcast_to(obj_idx, (B,) + np.shape(obj_idx)[-1:])
    rows = np.arange(B)[:, None]
    p = pos[rows, idx]
    R = rot[rows, idx]
    a = art[rows, idx]
    grip = layout.kind[idx] == 3
    ang = np.where(grip, side * a / 2.0, 0.0)
    local = np.einsum("bkij,bkj->bki", rot_z(ang), local)
    return p + np.einsum("bkij,bkj->bki", R, local)


def support_height(layout: StaticLayout, pos: Array, rot: Array, xy: Array) -> Array:
    """Top height of the support surface under each query point (B, O) -> (B, O)."""
    B, O = xy.shape[:2]
    top = np.zeros((B, O))
    for s in np.flatnonzero(layout.support):
        rel = np.concatenate([xy - pos[:, s, None, :2], np.zeros((B, O, 1))], axis=-1)
        local = np.einsum("boi,bij->boj", rel, rot[:, s])
        d = layout.dims[s]
        if layout.shapes[s] == CYLINDER:
            inside = np.hypot(local[..., 0], local[..., 1]) <= d[0]
        else:
            inside = (np.abs(local[..., 0]) <= d[0] / 2) & (np.abs(local[..., 1]) <= d[1] / 2)
        h = pos[:, s, 2] + layout.half_height[s]
        top = np.where(inside, np.maximum(top, h[:, None]), top)
    return top


@dataclass(eq=False)
class Scene:
    """One sampled initial condition (ground truth)."""

    task: TaskSpec
    seed: int
    rest_pos: Array                 # (O, 3)
    rest_rot: Array                 # (O, 3, 3)
    articulation: Array             # (O,)
    hand_position: Array            # (3,)
    hand_euler: Array               # (3,)
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def layout(self) -> StaticLayout:
        return StaticLayout.from_spec(self.task)

    def hand_rotation(self) -> Array:
        return euler_to_matrix(self.hand_euler)

    def poses(self) -> tuple[Array, Array]:
        pos, rot = object_poses(self.layout, self.rest_pos[None], self.rest_rot[None],
                                self.articulation[None], self.hand_position[None],
                                self.hand_rotation()[None])
        return pos[0], rot[0]

    def keypoints(self) -> Array:
        """True anchor positions (k, 3) in task keypoint order."""
        spec = self.task
        idx = np.array([spec.object_index(o) for _, o, _ in spec.keypoints])
        local = np.array([spec.objects[i].anchors[a] for i, (_, _, a) in zip(idx, spec.keypoints)])
        side = np.array([spec.objects[i].anchor_sides.get(a, 0)
                         for i, (_, _, a) in zip(idx, spec.keypoints)], dtype=np.float64)
        pos, rot = self.poses()
        return anchor_world(self.layout, pos[None], rot[None], self.articulation[None], idx,
                            local[None], side[None])[0]

    def surface_distance(self, points) -> Array:
        """Distance of each point to the nearest object surface (unsigned, clipped at 0)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        pos, rot = self.poses()
        lay = self.layout
        d = signed_distances(pts[None], pos[None], rot[None], lay.shapes, lay.dims)[0]
        return np.maximum(d.min(axis=1), 0.0)


def sample_scene(spec: TaskSpec, seed: int) -> Scene:
    """Uniformly sample object and hand poses within the task ranges."""
    rng = make_rng(seed)
    O = len(spec.objects)
    rest_pos = np.zeros((O, 3))
    rest_rot = np.zeros((O, 3, 3))
    art = np.zeros(O)
    names = [o.name for o in spec.objects]
    for i, o in enumerate(spec.objects):
        jitter = rng.uniform(-1.0, 1.0, 3) * np.asarray(o.position_range)
        yaw = rng.uniform(-o.yaw_range, o.yaw_range) if o.yaw_range > 0 else 0.0
        local_p = np.asarray(o.position) + jitter
        local_R = rot_z(yaw)
        if o.parent is not None:
            j = names.index(o.parent)
            rest_pos[i] = rest_pos[j] + rest_rot[j] @ local_p
            rest_rot[i] = rest_rot[j] @ local_R
        else:
            rest_pos[i] = local_p
            rest_rot[i] = local_R
        lo, hi = o.initial_articulation
        art[i] = rng.uniform(lo, hi) if hi > lo else lo
    hand = np.asarray(spec.hand_start) + rng.uniform(-1.0, 1.0, 3) * np.asarray(spec.hand_range)
    params: dict[str, Any] = {}
    if spec.archetype == "toy":
        sp = spec.script_params
        params["path"] = rng.uniform(-sp["path"], sp["path"], (4, 3)).tolist()
        lo, hi = sp["bias"]
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        params["bias"] = (direction * rng.uniform(lo, hi)).tolist()
    return Scene(spec, int(seed), rest_pos, rest_rot, art, hand,
                 np.asarray(spec.wrist_euler, dtype=np.float64), params)


def grasp_wrist(center) -> Array:
    """Wrist position placing the closed-hand grasp centre at ``center``."""
    return np.asarray(center, dtype=np.float64) + np.array([0.0, 0.0, GRASP_DEPTH])
