"""Batched quasi-static simulation of a floating hand and keypoint-tagged objects.

Dynamics are first-order: joints move towards their targets under a per-step
rate limit, grasped objects follow the wrist kinematically, and released free
objects settle onto the surface below them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from ..control import ResidualAction, ResidualScale, clamp_table, compose
from ..geometry import Array, euler_to_matrix, rot_z, wrap_angle
from ..kernels import signed_distances, zigzag_update
from .hand import N_FINGER_JOINTS, N_JOINTS, N_WRIST, HandModel
from .scene import Scene, StaticLayout, anchor_world, object_poses, support_height
from .tasks import TaskSpec

_GRIP = 3


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 60.0
    smoothing: float = 0.9              # EMA factor on the raw action; 0 disables
    contact_distance: float = 0.015
    attach_close: float = 0.5
    release_close: float = 0.3
    min_contacts: int = 2
    wrist_floor: float = 0.12           # minimum wrist height above the counter
    bind_radius: float = 0.03           # prefer movable objects within this distance
    residual: ResidualScale = field(default_factory=ResidualScale)

    def __post_init__(self):
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must lie in [0, 1)")
        if self.dt <= 0 or self.contact_distance <= 0:
            raise ValueError("dt and contact distance must be positive")


@dataclass(eq=False)
class SimState:
    q: Array                    # (B, 22)
    qd: Array                   # (B, 22)
    a_smooth: Array             # (B, 6 + arity) smoothed raw action
    t: np.ndarray               # (B,)
    rest_pos: Array             # (B, O, 3)
    rest_rot: Array             # (B, O, 3, 3)
    art: Array                  # (B, O)
    art_open: Array             # (B, O)
    pos: Array                  # (B, O, 3)
    rot: Array                  # (B, O, 3, 3)
    attached: np.ndarray        # (B,) object index or -1
    rel_pos: Array              # (B, 3) object origin in the wrist frame
    rel_rot: Array              # (B, 3, 3)
    grasp_rest: Array           # (B, 3) grasp point on an articulated part, rest configuration
    kp_obj: np.ndarray          # (B, K)
    kp_local: Array             # (B, K, 3)
    kp_side: Array              # (B, K)
    keypoints: Array            # (B, K, 3)
    n_contact: np.ndarray       # (B,)
    gain: Array                 # (B,)
    success_point: Array        # (B, 3)
    rest_gap: Array             # (B, O) height above the settled pose
    swing_trend: np.ndarray     # (B,) int8
    swing_ext: Array
    swing_hi: Array
    swings: np.ndarray          # (B,) int32
    wipe_length: Array          # (B,)
    prev_xy: Array              # (B, 2)

    @property
    def B(self) -> int:
        return self.q.shape[0]

    def copy(self) -> SimState:
        return SimState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def select(self, idx) -> SimState:
        return SimState(**{f.name: getattr(self, f.name)[idx].copy() for f in fields(self)})

    def assign(self, idx, other: SimState) -> None:
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)

    @property
    def wrist_pose(self) -> Array:
        return self.q[:, :N_WRIST]


def concat_states(states: list[SimState]) -> SimState:
    return SimState(**{f.name: np.concatenate([getattr(s, f.name) for s in states])
                       for f in fields(SimState)})


class Simulator:
    """Stateless stepping rules for one task; states are passed explicitly."""

    def __init__(self, spec: TaskSpec, config: SimConfig | None = None,
                 hand: HandModel | None = None):
        self.spec = spec
        self.config = config or SimConfig()
        self.hand = hand or HandModel()
        self.layout = StaticLayout.from_spec(spec)
        self.coupling = self.hand.coupling
        self.lower = self.hand.lower
        self.upper = self.hand.upper
        self.rate = self.hand.rate_limits(self.config.dt)
        self.default_euler = np.asarray(spec.wrist_euler, dtype=np.float64)
        sp = spec.success_params
        self.success_obj = spec.object_index(sp["object"]) if "object" in sp else 0
        anchor = sp.get("anchor")
        obj = spec.objects[self.success_obj]
        self.success_local = np.asarray(obj.anchors[anchor] if anchor else (0.0, 0.0, 0.0))
        self.swing_threshold = float(sp.get("height", 0.05))
        self.wipe_band = float(sp.get("band", 0.03))

    # -- construction -------------------------------------------------------

    def initial_state(self, scenes: list[Scene], gain=None) -> SimState:
        spec = self.spec
        B, O, K = len(scenes), len(spec.objects), spec.k
        q = np.zeros((B, N_JOINTS))
        for b, sc in enumerate(scenes):
            q[b, :3] = sc.hand_position
            q[b, 3:6] = sc.hand_euler
        q[:, N_WRIST:] = self.hand.open_joints()
        rest_pos = np.stack([sc.rest_pos for sc in scenes])
        rest_rot = np.stack([sc.rest_rot for sc in scenes])
        art = np.stack([sc.articulation for sc in scenes])
        idx = np.array([spec.object_index(o) for _, o, _ in spec.keypoints])
        local = np.array([spec.objects[i].anchors[a] for i, (_, _, a) in zip(idx, spec.keypoints)])
        side = np.array([spec.objects[i].anchor_sides.get(a, 0)
                         for i, (_, _, a) in zip(idx, spec.keypoints)], dtype=np.float64)
        s = SimState(
            q=q, qd=np.zeros_like(q), a_smooth=np.zeros((B, spec.action_dim)),
            t=np.zeros(B, dtype=np.int64), rest_pos=rest_pos, rest_rot=rest_rot, art=art,
            art_open=art.copy(), pos=rest_pos.copy(), rot=rest_rot.copy(),
            attached=np.full(B, -1, dtype=np.int64), rel_pos=np.zeros((B, 3)),
            rel_rot=np.tile(np.eye(3), (B, 1, 1)), grasp_rest=np.zeros((B, 3)),
            kp_obj=np.tile(idx, (B, 1)), kp_local=np.tile(local, (B, 1, 1)),
            kp_side=np.tile(side, (B, 1)), keypoints=np.zeros((B, K, 3)),
            n_contact=np.zeros(B, dtype=np.int64),
            gain=np.ones(B) if gain is None else np.asarray(gain, dtype=np.float64).copy(),
            success_point=np.zeros((B, 3)), rest_gap=np.zeros((B, O)),
            swing_trend=np.zeros(B, dtype=np.int8), swing_ext=np.zeros(B),
            swing_hi=np.zeros(B), swings=np.zeros(B, dtype=np.int32), wipe_length=np.zeros(B),
            prev_xy=np.zeros((B, 2)),
        )
        self._refresh(s)
        s.swing_ext[:] = s.success_point[:, 2]
        s.swing_hi[:] = s.success_point[:, 2]
        s.prev_xy[:] = s.pos[:, self.success_obj, :2]
        s.n_contact[:] = self._contacts(s)[0]
        return s

    def bind_keypoints(self, state: SimState, detected) -> None:
        """Attach detected keypoints (B, K, 3) to the nearest object, in place.

        Movable objects within ``bind_radius`` win over static ones so a
        handle point on a cabinet face binds to the drawer.
        """
        lay = self.layout
        x = np.asarray(detected, dtype=np.float64)
        B, K, _ = x.shape
        d = signed_distances(x, state.pos, state.rot, lay.shapes, lay.dims)      # (B, K, O)
        movable = ~lay.static
        d_mov = np.where(movable[None, None], d, np.inf)
        best_mov = d_mov.argmin(-1)
        best_all = d.argmin(-1)
        near = np.take_along_axis(d_mov, best_mov[..., None], -1)[..., 0] <= self.config.bind_radius
        obj = np.where(near, best_mov, best_all)
        # Grip halves: take the side of the nearest true anchor on that object.
        side = np.zeros((B, K))
        for i, o in enumerate(self.spec.objects):
            if not o.anchor_sides:
                continue
            names = list(o.anchor_sides)
            loc = np.array([o.anchors[n] for n in names])
            sides = np.array([o.anchor_sides[n] for n in names], dtype=np.float64)
            true = anchor_world(lay, state.pos, state.rot, state.art, np.full(len(names), i),
                                np.broadcast_to(loc, (B,) + loc.shape).copy(),
                                np.broadcast_to(sides, (B, len(names))).copy())
            near_anchor = np.linalg.norm(x[:, :, None] - true[:, None], axis=-1).argmin(-1)
            side = np.where(obj == i, sides[near_anchor], side)
        rows = np.arange(B)[:, None]
        p = state.pos[rows, obj]
        R = state.rot[rows, obj]
        local = np.einsum("bkji,bkj->bki", R, x - p)
        grip = lay.kind[obj] == _GRIP
        ang = np.where(grip, -side * state.art[rows, obj] / 2.0, 0.0)
        local = np.einsum("bkij,bkj->bki", rot_z(ang), local)
        state.kp_obj[:] = obj
        state.kp_local[:] = local
        state.kp_side[:] = np.where(grip, side, 0.0)
        self._refresh(state)

    # -- stepping -----------------------------------------------------------

    def joint_targets(self, state: SimState, plan_wrist) -> Array:
        a = state.a_smooth
        pos, euler, fingers = compose(ResidualAction(a[:, :6], a[:, 6:]), plan_wrist,
                                      self.config.residual, self.coupling, self.default_euler)
        pos = clamp_table(pos, 0.0, self.config.wrist_floor)
        target = np.concatenate([pos, euler, fingers], axis=-1)
        return np.clip(target, self.lower, self.upper)

    def step(self, state: SimState, action, plan_wrist):
        """Functional step: returns ``(state', n_contact, keypoints)``."""
        s = state.copy()
        self.step_inplace(s, action, plan_wrist)
        return s, s.n_contact.copy(), s.keypoints.copy()

    def step_inplace(self, s: SimState, action, plan_wrist) -> None:
        cfg, lay = self.config, self.layout
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if not np.all(np.isfinite(a)):
            raise ValueError("action must be finite")
        g = cfg.smoothing
        s.a_smooth[:] = g * s.a_smooth + (1.0 - g) * a
        target = self.joint_targets(s, np.asarray(plan_wrist, dtype=np.float64))
        delta = target - s.q
        delta[:, 3:6] = wrap_angle(delta[:, 3:6])
        step = np.clip(s.gain[:, None] * delta, -self.rate, self.rate)
        # Unclipped unit-gain steps land on the target exactly (no round-off drift).
        exact = (s.gain[:, None] == 1.0) & (np.abs(delta) <= self.rate)
        q_new = np.where(exact, target, s.q + step)
        q_new[:, 3:6] = wrap_angle(q_new[:, 3:6])
        q_new = np.clip(q_new, self.lower, self.upper)
        s.qd[:] = (q_new - s.q) / cfg.dt
        s.q[:] = q_new

        self._move_attached(s)
        self._refresh(s)
        n_contact, per_obj = self._contacts(s)
        close = np.clip(s.a_smooth[:, 6:], 0.0, 1.0).mean(-1)

        rows = np.arange(s.B)
        att = s.attached >= 0
        held = per_obj[rows, np.maximum(s.attached, 0)]
        release = att & ((close <= cfg.release_close) | (held < cfg.min_contacts))
        s.attached[release] = -1

        cand = np.where(lay.graspable[None], per_obj, -1)
        best = cand.argmax(-1)
        grab = (s.attached < 0) & ~release & (close > cfg.attach_close) & (
            cand[rows, best] >= cfg.min_contacts)
        if grab.any():
            b = np.flatnonzero(grab)
            Rw = euler_to_matrix(s.q[b, 3:6])
            o = best[b]
            s.attached[b] = o
            s.rel_pos[b] = np.einsum("bji,bj->bi", Rw, s.pos[b, o] - s.q[b, :3])
            s.rel_rot[b] = np.einsum("bji,bjk->bik", Rw, s.rot[b, o])
            local = np.einsum("bji,bj->bi", s.rot[b, o], s.q[b, :3] - s.pos[b, o])
            s.grasp_rest[b] = s.rest_pos[b, o] + np.einsum("bij,bj->bi", s.rest_rot[b, o], local)

        self._settle(s)
        self._refresh(s)
        s.n_contact[:] = n_contact
        s.t += 1
        self._track_success(s)

    # -- internals ----------------------------------------------------------

    def _move_attached(self, s: SimState) -> None:
        lay = self.layout
        b = np.flatnonzero(s.attached >= 0)
        if not len(b):
            return
        o = s.attached[b]
        Rw = euler_to_matrix(s.q[b, 3:6])
        dpos = s.q[b, :3] + np.einsum("bij,bj->bi", Rw, s.rel_pos[b])
        drot = Rw @ s.rel_rot[b]
        kind = lay.kind[o]

        body = (kind == 0) | (kind == _GRIP)
        if body.any():
            bb, oo = b[body], o[body]
            p = dpos[body].copy()
            floor = support_height(lay, s.pos[bb], s.rot[bb], p[:, None, :2])
            floor = floor[:, 0] + lay.half_height[oo]
            p[:, 2] = np.maximum(p[:, 2], floor)
            s.rest_pos[bb, oo] = p
            s.rest_rot[bb, oo] = drot[body]
            grip = kind[body] == _GRIP
            if grip.any():
                gb, go = bb[grip], oo[grip]
                closure = (s.q[gb, N_WRIST:] - self.hand.finger_lower).mean(-1) / (
                    self.hand.finger_upper - self.hand.finger_lower)
                kappa = np.clip((closure - 0.5) / 0.5, 0.0, 1.0)
                s.art[gb, go] = np.minimum(s.art[gb, go], s.art_open[gb, go] * (1.0 - kappa))

        pri = kind == 1
        if pri.any():
            bb, oo = b[pri], o[pri]
            ax = np.einsum("bij,bj->bi", s.rest_rot[bb, oo], lay.axis[oo])
            disp = np.einsum("bi,bi->b", s.q[bb, :3] - s.grasp_rest[bb], ax)
            s.art[bb, oo] = np.clip(disp, lay.lo[oo], lay.hi[oo])

        rev = kind == 2
        if rev.any():
            bb, oo = b[rev], o[rev]
            R0 = s.rest_rot[bb, oo]
            ax = np.einsum("bij,bj->bi", R0, lay.axis[oo])
            piv = s.rest_pos[bb, oo] + np.einsum("bij,bj->bi", R0, lay.pivot[oo])
            v0 = s.grasp_rest[bb] - piv
            v1 = s.q[bb, :3] - piv
            v0 -= np.einsum("bi,bi->b", v0, ax)[:, None] * ax
            v1 -= np.einsum("bi,bi->b", v1, ax)[:, None] * ax
            ang = np.arctan2(np.einsum("bi,bi->b", ax, np.cross(v0, v1)),
                             np.einsum("bi,bi->b", v0, v1))
            s.art[bb, oo] = np.clip(ang, lay.lo[oo], lay.hi[oo])

    def _settle(self, s: SimState) -> None:
        """Drop released free (and grip) objects onto the surface below them."""
        lay = self.layout
        loose = (lay.free | (lay.kind == _GRIP))[None] & (
            np.arange(len(lay.free))[None] != s.attached[:, None])
        if not loose.any():
            return
        floor = support_height(lay, s.pos, s.rot, s.rest_pos[..., :2]) + lay.half_height
        # Supports themselves never move; their own footprint would lift them.
        floor = np.where(lay.support[None], s.rest_pos[..., 2], floor)
        z = np.where(loose, floor, s.rest_pos[..., 2])
        s.rest_pos[..., 2] = z
        R = s.rest_rot
        yaw = np.arctan2(R[..., 1, 0], R[..., 0, 0])
        tilted = loose & (np.abs(R[..., 2, 2] - 1.0) > 1e-12)
        if tilted.any():
            s.rest_rot[tilted] = rot_z(yaw[tilted])

    def _refresh(self, s: SimState) -> None:
        lay = self.layout
        Rw = euler_to_matrix(s.q[:, 3:6])
        pos, rot = object_poses(lay, s.rest_pos, s.rest_rot, s.art, s.q[:, :3], Rw)
        s.pos[:] = pos
        s.rot[:] = rot
        s.keypoints[:] = anchor_world(lay, pos, rot, s.art, s.kp_obj, s.kp_local, s.kp_side)
        o = self.success_obj
        local = np.broadcast_to(self.success_local, (s.B, 1, 3)).copy()
        s.success_point[:] = anchor_world(lay, pos, rot, s.art, np.array([o]), local,
                                          np.zeros((s.B, 1)))[:, 0]
        floor = support_height(lay, pos, rot, pos[..., :2]) + lay.half_height
        s.rest_gap[:] = pos[..., 2] - floor

    def _contacts(self, s: SimState):
        lay = self.layout
        tips, _ = self.hand.fingertips(s.q)
        d = signed_distances(tips, s.pos, s.rot, lay.shapes, lay.dims)
        touch = d <= self.config.contact_distance
        n_contact = (touch & lay.touchable[None, None]).any(-1).sum(-1)
        per_obj = touch.sum(1)
        return n_contact, per_obj

    def _track_success(self, s: SimState) -> None:
        z = np.ascontiguousarray(s.success_point[:, 2])
        zigzag_update(z, s.swing_trend, s.swing_ext, s.swing_hi, s.swings, self.swing_threshold)
        xy = s.pos[:, self.success_obj, :2]
        on = s.rest_gap[:, self.success_obj] <= self.wipe_band
        s.wipe_length += np.where(on, np.linalg.norm(xy - s.prev_xy, axis=-1), 0.0)
        s.prev_xy[:] = xy

    def fingertip_positions(self, s: SimState) -> Array:
        return self.hand.fingertips(s.q)[0]

    def smoothed_action22(self, s: SimState) -> Array:
        """Observation view of the smoothed action: scaled wrist residual + finger targets."""
        from ..rl.observation import smoothed_action22
        return smoothed_action22(s.a_smooth, self.hand, self.config.residual)


def success_flags(spec: TaskSpec, sim: Simulator, s: SimState, max_error=None) -> np.ndarray:
    """Task predicate on the current (final) state of every env."""
    sp = spec.success_params
    kind = spec.success
    o = sim.success_obj
    if kind == "pick_place":
        tgt = spec.object_index(sp["target"])
        near = np.linalg.norm(s.pos[:, o, :2] - s.pos[:, tgt, :2], axis=-1) <= sp["radius"]
        return near & (s.rest_gap[:, o] <= sp["rest_tolerance"])
    if kind == "articulation_min":
        return s.art[:, o] >= sp["min"]
    if kind == "articulation_max":
        return s.art[:, o] < sp["max"]
    if kind == "swings":
        return s.swings >= sp["count"]
    if kind == "wipe":
        return s.wipe_length >= sp["length"]
    if kind == "max_error":
        if max_error is None:
            raise ValueError("max_error predicate needs the episode's worst tracking error")
        return np.asarray(max_error) <= sp["max"]
    raise ValueError(f"unknown success predicate {kind!r}")


__all__ = ["SimConfig", "SimState", "Simulator", "concat_states", "success_flags",
           "N_FINGER_JOINTS"]
