"""Floating hand: 6 wrist dummy joints plus four 4-joint planar fingers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..control import FingerCoupling
from ..geometry import Array, euler_to_matrix

N_WRIST = 6
N_FINGERS = 4
JOINTS_PER_FINGER = 4
N_FINGER_JOINTS = N_FINGERS * JOINTS_PER_FINGER
N_JOINTS = N_WRIST + N_FINGER_JOINTS


def _quat_from_matrix(R: Array) -> Array:
    """(..., 3, 3) -> (..., 4) quaternions (w, x, y, z) with w >= 0."""
    w = np.sqrt(np.maximum(1.0 + R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2], 0.0)) / 2.0
    x = np.sqrt(np.maximum(1.0 + R[..., 0, 0] - R[..., 1, 1] - R[..., 2, 2], 0.0)) / 2.0
    y = np.sqrt(np.maximum(1.0 - R[..., 0, 0] + R[..., 1, 1] - R[..., 2, 2], 0.0)) / 2.0
    z = np.sqrt(np.maximum(1.0 - R[..., 0, 0] - R[..., 1, 1] + R[..., 2, 2], 0.0)) / 2.0
    x = np.copysign(x, R[..., 2, 1] - R[..., 1, 2])
    y = np.copysign(y, R[..., 0, 2] - R[..., 2, 0])
    z = np.copysign(z, R[..., 1, 0] - R[..., 0, 1])
    return np.stack([w, x, y, z], axis=-1)


@dataclass(frozen=True)
class HandModel:
    """Kinematic hand description.

    Fingers hang below the palm (wrist frame -z).  Each finger bends in the
    vertical plane through its base; positive joint angles curl the tip
    towards the palm axis.  Angles are measured from straight down.
    """

    base_radius: float = 0.035
    base_drop: float = 0.02
    base_angles: Array = field(default_factory=lambda: np.deg2rad([45.0, 135.0, 225.0, 315.0]))
    links: Array = field(default_factory=lambda: np.array([0.045, 0.035, 0.025, 0.02]))
    splay: float = -0.35
    finger_lower: float = 0.0
    finger_upper: float = 0.28
    wrist_lower: Array = field(default_factory=lambda: np.array([-1.0, -1.0, -0.3, -np.pi, -np.pi, -np.pi]))
    wrist_upper: Array = field(default_factory=lambda: np.array([1.5, 1.0, 1.2, np.pi, np.pi, np.pi]))
    wrist_rate: tuple[float, float] = (1.5, 3.0)   # m/s, rad/s
    finger_rate: float = 6.0                       # rad/s

    @property
    def lower(self) -> Array:
        return np.concatenate([self.wrist_lower, np.full(N_FINGER_JOINTS, self.finger_lower)])

    @property
    def upper(self) -> Array:
        return np.concatenate([self.wrist_upper, np.full(N_FINGER_JOINTS, self.finger_upper)])

    def rate_limits(self, dt: float) -> Array:
        lin, ang = self.wrist_rate
        return np.concatenate([np.full(3, lin * dt), np.full(3, ang * dt),
                               np.full(N_FINGER_JOINTS, self.finger_rate * dt)])

    @property
    def coupling(self) -> FingerCoupling:
        return FingerCoupling(np.full(N_FINGER_JOINTS, self.finger_lower),
                              np.full(N_FINGER_JOINTS, self.finger_upper),
                              np.repeat(np.arange(N_FINGERS), JOINTS_PER_FINGER))

    def open_joints(self) -> Array:
        return np.full(N_FINGER_JOINTS, self.finger_lower)

    def fingertips_local(self, finger_q) -> tuple[Array, Array]:
        """Fingertip positions (..., 4, 3) and tip rotations (..., 4, 3, 3) in the wrist frame."""
        q = np.asarray(finger_q, dtype=np.float64).reshape(
            np.shape(finger_q)[:-1] + (N_FINGERS, JOINTS_PER_FINGER))
        cum = self.splay + np.cumsum(q, axis=-1)                        # (..., 4, 4)
        radial_out = self.base_radius - np.sum(self.links * np.sin(cum), axis=-1)
        down = self.base_drop + np.sum(self.links * np.cos(cum), axis=-1)
        ca, sa = np.cos(self.base_angles), np.sin(self.base_angles)
        pos = np.stack([radial_out * ca, radial_out * sa, -down], axis=-1)
        tip_angle = cum[..., -1]
        # Tip frame: rotate about the tangential axis (-sin a, cos a, 0) by the curl.
        ax = np.stack([-sa, ca, np.zeros_like(ca)], axis=-1)
        c, s = np.cos(tip_angle), np.sin(tip_angle)
        C = 1.0 - c
        x, y, z = ax[..., 0], ax[..., 1], ax[..., 2]
        R = np.empty(tip_angle.shape + (3, 3))
        R[..., 0, 0] = c + x * x * C
        R[..., 0, 1] = x * y * C - z * s
        R[..., 0, 2] = x * z * C + y * s
        R[..., 1, 0] = y * x * C + z * s
        R[..., 1, 1] = c + y * y * C
        R[..., 1, 2] = y * z * C - x * s
        R[..., 2, 0] = z * x * C - y * s
        R[..., 2, 1] = z * y * C + x * s
        R[..., 2, 2] = c + z * z * C
        return pos, R

    def fingertips(self, q) -> tuple[Array, Array]:
        """World fingertip positions (..., 4, 3) and quaternions (..., 4, 4) from full joints."""
        q = np.asarray(q, dtype=np.float64)
        Rw = euler_to_matrix(q[..., 3:6])
        pos_l, R_l = self.fingertips_local(q[..., N_WRIST:])
        pos = np.einsum("...ij,...fj->...fi", Rw, pos_l) + q[..., None, 0:3]
        R = np.einsum("...ij,...fjk->...fik", Rw, R_l)
        return pos, _quat_from_matrix(R)

    def finger_poses(self, q) -> Array:
        """Observation block: (..., 28) fingertip position + quaternion per finger."""
        pos, quat = self.fingertips(q)
        return np.concatenate([pos, quat], axis=-1).reshape(pos.shape[:-2] + (28,))
