"""Residual action composition, table clamping and damped least-squares IK."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Array, euler_to_matrix, matrix_to_euler, rotation_log


@dataclass(frozen=True)
class ResidualScale:
    """Physical size of a unit residual."""

    translation: float = 0.05   # m
    rotation: float = 0.2       # rad

    def __post_init__(self):
        if self.translation <= 0 or self.rotation <= 0:
            raise ValueError("residual scales must be positive")


@dataclass(frozen=True)
class FingerCoupling:
    """Maps a 1- or 4-dim finger command onto 16 joint targets.

    ``group[j]`` is the finger owning joint ``j``.  A command of 0 or below
    means fully open; +1 means fully closed.
    """

    lower: Array
    upper: Array
    group: np.ndarray

    @property
    def n_joints(self) -> int:
        return len(self.lower)

    def targets(self, command) -> Array:
        c = np.clip(np.asarray(command, dtype=np.float64), 0.0, 1.0)
        if c.shape[-1] == 1:
            frac = np.broadcast_to(c, c.shape[:-1] + (self.n_joints,))
        else:
            frac = c[..., self.group]
        return self.lower + frac * (self.upper - self.lower)


@dataclass(frozen=True)
class ResidualAction:
    wrist: Array      # (..., 6) normalised
    fingers: Array    # (..., arity) normalised

    @classmethod
    def from_raw(cls, raw) -> ResidualAction:
        a = np.clip(np.asarray(raw, dtype=np.float64), -1.0, 1.0)
        return cls(a[..., :6], a[..., 6:])


def compose(residual: ResidualAction, plan_wrist, scale: ResidualScale,
            coupling: FingerCoupling, default_euler=(0.0, 0.0, 0.0)) -> tuple[Array, Array, Array]:
    """Absolute targets from a residual around the plan.

    Returns ``(wrist_position, wrist_euler, finger_joint_targets)``.  The
    rotational residual is applied about the task-default orientation.
    """
    dw = np.clip(residual.wrist, -1.0, 1.0)
    pos = np.asarray(plan_wrist, dtype=np.float64) + scale.translation * dw[..., :3]
    R = euler_to_matrix(np.asarray(default_euler, dtype=np.float64)) @ euler_to_matrix(
        scale.rotation * dw[..., 3:6])
    euler = matrix_to_euler(R)
    return pos, euler, coupling.targets(np.clip(residual.fingers, -1.0, 1.0))


def clamp_table(target_wrist, table_height: float, margin: float = 0.0) -> Array:
    """Keep the commanded wrist above the table."""
    w = np.array(target_wrist, dtype=np.float64)
    w[..., 2] = np.maximum(w[..., 2], table_height + margin)
    return w


# -- damped least squares ---------------------------------------------------

DAMPING = 0.5


def dls_step(J, e, damping: float = DAMPING) -> Array:
    """``J^T (J J^T + lambda^2 I)^-1 e``."""
    J = np.asarray(J, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    A = J @ J.T + damping**2 * np.eye(J.shape[0])
    return J.T @ np.linalg.solve(A, e)


def dls_condition(J, damping: float = DAMPING) -> float:
    J = np.asarray(J, dtype=np.float64)
    return float(np.linalg.cond(J @ J.T + damping**2 * np.eye(J.shape[0])))


def pose_error(current: Array, target: Array) -> Array:
    """6-D error twist between 4x4 poses: position error then axis-angle."""
    dp = target[:3, 3] - current[:3, 3]
    dr = rotation_log(target[:3, :3] @ current[:3, :3].T)
    return np.concatenate([dp, dr])


def _axis_rotation(axis: Array, angle: float) -> Array:
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass(frozen=True)
class ArmModel:
    """Serial revolute chain; defaults approximate a 7-DoF iiwa-style arm."""

    offsets: Array = field(default_factory=lambda: np.array([
        [0.0, 0.0, 0.34], [0.0, 0.0, 0.0], [0.0, 0.0, 0.40], [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.40], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    axes: Array = field(default_factory=lambda: np.array([
        [0, 0, 1], [0, 1, 0], [0, 0, 1], [0, -1, 0], [0, 0, 1], [0, 1, 0], [0, 0, 1]], dtype=float))
    tool: Array = field(default_factory=lambda: np.array([0.0, 0.0, 0.126]))
    lower: Array = field(default_factory=lambda: np.deg2rad([-170, -120, -170, -120, -170, -120, -175]))
    upper: Array = field(default_factory=lambda: np.deg2rad([170, 120, 170, 120, 170, 120, 175]))
    damping: float = DAMPING

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("damping must be positive")

    @property
    def dof(self) -> int:
        return len(self.axes)

    def _chain(self, theta):
        T = np.eye(4)
        origins, axes = [], []
        for off, ax, q in zip(self.offsets, self.axes, theta):
            T = T.copy()
            T[:3, 3] += T[:3, :3] @ off
            origins.append(T[:3, 3].copy())
            axes.append(T[:3, :3] @ ax)
            T[:3, :3] = T[:3, :3] @ _axis_rotation(ax, q)
        E = T.copy()
        E[:3, 3] += T[:3, :3] @ self.tool
        return E, np.array(origins), np.array(axes)

    def fk(self, theta) -> Array:
        return self._chain(np.asarray(theta, dtype=np.float64))[0]

    def jacobian(self, theta) -> Array:
        """Geometric Jacobian (linear velocity of the tool point, angular velocity)."""
        E, origins, axes = self._chain(np.asarray(theta, dtype=np.float64))
        J = np.empty((6, self.dof))
        J[:3] = np.cross(axes, E[:3, 3] - origins).T
        J[3:] = axes.T
        return J

    def clamp(self, theta) -> Array:
        return np.clip(theta, self.lower, self.upper)

    def ik_step(self, theta, target: Array) -> tuple[Array, Array]:
        """One DLS update towards a 4x4 ``target``; returns ``(theta_new, error_before)``."""
        theta = np.asarray(theta, dtype=np.float64)
        e = pose_error(self.fk(theta), target)
        dq = dls_step(self.jacobian(theta), e, self.damping)
        return self.clamp(theta + dq), e


def solve_ik(arm: ArmModel, theta0, target: Array, iterations: int = 200,
             tol: float = 1e-3) -> tuple[Array, float, int]:
    """Iterate DLS until the 6-D error norm drops below ``tol``."""
    theta = arm.clamp(np.asarray(theta0, dtype=np.float64))
    for i in range(iterations):
        e = pose_error(arm.fk(theta), target)
        err = float(np.linalg.norm(e))
        if err < tol:
            return theta, err, i
        theta = arm.clamp(theta + dls_step(arm.jacobian(theta), e, arm.damping))
    err = float(np.linalg.norm(pose_error(arm.fk(theta), target)))
    return theta, err, iterations
