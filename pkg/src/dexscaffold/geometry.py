"""Rigid transforms, the pinhole camera, and 2D -> 3D keypoint lifting.

Orientations are stored as extrinsic XYZ Euler angles (roll about world x,
then pitch about world y, then yaw about world z), i.e. ``R = Rz @ Ry @ Rx``.
Camera frames follow the OpenCV convention: +x right, +y down, +z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

Array = npt.NDArray[np.float64]


class MissingDepth(ValueError):
    """Depth at the queried pixel is zero (no return)."""


class BehindCamera(ValueError):
    """Point has non-positive depth in the camera frame."""


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    # np.mod maps +pi to -pi; the half-open interval keeps +pi.
    return np.where(w == -np.pi, np.pi, w)


def euler_to_matrix(euler) -> Array:
    """Rotation matrix from extrinsic XYZ Euler angles; broadcasts over leading dims."""
    e = np.asarray(euler, dtype=np.float64)
    r, p, y = e[..., 0], e[..., 1], e[..., 2]
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    R = np.empty(e.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def matrix_to_euler(R) -> Array:
    """Inverse of :func:`euler_to_matrix` (pitch in [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=np.float64)
    sp = np.clip(-R[..., 2, 0], -1.0, 1.0)
    pitch = np.arcsin(sp)
    cp = np.sqrt(R[..., 2, 1] ** 2 + R[..., 2, 2] ** 2)
    regular = cp > 1e-9
    roll = np.where(regular, np.arctan2(R[..., 2, 1], R[..., 2, 2]), 0.0)
    yaw = np.where(
        regular,
        np.arctan2(R[..., 1, 0], R[..., 0, 0]),
        np.arctan2(-R[..., 0, 1], R[..., 1, 1]),
    )
    return wrap_angle(np.stack([roll, pitch, yaw], axis=-1))


def rotation_log(R) -> Array:
    """Axis-angle vector (axis * angle) of a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    v = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    sin = np.sin(angle)
    small = sin < 1e-7
    scale = np.where(small, 0.5, angle / (2.0 * np.where(small, 1.0, sin)))
    out = v * scale[..., None]
    # Near pi the antisymmetric part vanishes; recover the axis from the diagonal.
    near_pi = small & (cos < 0.0)
    if np.any(near_pi):
        Rn = R[near_pi]
        axes = []
        for M in Rn:
            d = np.sqrt(np.maximum((np.diag(M) + 1.0) / 2.0, 0.0))
            i = int(np.argmax(d))
            a = np.empty(3)
            a[i] = d[i]
            for j in range(3):
                if j != i:
                    a[j] = (M[i, j] + M[j, i]) / (4.0 * d[i])
            axes.append(a * np.pi)
        out = out.copy()
        out[near_pi] = np.array(axes)
    return out


def rot_z(angle) -> Array:
    c, s = np.cos(angle), np.sin(angle)
    a = np.asarray(angle, dtype=np.float64)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1.0
    return R


@dataclass(frozen=True)
class Pose6:
    """Position (m) plus extrinsic XYZ Euler orientation (rad)."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError("pose position must be finite")
        o = wrap_angle(np.asarray(self.orientation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "position", tuple(float(v) for v in p))
        object.__setattr__(self, "orientation", tuple(float(v) for v in o))

    @classmethod
    def identity(cls) -> Pose6:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> Pose6:
        T = np.asarray(T, dtype=np.float64)
        return cls(tuple(T[:3, 3]), tuple(matrix_to_euler(T[:3, :3])))

    @property
    def rotation(self) -> Array:
        return euler_to_matrix(np.array(self.orientation))

    @property
    def translation(self) -> Array:
        return np.array(self.position)

    def matrix(self) -> Array:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def as_vector(self) -> Array:
        return np.concatenate([self.position, self.orientation])

    def apply(self, points) -> Array:
        """Map points expressed in this frame into the parent frame."""
        P = np.asarray(points, dtype=np.float64)
        return P @ self.rotation.T + self.translation


def compose(a: Pose6, b: Pose6) -> Pose6:
    """``a * b``: express ``b`` (given in frame ``a``) in a's parent frame."""
    Ra, Rb = a.rotation, b.rotation
    p = Ra @ b.translation + a.translation
    return Pose6(tuple(p), tuple(matrix_to_euler(Ra @ Rb)))


def invert(a: Pose6) -> Pose6:
    R = a.rotation
    return Pose6(tuple(-R.T @ a.translation), tuple(matrix_to_euler(R.T)))


def pose_distance(a: Pose6, b: Pose6) -> tuple[float, float]:
    """(translation error in m, rotation error in rad) between two poses."""
    dp = float(np.linalg.norm(a.translation - b.translation))
    dr = float(np.linalg.norm(rotation_log(a.rotation.T @ b.rotation)))
    return dp, dr


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose6:
    """Camera pose (OpenCV axes) at ``eye`` looking towards ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    return Pose6(tuple(eye), tuple(matrix_to_euler(R)))


@dataclass(frozen=True)
class NormalizedKeypoint2D:
    """A VLM point answer: ``[y, x]`` each in 0..1000."""

    y_norm: int
    x_norm: int
    name: str = ""

    def __post_init__(self):
        for v in (self.y_norm, self.x_norm):
            if not 0 <= v <= 1000:
                raise ValueError(f"normalized coordinate {v} outside [0, 1000]")


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Pose6 = field(default_factory=Pose6)
    depth: Array | None = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if self.depth is not None:
            d = np.asarray(self.depth, dtype=np.float64)
            if d.shape != (self.height, self.width):
                raise ValueError(f"depth map shape {d.shape} != {(self.height, self.width)}")
            if np.any(d < 0):
                raise ValueError("depth values must be >= 0")
            d.setflags(write=False)
            object.__setattr__(self, "depth", d)

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float, extrinsic: Pose6 | None = None,
                 depth=None) -> CameraModel:
        f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height,
                   extrinsic or Pose6(), depth)

    def with_depth(self, depth) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                           self.extrinsic, depth)

    @property
    def K(self) -> Array:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def denormalize(kp: NormalizedKeypoint2D, cam: CameraModel) -> tuple[float, float]:
    """Map a 0..1000 ``[y, x]`` keypoint to a pixel ``(u, v)`` inside the image."""
    u = kp.x_norm / 1000.0 * cam.width
    v = kp.y_norm / 1000.0 * cam.height
    return (min(max(u, 0.0), cam.width - 1.0), min(max(v, 0.0), cam.height - 1.0))


def normalize_pixel(u: float, v: float, cam: CameraModel) -> tuple[int, int]:
    """Inverse of :func:`denormalize` up to rounding: returns ``(y_norm, x_norm)``."""
    y = int(round(v / cam.height * 1000.0))
    x = int(round(u / cam.width * 1000.0))
    return min(max(y, 0), 1000), min(max(x, 0), 1000)


def sample_depth(cam: CameraModel, u, v):
    """Nearest-pixel depth lookup."""
    if cam.depth is None:
        raise MissingDepth("camera carries no depth map")
    iu = np.clip(np.floor(np.asarray(u, dtype=np.float64) + 0.5).astype(int), 0, cam.width - 1)
    iv = np.clip(np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(int), 0, cam.height - 1)
    return cam.depth[iv, iu]


def backproject_pixels(uv, cam: CameraModel, depth=None) -> Array:
    """Vectorised backprojection of ``(N, 2)`` pixels to world points.

    ``depth`` overrides the map lookup (one value per pixel).
    """
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    d = sample_depth(cam, uv[:, 0], uv[:, 1]) if depth is None else np.asarray(depth, dtype=np.float64)
    d = np.broadcast_to(d, uv.shape[:1])
    if np.any(d <= 0):
        raise MissingDepth(f"zero depth at pixel(s) {uv[d <= 0].tolist()}")
    pc = np.stack([(uv[:, 0] - cam.cx) * d / cam.fx, (uv[:, 1] - cam.cy) * d / cam.fy, d], axis=1)
    return cam.extrinsic.apply(pc)


def backproject(pixel, cam: CameraModel, depth: float | None = None) -> Array:
    return backproject_pixels(np.asarray(pixel, dtype=np.float64)[None], cam,
                              None if depth is None else np.array([depth]))[0]


def world_to_camera(points, cam: CameraModel) -> Array:
    R = cam.extrinsic.rotation
    P = np.asarray(points, dtype=np.float64)
    return (P - cam.extrinsic.translation) @ R


def project_points(points, cam: CameraModel) -> tuple[Array, Array]:
    """Project ``(N, 3)`` world points; returns ``(uv (N, 2), depth (N,))``."""
    pc = np.atleast_2d(world_to_camera(points, cam))
    z = pc[:, 2]
    if np.any(z <= 0):
        raise BehindCamera("point(s) behind the camera")
    uv = np.stack([cam.fx * pc[:, 0] / z + cam.cx, cam.fy * pc[:, 1] / z + cam.cy], axis=1)
    return uv, z


def project(point, cam: CameraModel) -> tuple[tuple[float, float], float]:
    uv, z = project_points(np.asarray(point, dtype=np.float64)[None], cam)
    return (float(uv[0, 0]), float(uv[0, 1])), float(z[0])


def camera_rays(cam: CameraModel) -> tuple[Array, Array]:
    """World-frame ray origin and per-pixel directions scaled so camera z == 1."""
    u, v = np.meshgrid(np.arange(cam.width, dtype=np.float64),
                       np.arange(cam.height, dtype=np.float64))
    dirs_c = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    return cam.extrinsic.translation, dirs_c @ cam.extrinsic.rotation.T
