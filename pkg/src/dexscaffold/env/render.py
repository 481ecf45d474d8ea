"""Flat-shaded ray-cast RGB-D snapshots of a scene."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from ..geometry import Array, CameraModel, camera_rays, look_at, project_points
from ..kernels import BOX, CYLINDER, SPHERE
from .scene import Scene

COUNTER_EXTENT = ((-0.6, 1.6), (-1.2, 1.2))
COUNTER_RGB = (170, 170, 165)
BACKGROUND_RGB = (235, 240, 250)
PALETTE = np.array([
    (200, 40, 40), (150, 100, 50), (60, 120, 200), (230, 200, 60), (90, 170, 80),
    (160, 80, 170), (240, 140, 40), (40, 170, 170), (120, 120, 120), (200, 120, 150),
], dtype=np.uint8)
MARKER_PALETTE = np.array([(255, 0, 255), (0, 255, 255), (255, 255, 0), (0, 0, 0)], dtype=np.uint8)


def default_camera(width: int = 800, height: int = 800) -> CameraModel:
    return CameraModel.from_fov(width, height, 60.0,
                                look_at((-0.35, 0.0, 0.95), (0.55, 0.0, 0.15)))


def _ray_sphere(o, d, r):
    b = np.einsum("...i,...i->...", o, d)
    a = np.einsum("...i,...i->...", d, d)
    c = np.einsum("...i,...i->...", o, o) - r * r
    disc = b * b - a * c
    t = (-b - np.sqrt(np.maximum(disc, 0.0))) / a
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _ray_box(o, d, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    return np.where((tmax >= tmin) & (tmin > 0), tmin, np.inf)


def _ray_cylinder(o, d, r, h):
    a = d[..., 0] ** 2 + d[..., 1] ** 2
    b = o[..., 0] * d[..., 0] + o[..., 1] * d[..., 1]
    c = o[..., 0] ** 2 + o[..., 1] ** 2 - r * r
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        ts = (-b - np.sqrt(np.maximum(disc, 0.0))) / a
    zs = o[..., 2] + ts * d[..., 2]
    side = np.where((disc >= 0) & (ts > 0) & (np.abs(zs) <= h / 2), ts, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = (np.sign(o[..., 2]) * h / 2 - o[..., 2]) / d[..., 2]
    pc = o + tc[..., None] * d
    cap = np.where((tc > 0) & (pc[..., 0] ** 2 + pc[..., 1] ** 2 <= r * r), tc, np.inf)
    return np.minimum(side, cap)


@dataclass(eq=False)
class Snapshot:
    rgb: np.ndarray             # (H, W, 3) uint8
    camera: CameraModel         # carries the depth map
    object_ids: np.ndarray      # (H, W) int, -1 counter, -2 background

    def png(self) -> bytes:
        from PIL import Image
        buf = io.BytesIO()
        Image.fromarray(self.rgb).save(buf, format="PNG")
        return buf.getvalue()


def render(scene: Scene, camera: CameraModel | None = None, markers: bool = True) -> Snapshot:
    """Ray-cast the scene; depth is camera-z in metres, 0 where nothing is hit."""
    cam = camera or default_camera()
    origin, dirs = camera_rays(cam)
    H, W = cam.height, cam.width
    best = np.full((H, W), np.inf)
    ids = np.full((H, W), -2, dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = -origin[2] / dirs[..., 2]
    hit = origin + t_plane[..., None] * dirs
    (x0, x1), (y0, y1) = COUNTER_EXTENT
    on = (t_plane > 0) & (hit[..., 0] >= x0) & (hit[..., 0] <= x1) & (hit[..., 1] >= y0) & (
        hit[..., 1] <= y1)
    best = np.where(on, t_plane, best)
    ids[on] = -1

    lay = scene.layout
    pos, rot = scene.poses()
    for i in range(len(scene.task.objects)):
        o_local = (origin - pos[i]) @ rot[i]
        d_local = dirs @ rot[i]
        dims = lay.dims[i]
        code = lay.shapes[i]
        if code == SPHERE:
            t = _ray_sphere(np.broadcast_to(o_local, d_local.shape), d_local, dims[0])
        elif code == BOX:
            t = _ray_box(np.broadcast_to(o_local, d_local.shape), d_local, dims / 2)
        elif code == CYLINDER:
            t = _ray_cylinder(np.broadcast_to(o_local, d_local.shape), d_local, dims[0], dims[2])
        else:
            raise ValueError(f"unknown shape code {code}")
        closer = t < best
        best = np.where(closer, t, best)
        ids[closer] = i

    depth = np.where(np.isfinite(best), best, 0.0)     # rays have unit camera-z
    rgb = np.empty((H, W, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND_RGB
    rgb[ids == -1] = COUNTER_RGB
    for i in range(len(scene.task.objects)):
        rgb[ids == i] = PALETTE[i % len(PALETTE)]
    # Cheap shading so surfaces read as 3D: darken with distance.
    shade = np.clip(1.15 - 0.25 * depth, 0.6, 1.0)[..., None]
    rgb = np.where((ids >= -1)[..., None], (rgb * shade).astype(np.uint8), rgb)

    if markers:
        try:
            uv, _ = project_points(scene.keypoints(), cam)
        except ValueError:
            uv = np.empty((0, 2))
        vv, uu = np.mgrid[0:H, 0:W]
        radius = max(2.0, 0.006 * W)
        for j, (u, v) in enumerate(uv):
            disc = (uu - u) ** 2 + (vv - v) ** 2 <= radius ** 2
            rgb[disc] = MARKER_PALETTE[j % len(MARKER_PALETTE)]
    return Snapshot(rgb, cam.with_depth(depth), ids)


def pixel_of(point, camera: CameraModel) -> Array:
    uv, _ = project_points(np.asarray(point, dtype=np.float64)[None], camera)
    return uv[0]
