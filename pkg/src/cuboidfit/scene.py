"""Scenes: 2.5D point clouds backed by depth rasters, plus a synthetic renderer.

A Scene holds the backprojected 3D points of the valid pixels of a depth map
(or a bare point list), together with the camera and, when raster-sourced,
the validity mask. Point ids are canonical indices (the linear pixel index
for raster scenes) and key the deterministic reduction order used by the
inlier count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, Cuboid, rotation_matrix


@dataclass(frozen=True)
class Scene:
    points: np.ndarray  # (N, 3), z > 0
    camera: CameraModel
    valid_mask: np.ndarray | None = None  # (H, W) bool when raster-sourced
    resolution: tuple[int, int] | None = None  # (H, W)
    point_ids: np.ndarray | None = None  # canonical indices, default arange

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("scene points must be finite")
        if pts.size and np.any(pts[:, 2] <= 0):
            raise ValueError("scene points must have positive depth")
        ids = self.point_ids
        ids = np.arange(len(pts), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        if ids.shape != (len(pts),):
            raise ValueError("point_ids must match the point count")
        if self.valid_mask is not None:
            mask = np.asarray(self.valid_mask, dtype=bool)
            if self.resolution is not None and mask.shape != tuple(self.resolution):
                raise ValueError("valid_mask shape does not match resolution")
            if int(mask.sum()) != len(pts):
                raise ValueError("valid_mask population does not match point count")
            mask.flags.writeable = False
            object.__setattr__(self, "valid_mask", mask)
        pts.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "point_ids", ids)

    def __len__(self) -> int:
        return len(self.points)


def backproject(depth: np.ndarray, camera: CameraModel) -> Scene:
    """Depth raster -> Scene; pixels with depth <= 0 or non-finite are invalid."""
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 2:
        raise ValueError(f"depth raster must be 2D, got shape {depth.shape}")
    H, W = depth.shape
    valid = np.isfinite(depth) & (depth > 0)
    v, u = np.nonzero(valid)
    z = depth[valid]
    x = (u - camera.cx) / camera.fx * z
    y = (v - camera.cy) / camera.fy * z
    points = np.column_stack([x, y, z])
    return Scene(
        points=points,
        camera=camera,
        valid_mask=valid,
        resolution=(H, W),
        point_ids=(v * W + u).astype(np.int64),
    )


def project(points: np.ndarray, camera: CameraModel) -> np.ndarray:
    """World points -> (u, v) pixel coordinates, shape (..., 2)."""
    p = np.asarray(points, dtype=float)
    u = p[..., 0] / p[..., 2] * camera.fx + camera.cx
    v = p[..., 1] / p[..., 2] * camera.fy + camera.cy
    return np.stack([u, v], axis=-1)


def render_synthetic(cuboids, camera: CameraModel, resolution: tuple[int, int]) -> np.ndarray:
    """Ray-cast a depth map of the cuboids; 0 marks pixels that miss everything.

    Slab intersection in each cuboid's frame; with the camera inside a box the
    exit face is what the camera sees.
    """
    cuboids = list(cuboids)
    if not cuboids:
        raise ValueError("no primitives")
    H, W = resolution
    u, v = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    dirs = np.stack(
        [(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)],
        axis=-1,
    ).reshape(-1, 3)
    origin = camera.center

    depth = np.full(dirs.shape[0], np.inf)
    for cuboid in cuboids:
        R = cuboid.matrix
        o = R @ (origin - cuboid.translation)
        d = dirs @ R.T
        a = cuboid.half_extents
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-a - o) / d
            t2 = (a - o) / d
        # A ray parallel to a slab intersects it iff the origin lies inside.
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        par = np.abs(d) < 1e-15
        inside = np.abs(o) <= a
        lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
        tmin = lo.max(axis=-1)
        tmax = hi.min(axis=-1)
        s = np.where(tmin > 1e-12, tmin, tmax)
        hit = (tmin <= tmax) & (s > 1e-12)
        z = origin[2] + s * dirs[:, 2]
        depth = np.where(hit & (z < depth), z, depth)
    depth = np.where(np.isfinite(depth), depth, 0.0)
    return depth.reshape(H, W)
