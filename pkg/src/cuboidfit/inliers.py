"""Occlusion-aware soft inlier scoring.

A point can be an inlier to a cuboid side (score > 0), occluded by a side it
is not an inlier to (score < 0), or a plain outlier (score 0). The per-scene
inlier count sums the fused per-point scores and is the quantity hypothesis
selection maximizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .geometry import (
    CameraModel,
    Cuboid,
    Face,
    _face_sq_distances_local,
    _occlusion_masks_local,
    to_cuboid_frame,
)
from .scene import Scene


@dataclass(frozen=True)
class InlierParams:
    """tau: squared-distance threshold (m^2); beta: sigmoid softness."""

    tau: float = 0.004
    beta: float = 100.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def _soft_inlier_from_sq(d2: np.ndarray, params: InlierParams) -> np.ndarray:
    return 1.0 - expit(params.beta * (d2 / params.tau - 1.0))


def soft_inlier(point, cuboid: Cuboid, face: Face | int, params: InlierParams):
    """f_I in [0, 1]: sigmoid-relaxed membership by squared face distance."""
    local = to_cuboid_frame(point, cuboid)
    d2 = _face_sq_distances_local(local, cuboid.half_extents)[..., int(face) - 1]
    out = _soft_inlier_from_sq(d2, params)
    return float(out) if np.ndim(point) == 1 else out


def face_io_scores(
    cuboid: Cuboid,
    points,
    camera: CameraModel,
    params: InlierParams,
    occlusion_aware: bool = True,
) -> np.ndarray:
    """All six per-face fused scores f_I - chi_o * (1 - f_I), shape (..., 6)."""
    local = to_cuboid_frame(points, cuboid)
    f_i = _soft_inlier_from_sq(_face_sq_distances_local(local, cuboid.half_extents), params)
    if not occlusion_aware:
        return f_i
    cam_local = to_cuboid_frame(camera.center, cuboid)
    chi = _occlusion_masks_local(local, cuboid.half_extents, cam_local)
    return f_i - chi * (1.0 - f_i)


def f_io(point, cuboid: Cuboid, face: Face | int, camera: CameraModel, params: InlierParams):
    """Fused inlier/occlusion score for one side, in [-1, 1]."""
    scores = face_io_scores(cuboid, point, camera, params)[..., int(face) - 1]
    return float(scores) if np.ndim(point) == 1 else scores


def io_extrema(cuboid, points, camera, params, occlusion_aware=True):
    """Per-point min and max of f_IO over the six sides of one cuboid."""
    scores = face_io_scores(cuboid, points, camera, params, occlusion_aware)
    return scores.min(axis=-1), scores.max(axis=-1)


def _fuse(min_io: np.ndarray, max_io: np.ndarray) -> np.ndarray:
    return np.where(min_io < 0.0, min_io, max_io)


def f_oai(point, cuboids, camera: CameraModel, params: InlierParams, occlusion_aware: bool = True):
    """Occlusion-aware inlier score against a set of cuboids, in [-1, 1].

    The minimum over all sides wins when any side marks the point occluded;
    otherwise the point scores as an inlier to its best side.
    """
    cuboids = list(cuboids)
    if not cuboids:
        raise ValueError("no primitives")
    p = np.asarray(point, dtype=float)
    min_io = np.full(p.shape[:-1], np.inf)
    max_io = np.full(p.shape[:-1], -np.inf)
    for cuboid in cuboids:
        lo, hi = io_extrema(cuboid, p, camera, params, occlusion_aware)
        min_io = np.minimum(min_io, lo)
        max_io = np.maximum(max_io, hi)
    out = _fuse(min_io, max_io)
    return float(out) if p.ndim == 1 else out


def ordered_sum(values: np.ndarray, point_ids: np.ndarray) -> float:
    """Sum values in canonical point-id order with numpy's pairwise reduction.

    Keying the fixed reduction tree by point id makes the result bit-identical
    under permutations of the point list.
    """
    order = np.argsort(point_ids, kind="stable")
    return float(np.sum(np.ascontiguousarray(values[order])))


def inlier_count(
    scene: Scene,
    cuboids,
    camera: CameraModel,
    params: InlierParams,
    occlusion_aware: bool = True,
) -> float:
    """I_c: sum of f_OAI over the scene; occluded points count negatively."""
    if len(scene) == 0:
        raise ValueError("scene has no valid points")
    scores = f_oai(scene.points, cuboids, camera, params, occlusion_aware)
    return ordered_sum(scores, scene.point_ids)
