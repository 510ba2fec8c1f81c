"""Synthetic ground-truth scenes for regression tests and benchmarks.

Desk-scale scenes rendered at 64x48 keep full runs under a minute while
exercising the same geometry as room-scale data.
"""

from __future__ import annotations

import numpy as np

from .geometry import CameraModel, Cuboid, point_cuboid_distance
from .scene import Scene, backproject, render_synthetic

DEFAULT_RESOLUTION = (48, 64)  # (H, W)


def default_camera() -> CameraModel:
    H, W = DEFAULT_RESOLUTION
    return CameraModel(fx=64.0, fy=64.0, cx=(W - 1) / 2.0, cy=(H - 1) / 2.0)


def render_scene(cuboids, camera=None, resolution=DEFAULT_RESOLUTION) -> Scene:
    camera = camera or default_camera()
    return backproject(render_synthetic(cuboids, camera, resolution), camera)


def occlusion_demo(depth: float = 4.0, extent: float = 1.0, gap: float = 1e-3):
    """The flush-vs-occluding regression pair.

    The observed structure is a wall patch at z = depth. Cuboid A sits behind
    it with its front face flush on the points; cuboid B sits in front with
    its far face a hair short of them. Their plain point-to-surface distances
    are nearly identical, but B's near face occludes every point.
    """
    camera = default_camera()
    wall = Cuboid([extent, extent, 0.01], [0, 0, 0], [0, 0, depth + 0.01])
    scene = render_scene([wall], camera)
    flush = Cuboid([extent, extent, 0.5], [0, 0, 0], [0, 0, depth + 0.5])
    occluding = Cuboid([extent, extent, 0.5], [0, 0, 0], [0, 0, depth - 0.5 - gap])
    return scene, flush, occluding, camera


def three_cuboid_room():
    """Floor slab plus two boxes resting on it, none occluding another."""
    camera = default_camera()
    floor = Cuboid([2.5, 0.05, 2.5], [0, 0, 0], [0.0, 1.05, 4.0])
    left = Cuboid([0.45, 0.45, 0.35], [0, 0, 0], [-0.85, 0.55, 3.3])
    right = Cuboid([0.50, 0.40, 0.35], [0, 0, 0], [0.85, 0.65, 3.6])
    cuboids = [floor, left, right]
    return render_scene(cuboids, camera), cuboids, camera


def random_scene(rng: np.random.Generator, max_cuboids: int = 3):
    """Indoor-style random scene: a backdrop wall plus 0-2 boxes in front.

    Every structure keeps a visible-pixel share large enough that uniform
    minimal-set sampling can still hit it; the backdrop penalizes oversized
    hypotheses through occlusion, as cluttered rooms do.
    """
    camera = default_camera()
    count = int(rng.integers(1, max_cuboids + 1))
    wall = Cuboid(
        half_extents=np.array([3.0, 2.4, rng.uniform(0.05, 0.2)]),
        rotation=rng.normal(size=3) * 0.03,
        translation=np.array(
            [rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(4.3, 4.9)]
        ),
    )
    cuboids = [wall]
    lanes = {1: [], 2: [0.0], 3: [-0.62, 0.62]}[count]
    for lane in lanes:
        for _ in range(50):
            candidate = Cuboid(
                half_extents=rng.uniform(0.42, 0.60, 3) * np.array([1.0, 1.0, 0.6]),
                rotation=rng.normal(size=3) * 0.25,
                translation=np.array(
                    [lane + rng.uniform(-0.06, 0.06), rng.uniform(-0.15, 0.15), rng.uniform(2.7, 3.1)]
                ),
            )
            if point_cuboid_distance(candidate, camera.center) < 0.6:
                continue
            trial = cuboids + [candidate]
            depth = render_synthetic(trial, camera, DEFAULT_RESOLUTION)
            total = (depth > 0).sum()
            solo = render_synthetic([candidate], camera, DEFAULT_RESOLUTION)
            visible = (solo > 0) & (np.abs(depth - solo) < 1e-9)
            if visible.sum() < 0.22 * total:
                continue
            cuboids = trial
            break
    return render_scene(cuboids, camera), cuboids, camera
