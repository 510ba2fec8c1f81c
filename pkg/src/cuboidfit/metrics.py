"""Occlusion-aware evaluation: per-point distances, recall-curve AUC, means.

AUC at bound b is the normalized area under the fraction-of-points-within-
threshold curve on [0, b], which has the closed form
mean(clamp(1 - d/b, 0, 1)) * 100.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, min_cuboid_distance, oa_distance
from .scene import Scene
from .superquadric import SqEvalConfig, Superquadric, sq_min_distance, sq_oa_distance

DEFAULT_BOUNDS = (0.50, 0.20, 0.10, 0.05)


@dataclass(frozen=True)
class EvalReport:
    auc: dict[float, float]  # bound (m) -> percent
    mean_oa: float
    mean_l2: float
    per_point_distances: np.ndarray | None = None

    def as_dict(self) -> dict:
        out = {
            "auc": {f"{b:g}": v for b, v in self.auc.items()},
            "mean_oa": self.mean_oa,
            "mean_l2": self.mean_l2,
        }
        if self.per_point_distances is not None:
            out["per_point_distances"] = [float(d) for d in self.per_point_distances]
        return out


def auc_percent(distances: np.ndarray, bound: float) -> float:
    """Closed-form relative area under the recall curve, in percent."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("no distances")
    return float(np.mean(np.clip(1.0 - d / bound, 0.0, 1.0)) * 100.0)


def recall_curve(distances, bound: float, steps: int) -> np.ndarray:
    """(threshold, recall) pairs at `steps` uniform thresholds in [0, bound]."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("no distances")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    thresholds = np.linspace(0.0, bound, steps)
    recall = (d[None, :] <= thresholds[:, None]).mean(axis=1)
    return np.column_stack([thresholds, recall])


def evaluate(
    gt_scene: Scene,
    primitives,
    camera: CameraModel | None = None,
    bounds=DEFAULT_BOUNDS,
    keep_distances: bool = False,
    sq_config: SqEvalConfig | None = None,
) -> EvalReport:
    """Occlusion-aware distances of all ground-truth points to the primitives.

    Accepts cuboids (CuboidSet or iterable of Cuboid) or superquadrics.
    """
    camera = gt_scene.camera if camera is None else camera
    if len(gt_scene) == 0:
        raise ValueError("scene has no valid points")
    prims = list(primitives)
    if not prims:
        raise ValueError("no primitives")

    if isinstance(prims[0], Superquadric):
        cfg = sq_config or SqEvalConfig()
        d_oa = sq_oa_distance(prims, gt_scene.points, camera, cfg)
        d_l2 = sq_min_distance(prims, gt_scene.points, camera, cfg)
    else:
        d_oa = oa_distance(prims, gt_scene.points, camera)
        d_l2 = min_cuboid_distance(prims, gt_scene.points)

    return EvalReport(
        auc={float(b): auc_percent(d_oa, float(b)) for b in bounds},
        mean_oa=float(np.mean(d_oa)),
        mean_l2=float(np.mean(d_l2)),
        per_point_distances=d_oa if keep_distances else None,
    )
