"""Cuboid primitives, coordinate transforms, distances and occlusion tests.

A cuboid is an axis-aligned box in its own frame, posed in the world by an
angle-axis rotation r and a translation t. World points map into the cuboid
frame via  y_hat = R(r) @ (y - t).  All distances are in meters; squared
variants are exposed for the solver, which needs them differentiable at the
surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

# Tolerance for "the sight-line intersection lies on the cuboid surface".
SURFACE_EPS = 1e-9
# Rays closer to face-parallel than this never count as occluding.
PARALLEL_EPS = 1e-12
# Below this angle, Rodrigues coefficients switch to their Taylor series.
TINY_ANGLE = 1e-8
# Half-extents are clamped here and below by the solver.
MIN_HALF_EXTENT = 1e-4

_FACE_AXES = np.array([0, 0, 1, 1, 2, 2])
_FACE_SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


class Face(IntEnum):
    """The six cuboid sides, ordered (+x, -x, +y, -y, +z, -z)."""

    POS_X = 1
    NEG_X = 2
    POS_Y = 3
    NEG_Y = 4
    POS_Z = 5
    NEG_Z = 6

    @property
    def axis(self) -> int:
        return int(_FACE_AXES[self - 1])

    @property
    def sign(self) -> float:
        return float(_FACE_SIGNS[self - 1])


def _as_vec3(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x, batched over leading dimensions."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def rotation_matrix(r) -> np.ndarray:
    """Angle-axis vector(s) -> rotation matrix(es) via Rodrigues.

    Uses a second-order Taylor expansion of the coefficients for angles below
    ``TINY_ANGLE`` so that derivatives stay finite near the identity.
    """
    r = np.asarray(r, dtype=float)
    theta2 = np.einsum("...i,...i->...", r, r)
    theta = np.sqrt(theta2)
    small = theta < TINY_ANGLE
    safe = np.where(small, 1.0, theta)
    sin_c = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    cos_c = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / np.where(small, 1.0, theta2))
    K = skew(r)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + sin_c[..., None, None] * K + cos_c[..., None, None] * (K @ K)


def angle_axis(R: np.ndarray) -> np.ndarray:
    """Rotation matrix(es) -> canonical angle-axis with norm in [0, pi]."""
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    R = R.reshape((-1, 3, 3))
    tr = np.einsum("bii->b", R)
    cos_t = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    # vee(R - R^T) = 2 sin(theta) * axis
    vee = np.stack(
        [R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]],
        axis=-1,
    )
    out = np.empty((R.shape[0], 3))

    near_zero = theta < 1e-6
    near_pi = theta > np.pi - 1e-6
    generic = ~(near_zero | near_pi)

    out[near_zero] = 0.5 * vee[near_zero]
    if np.any(generic):
        th = theta[generic]
        out[generic] = vee[generic] * (th / (2.0 * np.sin(th)))[:, None]
    if np.any(near_pi):
        # R = I + 2 uu^T - 2 I on the rotation plane; recover |u| from the
        # diagonal and fix relative signs from the symmetric off-diagonals.
        idx = np.nonzero(near_pi)[0]
        for b in idx:
            Rb = R[b]
            c = cos_t[b]
            u2 = np.clip((np.diag(Rb) - c) / (1.0 - c), 0.0, None)
            u = np.sqrt(u2)
            k = int(np.argmax(u))
            if u[k] > 0:
                for j in range(3):
                    if j != k:
                        u[j] = (Rb[k, j] + Rb[j, k]) / (2.0 * (1.0 - c) * u[k])
            u /= max(np.linalg.norm(u), 1e-300)
            # Orient along the skew part when it still carries sign info.
            if float(vee[b] @ u) < 0:
                u = -u
            out[b] = theta[b] * u
    return out[0] if single else out.reshape(R.shape[:-2] + (3,))


def canonical_rotation(r: np.ndarray) -> np.ndarray:
    """Renormalize an angle-axis vector so its angle lies in [0, pi]."""
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta <= np.pi:
        return r.copy()
    axis = r / theta
    theta = np.fmod(theta, 2.0 * np.pi)
    if theta > np.pi:
        theta -= 2.0 * np.pi
    return axis * theta


@dataclass(frozen=True)
class Cuboid:
    """9-DOF box: half-extents (a_x, a_y, a_z), angle-axis rotation, translation."""

    half_extents: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        a = _as_vec3(self.half_extents, "half_extents")
        r = _as_vec3(self.rotation, "rotation")
        t = _as_vec3(self.translation, "translation")
        if np.any(a <= 0):
            raise ValueError(f"half_extents must be strictly positive, got {a}")
        r = canonical_rotation(r)
        for name, arr in (("half_extents", a), ("rotation", r), ("translation", t)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def matrix(self) -> np.ndarray:
        """World-to-cuboid rotation matrix R with R @ (y - t) in the box frame."""
        return rotation_matrix(self.rotation)

    def corners(self) -> np.ndarray:
        """The 8 corners in world coordinates, shape (8, 3)."""
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        local = signs * self.half_extents
        return local @ self.matrix + self.translation

    def transformed(self, rotation, translation) -> "Cuboid":
        """The same box observed after rigidly moving the world by (R_g, t_g)."""
        Rg = rotation_matrix(np.asarray(rotation, dtype=float))
        tg = _as_vec3(translation, "translation")
        R_new = self.matrix @ Rg.T
        t_new = Rg @ self.translation + tg
        return Cuboid(self.half_extents, angle_axis(R_new), t_new)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics; the projection center sits at the world origin."""

    fx: float
    fy: float
    cx: float
    cy: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        c = _as_vec3(self.center, "center")
        c.flags.writeable = False
        object.__setattr__(self, "center", c)


def to_cuboid_frame(point, cuboid: Cuboid) -> np.ndarray:
    """World point(s) -> cuboid frame: y_hat = R (y - t)."""
    p = np.asarray(point, dtype=float)
    return (p - cuboid.translation) @ cuboid.matrix.T


def from_cuboid_frame(point, cuboid: Cuboid) -> np.ndarray:
    """Inverse of :func:`to_cuboid_frame`."""
    p = np.asarray(point, dtype=float)
    return p @ cuboid.matrix + cuboid.translation


def _sq_distance_local(local: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Squared surface distance for points already in the cuboid frame."""
    slack = a - np.abs(local)
    inside = np.maximum(slack.min(axis=-1), 0.0)
    outside = np.maximum(-slack, 0.0)
    return inside**2 + np.einsum("...i,...i->...", outside, outside)


def _face_sq_distances_local(local: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Squared distances to all six faces, shape (..., 6)."""
    clamped = np.maximum(np.abs(local) - a, 0.0) ** 2
    lateral = clamped.sum(axis=-1, keepdims=True) - clamped
    plane = np.stack(
        [(local[..., k] - s * a[..., k]) ** 2 for k, s in zip(_FACE_AXES, _FACE_SIGNS)],
        axis=-1,
    )
    return plane + lateral[..., _FACE_AXES]


def point_cuboid_sq_distance(cuboid: Cuboid, point) -> np.ndarray | float:
    """Squared distance from point(s) to the cuboid surface."""
    local = to_cuboid_frame(point, cuboid)
    d2 = _sq_distance_local(local, cuboid.half_extents)
    return float(d2) if np.ndim(point) == 1 else d2


def point_cuboid_distance(cuboid: Cuboid, point) -> np.ndarray | float:
    """Distance from point(s) to the cuboid surface; zero iff on the surface."""
    return np.sqrt(point_cuboid_sq_distance(cuboid, point))


def face_sq_distance(cuboid: Cuboid, point, face: Face | int) -> np.ndarray | float:
    """Squared distance from point(s) to one cuboid side."""
    local = to_cuboid_frame(point, cuboid)
    d2 = _face_sq_distances_local(local, cuboid.half_extents)[..., int(face) - 1]
    return float(d2) if np.ndim(point) == 1 else d2


def face_distance(cuboid: Cuboid, point, face: Face | int) -> np.ndarray | float:
    """Distance from point(s) to one cuboid side."""
    return np.sqrt(face_sq_distance(cuboid, point, face))


def _occlusion_masks_local(local: np.ndarray, a: np.ndarray, cam_local: np.ndarray) -> np.ndarray:
    """Per-face occlusion flags for cuboid-frame points, shape (..., 6).

    A face occludes a point when its sight line x(l) = y_hat + l * (c_hat -
    y_hat) crosses the face plane at l in (0, 1] and the crossing lies on the
    cuboid surface.
    """
    v = cam_local - local
    denom = v[..., _FACE_AXES]
    plane = _FACE_SIGNS * a[..., _FACE_AXES]
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = (plane - local[..., _FACE_AXES]) / denom
    valid = (np.abs(denom) >= PARALLEL_EPS) & (lam > 0.0) & (lam <= 1.0)
    lam = np.where(valid, lam, 0.0)
    hit = local[..., None, :] + lam[..., :, None] * v[..., None, :]
    on_surface = _sq_distance_local(hit, a[..., None, :]) <= SURFACE_EPS**2
    return valid & on_surface


def occlusion_masks(cuboid: Cuboid, point, camera: CameraModel) -> np.ndarray:
    """All six per-face occlusion flags at once, shape (..., 6)."""
    local = to_cuboid_frame(point, cuboid)
    cam_local = to_cuboid_frame(camera.center, cuboid)
    return _occlusion_masks_local(local, cuboid.half_extents, cam_local)


def occludes(cuboid: Cuboid, point, face: Face | int, camera: CameraModel) -> np.ndarray | bool:
    """Whether one cuboid side occludes the point(s) from the camera."""
    mask = occlusion_masks(cuboid, point, camera)[..., int(face) - 1]
    return bool(mask) if np.ndim(point) == 1 else mask


def occlusion_distance(cuboids, point, camera: CameraModel) -> np.ndarray | float:
    """Distance to the most distant occluding face over a set of cuboids.

    Zero when nothing occludes (in particular for the empty set).
    """
    p = np.asarray(point, dtype=float)
    best = np.zeros(p.shape[:-1])
    for cuboid in cuboids:
        local = to_cuboid_frame(p, cuboid)
        cam_local = to_cuboid_frame(camera.center, cuboid)
        masks = _occlusion_masks_local(local, cuboid.half_extents, cam_local)
        face_d = np.sqrt(_face_sq_distances_local(local, cuboid.half_extents))
        best = np.maximum(best, np.max(np.where(masks, face_d, 0.0), axis=-1))
    return float(best) if p.ndim == 1 else best


def oa_distance(cuboids, point, camera: CameraModel) -> np.ndarray | float:
    """Occlusion-aware distance: max(nearest-cuboid distance, occlusion distance)."""
    cuboids = list(cuboids)
    if not cuboids:
        raise ValueError("no primitives")
    p = np.asarray(point, dtype=float)
    nearest = np.min([point_cuboid_sq_distance(c, p) for c in cuboids], axis=0)
    result = np.maximum(np.sqrt(nearest), occlusion_distance(cuboids, p, camera))
    return float(result) if p.ndim == 1 else result


def min_cuboid_distance(cuboids, point) -> np.ndarray | float:
    """Plain nearest-cuboid distance, ignoring occlusion."""
    cuboids = list(cuboids)
    if not cuboids:
        raise ValueError("no primitives")
    p = np.asarray(point, dtype=float)
    nearest = np.min([point_cuboid_sq_distance(c, p) for c in cuboids], axis=0)
    result = np.sqrt(nearest)
    return float(result) if p.ndim == 1 else result
