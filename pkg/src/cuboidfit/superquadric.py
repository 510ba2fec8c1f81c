"""Occlusion-aware distances for superquadric (superellipsoid) configurations.

No closed-form point-to-superquadric distance exists, so distances go through
visible surface samples: N (approximately) area-uniform samples minus the
back-facing ones, queried with a KD-tree. Occlusion tests sample the sight
line and look for sign changes of the inside-outside function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import CameraModel, rotation_matrix


@dataclass(frozen=True)
class Superquadric:
    """Superellipsoid: shape exponents (eps1, eps2), half-extents, pose."""

    eps1: float
    eps2: float
    half_extents: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not (0 < self.eps1 <= 2 and 0 < self.eps2 <= 2):
            raise ValueError("shape exponents must lie in (0, 2]")
        a = np.asarray(self.half_extents, dtype=float).reshape(3)
        r = np.asarray(self.rotation, dtype=float).reshape(3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.any(a <= 0) or not np.all(np.isfinite(a)):
            raise ValueError("half_extents must be strictly positive and finite")
        for name, arr in (("half_extents", a), ("rotation", r), ("translation", t)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def to_frame(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.translation) @ self.matrix.T

    def from_frame(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.matrix + self.translation


@dataclass(frozen=True)
class SqEvalConfig:
    line_samples: int = 256  # samples along the sight line
    surface_samples: int = 2048  # surface samples before back-face culling

    def __post_init__(self):
        if self.line_samples < 2:
            raise ValueError("line_samples must be >= 2")
        if self.surface_samples < 8:
            raise ValueError("surface_samples must be >= 8")


def _spow(base: np.ndarray, exponent: float) -> np.ndarray:
    """Signed power sign(b) * |b|^e, the standard superquadric convention."""
    return np.sign(base) * np.abs(base) ** exponent


def sq_inside_outside(point, sq: Superquadric):
    """< 0 inside, 0 on the surface, > 0 outside."""
    local = sq.to_frame(point)
    out = _inside_outside_local(local, sq)
    return float(out) if np.ndim(point) == 1 else out


def _inside_outside_local(local: np.ndarray, sq: Superquadric) -> np.ndarray:
    x, y, z = (np.abs(local[..., k]) / sq.half_extents[k] for k in range(3))
    lateral = x ** (2.0 / sq.eps2) + y ** (2.0 / sq.eps2)
    return lateral ** (sq.eps2 / sq.eps1) + z ** (2.0 / sq.eps1) - 1.0


def sq_surface_point(eta, omega, sq: Superquadric) -> np.ndarray:
    """World-frame surface point at angles (eta, omega)."""
    eta = np.asarray(eta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    ce, se = np.cos(eta), np.sin(eta)
    co, so = np.cos(omega), np.sin(omega)
    local = np.stack(
        [
            sq.half_extents[0] * _spow(ce, sq.eps1) * _spow(co, sq.eps2),
            sq.half_extents[1] * _spow(ce, sq.eps1) * _spow(so, sq.eps2),
            sq.half_extents[2] * _spow(se, sq.eps1),
        ],
        axis=-1,
    )
    return sq.from_frame(local)


def sq_normal(eta, omega, sq: Superquadric) -> np.ndarray:
    """World-frame outward surface normal at angles (eta, omega), unnormalized."""
    eta = np.asarray(eta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    ce, se = np.cos(eta), np.sin(eta)
    co, so = np.cos(omega), np.sin(omega)
    local = np.stack(
        [
            _spow(ce, 2.0 - sq.eps1) * _spow(co, 2.0 - sq.eps2) / sq.half_extents[0],
            _spow(ce, 2.0 - sq.eps1) * _spow(so, 2.0 - sq.eps2) / sq.half_extents[1],
            _spow(se, 2.0 - sq.eps1) / sq.half_extents[2],
        ],
        axis=-1,
    )
    return local @ sq.matrix


def sq_occludes(point, sq: Superquadric, camera: CameraModel, config: SqEvalConfig):
    """Sight-line occlusion: any sign change of the inside-outside samples."""
    p = np.atleast_2d(np.asarray(point, dtype=float))
    L = config.line_samples
    fractions = np.arange(1, L + 1) / L
    segment = camera.center + fractions[None, :, None] * (p[:, None, :] - camera.center)
    values = _inside_outside_local(sq.to_frame(segment), sq)
    flips = np.any(values[:, 1:] * values[:, :-1] < 0.0, axis=1)
    return bool(flips[0]) if np.ndim(point) == 1 else flips


def _surface_grid(sq: Superquadric, n: int):
    """Deterministic, approximately area-uniform surface samples with normals.

    Cell areas of a parameter grid weight a systematic resampling of cell
    centers, so no RNG is involved.
    """
    g_eta = max(8, int(np.ceil(np.sqrt(2.0 * n))))
    g_omega = 2 * g_eta
    eta_edges = np.linspace(-np.pi / 2, np.pi / 2, g_eta + 1)
    omega_edges = np.linspace(-np.pi, np.pi, g_omega + 1)
    corners = sq_surface_point(
        eta_edges[:, None, None], omega_edges[None, :, None], sq
    ).reshape(g_eta + 1, g_omega + 1, 3)
    # Quad area ~ half the cross product of the diagonals.
    d1 = corners[1:, 1:] - corners[:-1, :-1]
    d2 = corners[1:, :-1] - corners[:-1, 1:]
    areas = 0.5 * np.linalg.norm(np.cross(d1, d2), axis=-1).reshape(-1)
    eta_mid = 0.5 * (eta_edges[:-1] + eta_edges[1:])
    omega_mid = 0.5 * (omega_edges[:-1] + omega_edges[1:])
    eta_c, omega_c = np.meshgrid(eta_mid, omega_mid, indexing="ij")
    eta_c, omega_c = eta_c.reshape(-1), omega_c.reshape(-1)

    total = areas.sum()
    if total <= 0:
        raise ValueError("degenerate superquadric surface")
    cdf = np.cumsum(areas) / total
    quantiles = (np.arange(n) + 0.5) / n
    pick = np.searchsorted(cdf, quantiles, side="left")
    eta_s, omega_s = eta_c[pick], omega_c[pick]
    return sq_surface_point(eta_s, omega_s, sq), sq_normal(eta_s, omega_s, sq)


def sq_visible_points(sq: Superquadric, camera: CameraModel, config: SqEvalConfig) -> np.ndarray:
    """Surface samples minus back-facing ones; all kept if the camera is inside."""
    points, normals = _surface_grid(sq, config.surface_samples)
    if sq_inside_outside(camera.center, sq) <= 0:
        return points
    view = points - camera.center
    keep = np.einsum("ij,ij->i", view, normals) <= 0.0
    return points[keep]


def sq_min_distance(sqs, point, camera: CameraModel, config: SqEvalConfig):
    """Distance to the nearest visible sample over a set of superquadrics."""
    sqs = list(sqs)
    if not sqs:
        raise ValueError("no primitives")
    p = np.atleast_2d(np.asarray(point, dtype=float))
    best = np.full(p.shape[0], np.inf)
    for sq in sqs:
        visible = sq_visible_points(sq, camera, config)
        d, _ = cKDTree(visible).query(p)
        best = np.minimum(best, d)
    return float(best[0]) if np.ndim(point) == 1 else best


def sq_oa_distance(sqs, point, camera: CameraModel, config: SqEvalConfig):
    """max(nearest visible-sample distance, farthest occluding distance)."""
    sqs = list(sqs)
    if not sqs:
        raise ValueError("no primitives")
    p = np.atleast_2d(np.asarray(point, dtype=float))
    nearest = np.full(p.shape[0], np.inf)
    occlusion = np.zeros(p.shape[0])
    for sq in sqs:
        visible = sq_visible_points(sq, camera, config)
        d, _ = cKDTree(visible).query(p)
        nearest = np.minimum(nearest, d)
        chi = sq_occludes(p, sq, camera, config)
        occlusion = np.maximum(occlusion, np.where(chi, d, 0.0))
    out = np.maximum(nearest, occlusion)
    return float(out[0]) if np.ndim(point) == 1 else out


def load_superquadrics(path) -> list[Superquadric]:
    """Text format: 'eps1 eps2 ax ay az rx ry rz tx ty tz' per line, # comments."""
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 11:
                raise ValueError(f"{path}:{lineno}: expected 11 fields, got {len(fields)}")
            vals = [float(x) for x in fields]
            out.append(
                Superquadric(
                    eps1=vals[0],
                    eps2=vals[1],
                    half_extents=np.array(vals[2:5]),
                    rotation=np.array(vals[5:8]),
                    translation=np.array(vals[8:11]),
                )
            )
    return out
