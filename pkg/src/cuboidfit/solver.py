"""Minimal solver: fit a cuboid to 9 points by first-order descent.

The objective per point is the squared surface distance scaled by the sum of
half-extents, which breaks the size ambiguity of 2.5D data in favour of
smaller boxes. No closed form exists, so we run Adam on the 9 parameters
(half-extents, angle-axis rotation, translation) from a PCA initialization.

Descent happens in the frame defined by the initialization (rotation chart
centred at the identity, translation at zero), which conditions the rotation
updates and makes the fit exactly equivariant under rigid motions of the
input points. Input gradients of the fitted parameters come from the implicit
function theorem applied to the residual vector at the solution, with the
size rows masked to zero and the pose block solved by pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import (
    MIN_HALF_EXTENT,
    TINY_ANGLE,
    Cuboid,
    angle_axis,
    rotation_matrix,
    skew,
)

# A cuboid has 9 degrees of freedom, hence 9-point minimal sets.
MINIMAL_SET_SIZE = 9

# Points more collinear than this (second-to-first singular value ratio) give
# an arbitrary rotation completion and are flagged degenerate.
DEGENERATE_SV_RATIO = 1e-9


@dataclass(frozen=True)
class MinimalSet:
    """The 9 sampled feature points determining one cuboid hypothesis."""

    indices: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        pts = np.asarray(self.points, dtype=float)
        if idx.shape != (MINIMAL_SET_SIZE,):
            raise ValueError(f"minimal set needs {MINIMAL_SET_SIZE} indices, got {idx.shape}")
        if len(set(idx.tolist())) != MINIMAL_SET_SIZE:
            raise ValueError("minimal set indices must be distinct")
        if pts.shape != (MINIMAL_SET_SIZE, 3):
            raise ValueError(f"minimal set needs shape ({MINIMAL_SET_SIZE}, 3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("minimal set points must be finite")
        idx.flags.writeable = False
        pts.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 50
    learning_rate: float = 0.2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class InitEstimate(NamedTuple):
    cuboid: Cuboid
    degenerate: bool


class FitEstimate(NamedTuple):
    cuboid: Cuboid
    degenerate: bool
    objective: float


class InputJacobian(NamedTuple):
    jacobian: np.ndarray  # (9 params) x (27 point coordinates)
    reliable: bool


def _rotation_derivatives(r: np.ndarray, R: np.ndarray) -> np.ndarray:
    """dR/dr_i for batched angle-axis r, shape (..., 3 [i], 3, 3).

    Closed form after Gallego & Yezzi; falls back to dR/dr_i = [e_i]x at the
    identity, keeping derivatives finite for tiny angles.
    """
    theta2 = np.einsum("...i,...i->...", r, r)
    small = theta2 < TINY_ANGLE**2
    safe2 = np.where(small, 1.0, theta2)

    eye = np.broadcast_to(np.eye(3), R.shape)
    # (I - R) e_i as columns: shape (..., 3 [vector], 3 [i])
    imr = eye - R
    w = np.cross(r[..., None, :], imr.swapaxes(-1, -2))  # (..., 3 [i], 3)
    term = r[..., :, None, None] * skew(r)[..., None, :, :] + skew(w)
    dR = (term / safe2[..., None, None, None]) @ R[..., None, :, :]

    basis = np.zeros(r.shape[:-1] + (3, 3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        basis[..., i, :, :] = skew(e)
    return np.where(small[..., None, None, None], basis, dR)


def _unpack(params: np.ndarray):
    return params[..., 0:3], params[..., 3:6], params[..., 6:9]


def residual_terms(params: np.ndarray, points: np.ndarray, with_jacobians: bool = True):
    """Residuals F and their first derivatives for batched parameter vectors.

    params: (..., 9) as [half-extents, angle-axis, translation]
    points: (..., C, 3)

    Returns a dict with F (..., C) and, when requested, dF_da / dF_dr / dF_dt
    / dF_dy each shaped (..., C, 3). dF_dy is the derivative w.r.t. the point
    generating the residual (residual j depends only on point j).
    """
    a, r, t = _unpack(params)
    R = rotation_matrix(r)
    p = points - t[..., None, :]
    local = np.einsum("...ij,...cj->...ci", R, p)

    slack = a[..., None, :] - np.abs(local)
    m = slack.min(axis=-1)
    kmin = slack.argmin(axis=-1)
    inside = np.maximum(m, 0.0)
    outside = np.maximum(-slack, 0.0)
    d2 = inside**2 + np.einsum("...ck,...ck->...c", outside, outside)
    scale = a.sum(axis=-1)
    F = d2 * scale[..., None]
    out = {"F": F, "d2": d2}
    if not with_jacobians:
        return out

    onehot = (kmin[..., None] == np.arange(3)).astype(float)
    sgn = np.sign(local)
    dd2_da = 2.0 * inside[..., None] * onehot - 2.0 * outside
    g_local = (-2.0 * inside[..., None] * onehot + 2.0 * outside) * sgn

    dd2_dt = -np.einsum("...ck,...kl->...cl", g_local, R)
    dR = _rotation_derivatives(r, R)  # (..., 3 [i], 3, 3)
    dlocal_dr = np.einsum("...ikl,...cl->...cik", dR, p)  # (..., C, 3 [i], 3 [k])
    dd2_dr = np.einsum("...ck,...cik->...ci", g_local, dlocal_dr)

    out["dF_da"] = scale[..., None, None] * dd2_da + d2[..., None]
    out["dF_dr"] = scale[..., None, None] * dd2_dr
    out["dF_dt"] = scale[..., None, None] * dd2_dt
    out["dF_dy"] = -scale[..., None, None] * dd2_dt
    return out


def objective(params: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Mean residual (1/C) * ||F||_1; F is nonnegative by construction."""
    return residual_terms(params, points, with_jacobians=False)["F"].mean(axis=-1)


def objective_gradient(params: np.ndarray, points: np.ndarray):
    """Objective value and its gradient w.r.t. the 9 parameters."""
    terms = residual_terms(params, points)
    grad = np.concatenate(
        [terms["dF_da"], terms["dF_dr"], terms["dF_dt"]], axis=-1
    ).mean(axis=-2)
    return terms["F"].mean(axis=-1), grad


def residuals(minimal_set: MinimalSet, cuboid: Cuboid) -> np.ndarray:
    """Per-point residuals d(h, y)^2 * (a_x + a_y + a_z), shape (9,)."""
    params = np.concatenate([cuboid.half_extents, cuboid.rotation, cuboid.translation])
    return residual_terms(params, minimal_set.points, with_jacobians=False)["F"]


def _init_batch(points: np.ndarray):
    """PCA initialization for (B, C, 3) point batches.

    Returns centers (B, 3), world-to-local rotations (B, 3, 3), half-extents
    (B, 3) and degeneracy flags (B,). The SVD is taken on mean-centred points;
    its right singular vectors give the box axes.
    """
    t0 = points.mean(axis=-2)
    centered = points - t0[..., None, :]
    _, s, vh = np.linalg.svd(centered, full_matrices=False)
    flip = np.linalg.det(vh) < 0
    vh[flip, 2, :] *= -1.0
    degenerate = s[..., 1] <= DEGENERATE_SV_RATIO * s[..., 0]
    local = np.einsum("...ij,...cj->...ci", vh, centered)
    a0 = np.maximum(np.abs(local).max(axis=-2), MIN_HALF_EXTENT)
    return t0, vh, a0, degenerate


def init_cuboid(minimal_set: MinimalSet) -> InitEstimate:
    """Initial cuboid: mean position, PCA axes, per-axis max absolute spread."""
    t0, R0, a0, degenerate = _init_batch(minimal_set.points[None])
    cuboid = Cuboid(a0[0], angle_axis(R0[0]), t0[0])
    return InitEstimate(cuboid, bool(degenerate[0]))


def fit_cuboid_batch(points: np.ndarray, config: SolverConfig | None = None):
    """Fit one cuboid per (C, 3) slice of a (B, C, 3) batch.

    Returns world-frame parameter vectors (B, 9), degeneracy flags (B,) and
    the best objective value reached (B,). Descent runs in the init frame and
    keeps the best iterate; a non-finite objective reverts that element to its
    last finite iterate and flags it.
    """
    if config is None:
        config = SolverConfig()
    points = np.asarray(points, dtype=float)
    B = points.shape[0]
    t0, R0, a0, degenerate = _init_batch(points)
    local_pts = np.einsum("bij,bcj->bci", R0, points - t0[:, None, :])

    params = np.zeros((B, 9))
    params[:, 0:3] = a0
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    alive = np.ones(B, dtype=bool)

    obj, grad = objective_gradient(params, local_pts)
    bad = ~np.isfinite(obj)
    alive &= ~bad
    degenerate = degenerate | bad
    best_obj = np.where(alive, obj, np.inf)
    best_params = params.copy()

    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate
    for step in range(1, config.iterations + 1):
        prev = params.copy()
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad**2
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        params = np.where(alive[:, None], params - update, params)
        params[:, 0:3] = np.maximum(params[:, 0:3], MIN_HALF_EXTENT)

        obj, grad = objective_gradient(params, local_pts)
        bad = alive & ~(np.isfinite(obj) & np.all(np.isfinite(grad), axis=-1))
        if np.any(bad):
            params[bad] = prev[bad]
            degenerate = degenerate | bad
            alive &= ~bad
        improved = alive & (obj < best_obj)
        best_obj = np.where(improved, obj, best_obj)
        best_params = np.where(improved[:, None], params, best_params)

    # Compose the init frame back into world coordinates.
    a, r, t = _unpack(best_params)
    R_world = rotation_matrix(r) @ R0
    t_world = t0 + np.einsum("bij,bi->bj", R0, t)
    world = np.concatenate([a, angle_axis(R_world), t_world], axis=-1)
    return world, degenerate, best_obj


def fit_cuboid(minimal_set: MinimalSet, config: SolverConfig | None = None) -> FitEstimate:
    """Fit a cuboid to a minimal set; deterministic given identical inputs."""
    params, flags, best = fit_cuboid_batch(minimal_set.points[None], config)
    cuboid = Cuboid(params[0, 0:3], params[0, 3:6], params[0, 6:9])
    return FitEstimate(cuboid, bool(flags[0]), float(best[0]))


# Condition-number limit above which the constraint Jacobian is refused.
IFT_MAX_CONDITION = 1e10


def signed_residuals(params: np.ndarray, points: np.ndarray):
    """Signed surface distances and their first derivatives, one row per point.

    The residual is negative inside the box and equals the Euclidean surface
    distance outside; its zero set is the constraint the fitted cuboid
    satisfies, which makes it the right implicit function for input
    gradients (the squared form of the descent objective has vanishing
    derivatives at the solution).
    """
    a, r, t = params[0:3], params[3:6], params[6:9]
    R = rotation_matrix(r)
    p = points - t
    local = p @ R.T
    slack = a - np.abs(local)
    outside = np.maximum(-slack, 0.0)
    C = len(points)
    s = np.empty(C)
    ds_dl = np.zeros((C, 3))
    ds_da = np.zeros((C, 3))
    for j in range(C):
        if not outside[j].any():
            k = int(np.argmin(slack[j]))
            s[j] = -slack[j, k]
            ds_dl[j, k] = np.sign(local[j, k])
            ds_da[j, k] = -1.0
        else:
            d = float(np.sqrt((outside[j] ** 2).sum()))
            s[j] = d
            ds_dl[j] = outside[j] * np.sign(local[j]) / d
            ds_da[j] = -outside[j] / d
    dR = _rotation_derivatives(r[None], R[None])[0]
    ds_dr = np.einsum("ck,ikl,cl->ci", ds_dl, dR, p)
    ds_dt = -ds_dl @ R
    ds_dy = ds_dl @ R  # row j differentiates w.r.t. point j only
    return s, ds_da, ds_dr, ds_dt, ds_dy


def constraint_jacobians(params: np.ndarray, points: np.ndarray):
    """(residuals, d(residuals)/d(params) 9x9, d(residuals)/d(points) 9x27)."""
    s, da, dr, dt, dy = signed_residuals(params, points)
    C = len(points)
    j_params = np.concatenate([da, dr, dt], axis=1)
    j_points = np.zeros((C, 3 * C))
    for j in range(C):
        j_points[j, 3 * j : 3 * j + 3] = dy[j]
    return s, j_params, j_points


def ift_gradient(minimal_set: MinimalSet, fitted: Cuboid) -> InputJacobian:
    """d(params)/d(points) of the fit, shape (9, 27), via the implicit function theorem.

    Differentiates the on-surface constraint at the fitted cuboid (which must
    be a near-stationary point): d(h)/d(S) = -J_h^+ J_S with the signed
    surface-distance residual vector. Size rows are zeroed in the output.
    Returns a zero Jacobian flagged unreliable when the constraint Jacobian
    is ill-conditioned (points leaving a parameter direction unobserved).
    """
    params = np.concatenate([fitted.half_extents, fitted.rotation, fitted.translation])
    _, j_params, j_points = constraint_jacobians(params, minimal_set.points)
    u, s, vt = np.linalg.svd(j_params)
    if s[-1] <= 0 or s[0] / s[-1] > IFT_MAX_CONDITION:
        return InputJacobian(np.zeros((9, 3 * MINIMAL_SET_SIZE)), False)
    jac = -(vt.T / s) @ u.T @ j_points
    jac[0:3] = 0.0
    return InputJacobian(jac, True)


def polish_to_surface(params: np.ndarray, points: np.ndarray, iterations: int = 12) -> np.ndarray:
    """Project a near-solution onto the exact on-surface constraint manifold.

    Least-squares Newton on the signed residuals; used by the gradient-check
    oracle, which needs refits converged far beyond the descent solver's
    plateau before finite differences are meaningful.
    """
    params = np.asarray(params, dtype=float).copy()
    for _ in range(iterations):
        s, j_params, _ = constraint_jacobians(params, points)
        step, *_ = np.linalg.lstsq(j_params, s, rcond=None)
        params -= step
        params[0:3] = np.maximum(params[0:3], MIN_HALF_EXTENT)
        if np.abs(s).max() < 1e-13:
            break
    return params
