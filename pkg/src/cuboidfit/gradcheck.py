"""Finite-difference validation of the solver gradients.

Two suites: the analytic objective gradient against central differences, and
the implicit-function-theorem input Jacobian against refit differences. Both
are deterministic given the seed; the CLI exposes them as `gradcheck`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Cuboid, from_cuboid_frame, rotation_matrix
from .solver import (
    MINIMAL_SET_SIZE,
    IFT_MAX_CONDITION,
    MinimalSet,
    SolverConfig,
    constraint_jacobians,
    fit_cuboid_batch,
    ift_gradient,
    objective,
    objective_gradient,
    polish_to_surface,
)

# Tolerances pinned by the acceptance gate.
OBJECTIVE_RTOL = 1e-4
IFT_RTOL = 1e-2
IFT_MIN_FRACTION = 0.95

# The refit oracle needs a tightly converged solver; the Table-5 test-time
# budget (50 iterations at 0.2) only reaches the tau band.
ORACLE_SOLVER = SolverConfig(iterations=400, learning_rate=0.05)


@dataclass(frozen=True)
class GradCheckReport:
    objective_max_rel_err: float
    objective_configs: int
    ift_fraction_within_tol: float
    ift_entries: int
    ift_instances: int

    @property
    def passed(self) -> bool:
        return (
            self.objective_max_rel_err < OBJECTIVE_RTOL
            and self.ift_fraction_within_tol >= IFT_MIN_FRACTION
        )


def _random_params_and_points(rng: np.random.Generator):
    params = np.concatenate(
        [rng.uniform(0.2, 1.5, 3), rng.normal(size=3) * 1.2, rng.normal(size=3) * 2.0]
    )
    points = rng.normal(size=(MINIMAL_SET_SIZE, 3)) * 2.0
    return params, points


def _near_kink(params: np.ndarray, points: np.ndarray, margin: float = 1e-3) -> bool:
    """True when some point sits near a clamp boundary or a min-slack tie."""
    R = rotation_matrix(params[3:6])
    local = (points - params[6:9]) @ R.T
    slack = params[0:3] - np.abs(local)
    ordered = np.sort(slack, axis=-1)
    return bool(
        np.abs(slack).min() < margin
        or (ordered[:, 1] - ordered[:, 0]).min() < margin
        or np.abs(local).min() < margin
    )


def check_objective_gradient(seed: int, configs: int = 100, step: float = 1e-6) -> tuple[float, int]:
    """Max relative error of the analytic gradient over random configurations.

    Configurations near subgradient kinks (clamp boundaries, min ties) are
    redrawn: the convention there is one-sided and central differences
    straddle the kink.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    while checked < configs:
        params, points = _random_params_and_points(rng)
        if _near_kink(params, points):
            continue
        checked += 1
        _, grad = objective_gradient(params, points)
        fd = np.zeros(9)
        for i in range(9):
            hi, lo = params.copy(), params.copy()
            hi[i] += step
            lo[i] -= step
            fd[i] = (objective(hi, points) - objective(lo, points)) / (2.0 * step)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)
        worst = max(worst, float(rel.max()))
    return worst, checked


def _surface_minimal_set(rng: np.random.Generator) -> np.ndarray:
    """9 points on a random cuboid, spread over all faces, away from edges."""
    cuboid = Cuboid(
        rng.uniform(0.3, 1.0, 3),
        rng.normal(size=3) * 0.8,
        rng.normal(size=3) * 0.8 + np.array([0.0, 0.0, 3.5]),
    )
    faces = list(range(6)) + list(rng.integers(0, 6, MINIMAL_SET_SIZE - 6))
    points = []
    for face in faces:
        axis, sign = face // 2, 1.0 if face % 2 == 0 else -1.0
        local = rng.uniform(-0.85, 0.85, 3) * cuboid.half_extents
        local[axis] = sign * cuboid.half_extents[axis]
        points.append(from_cuboid_frame(local, cuboid))
    return np.asarray(points)


def check_ift_gradient(
    seed: int,
    instances: int = 50,
    step: float = 1e-4,
    solver: SolverConfig = ORACLE_SOLVER,
) -> tuple[float, int, int]:
    """Pose-block IFT Jacobian vs refit central differences.

    Returns (fraction of entries within IFT_RTOL, entry count, instances
    kept). Instances are kept only when well-conditioned: the polished fit
    constrains all nine parameters and no perturbed refit jumps to another
    basin. Refits are polished onto the constraint manifold because the
    descent solver's plateau is far above finite-difference resolution.
    """
    rng = np.random.default_rng(seed)
    kept = 0
    hits = 0
    total = 0
    attempts = 0
    while kept < instances and attempts < instances * 8:
        attempts += 1
        points = _surface_minimal_set(rng)
        fitted, _, _ = fit_cuboid_batch(points[None], solver)
        base = polish_to_surface(fitted[0], points)
        s, j_params, _ = constraint_jacobians(base, points)
        sv = np.linalg.svd(j_params, compute_uv=False)
        if np.abs(s).max() > 1e-10 or sv[-1] <= 0 or sv[0] / sv[-1] > IFT_MAX_CONDITION:
            continue
        cuboid = Cuboid(base[0:3], base[3:6], base[6:9])
        jac, reliable = ift_gradient(MinimalSet(np.arange(MINIMAL_SET_SIZE), points), cuboid)
        if not reliable:
            continue

        perturbed = np.empty((2 * 27, MINIMAL_SET_SIZE, 3))
        for j in range(27):
            for row, sign in ((2 * j, step), (2 * j + 1, -step)):
                flat = points.reshape(-1).copy()
                flat[j] += sign
                perturbed[row] = flat.reshape(MINIMAL_SET_SIZE, 3)
        refits, _, _ = fit_cuboid_batch(perturbed, solver)
        fd = np.zeros((9, 27))
        jumped = False
        for j in range(27):
            hi = polish_to_surface(refits[2 * j], perturbed[2 * j])
            lo = polish_to_surface(refits[2 * j + 1], perturbed[2 * j + 1])
            if max(np.abs(hi - base).max(), np.abs(lo - base).max()) > 0.02:
                jumped = True
                break
            fd[:, j] = (hi - lo) / (2.0 * step)
        if jumped:
            continue
        kept += 1
        pose_ift, pose_fd = jac[3:9], fd[3:9]
        scale = np.abs(pose_fd).max()
        rel = np.abs(pose_ift - pose_fd) / np.maximum(
            np.maximum(np.abs(pose_ift), np.abs(pose_fd)), 1e-3 * scale
        )
        hits += int((rel < IFT_RTOL).sum())
        total += rel.size
    if kept < instances:
        raise RuntimeError(f"only {kept} well-conditioned instances after {attempts} attempts")
    return hits / total, total, kept


def run_gradcheck(seed: int, objective_configs: int = 100, ift_instances: int = 50) -> GradCheckReport:
    worst, checked = check_objective_gradient(seed, objective_configs)
    fraction, entries, kept = check_ift_gradient(seed + 1, ift_instances)
    return GradCheckReport(
        objective_max_rel_err=worst,
        objective_configs=checked,
        ift_fraction_within_tol=fraction,
        ift_entries=entries,
        ift_instances=kept,
    )
