"""Sequential robust fitting: sample, fit, select by inlier count, repeat.

Each round draws a pool of cuboid hypotheses from minimal sets, scores every
hypothesis by the occlusion-aware inlier count of the scene against the
current set plus that hypothesis, and accepts the argmax if it improves the
joint count by more than the cutoff. Uniform weights reproduce the
sequential-RANSAC baseline; nothing else in the code path changes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CameraModel, Cuboid
from .inliers import InlierParams, _fuse, io_extrema, ordered_sum
from .sampling import RngStream, SamplingWeights, sample_minimal_set, select_weight_set
from .scene import Scene
from .geometry import angle_axis, occlusion_distance, point_cuboid_distance, rotation_matrix
from .solver import (
    MINIMAL_SET_SIZE,
    MinimalSet,
    SolverConfig,
    fit_cuboid_batch,
    objective_gradient,
)

# Hypotheses are processed in fixed-size chunks so results do not depend on
# the worker count.
CHUNK = 64
RETRY_LIMIT = 10


@dataclass(frozen=True)
class FitConfig:
    max_instances: int = 6
    hypotheses_per_round: int = 4096
    cutoff: float = 10.0
    inlier: InlierParams = field(default_factory=InlierParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    master_seed: int = 0
    occlusion_aware: bool = True
    threads: int = 1
    # Accepted hypotheses are polished on their supporting points; minimal-set
    # fits at the Table-5 budget are only tau-band accurate, so without this
    # the recovered boxes inherit that coarseness.
    refine: bool = True
    refine_solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(iterations=400, learning_rate=0.05)
    )

    def __post_init__(self):
        if self.max_instances < 1 or self.hypotheses_per_round < 1:
            raise ValueError("max_instances and hypotheses_per_round must be >= 1")
        if self.cutoff < 0:
            raise ValueError("cutoff must be nonnegative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    cuboid: Cuboid
    minimal_set: MinimalSet
    score: float
    weight_set_index: int
    degenerate: bool = False


@dataclass(frozen=True)
class CuboidSet:
    """Accepted cuboids in acceptance order with their joint inlier counts."""

    cuboids: tuple[Cuboid, ...] = ()
    scores: tuple[float, ...] = ()

    def __len__(self) -> int:
        return len(self.cuboids)

    def __iter__(self):
        return iter(self.cuboids)


def _map_chunks(fn, n_items: int, threads: int):
    """Apply fn to fixed-size index chunks, in order; thread-count independent."""
    chunks = [(lo, min(lo + CHUNK, n_items)) for lo in range(0, n_items, CHUNK)]
    if threads <= 1 or len(chunks) <= 1:
        return [fn(lo, hi) for lo, hi in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda span: fn(*span), chunks))


def generate_hypotheses(
    scene: Scene,
    weights: SamplingWeights,
    config: FitConfig,
    round_index: int,
) -> list[Hypothesis]:
    """One pool of hypotheses; slot k uses stream id round*|H| + k.

    Degenerate or non-finite fits are redrawn from the same stream up to
    RETRY_LIMIT times, then kept flagged. Scores are filled in by selection.
    """
    if len(scene) < MINIMAL_SET_SIZE:
        raise ValueError("insufficient support: scene has fewer than 9 valid points")
    n = config.hypotheses_per_round

    def draw(lo: int, hi: int):
        sets: list[MinimalSet] = []
        set_idx: list[int] = []
        gens: list[np.random.Generator] = []
        for slot in range(lo, hi):
            stream = RngStream(config.master_seed, round_index * n + slot)
            gen = stream.generator()
            gens.append(gen)
            q = select_weight_set(weights, gen)
            set_idx.append(q)
            sets.append(sample_minimal_set(weights.sets[q], scene, gen))
        points = np.stack([ms.points for ms in sets])
        params, degenerate, _ = fit_cuboid_batch(points, config.solver)
        for _ in range(RETRY_LIMIT):
            retry = np.nonzero(degenerate)[0]
            if retry.size == 0:
                break
            for k in retry:
                q = select_weight_set(weights, gens[k])
                set_idx[k] = q
                sets[k] = sample_minimal_set(weights.sets[q], scene, gens[k])
            redo, flags, _ = fit_cuboid_batch(
                np.stack([sets[k].points for k in retry]), config.solver
            )
            params[retry] = redo
            degenerate[retry] = flags
        return [
            Hypothesis(
                cuboid=Cuboid(p[0:3], p[3:6], p[6:9]),
                minimal_set=ms,
                score=float("nan"),
                weight_set_index=qi,
                degenerate=bool(flag),
            )
            for p, ms, qi, flag in zip(params, sets, set_idx, degenerate)
        ]

    pools = _map_chunks(draw, n, config.threads)
    return [h for chunk in pools for h in chunk]


def _pool_scores(
    pool: list[Hypothesis],
    current_min_io: np.ndarray,
    current_max_io: np.ndarray,
    scene: Scene,
    camera: CameraModel,
    config: FitConfig,
) -> np.ndarray:
    """I_c(Y, M u {h}) for every pool entry, given cached extrema for M."""

    def score(lo: int, hi: int):
        out = np.empty(hi - lo)
        for k in range(lo, hi):
            lo_io, hi_io = io_extrema(
                pool[k].cuboid, scene.points, camera, config.inlier, config.occlusion_aware
            )
            fused = _fuse(
                np.minimum(current_min_io, lo_io), np.maximum(current_max_io, hi_io)
            )
            out[k - lo] = ordered_sum(fused, scene.point_ids)
        return out

    return np.concatenate(_map_chunks(score, len(pool), config.threads))


def _empty_extrema(n: int):
    return np.full(n, np.inf), np.full(n, -np.inf)


def select_best(
    pool: list[Hypothesis],
    current: CuboidSet,
    scene: Scene,
    camera: CameraModel,
    config: FitConfig,
) -> Hypothesis:
    """Argmax of the joint inlier count; ties break to the lowest pool index."""
    if not pool:
        raise ValueError("empty hypothesis pool")
    min_io, max_io = _empty_extrema(len(scene))
    for cuboid in current:
        lo, hi = io_extrema(cuboid, scene.points, camera, config.inlier, config.occlusion_aware)
        min_io = np.minimum(min_io, lo)
        max_io = np.maximum(max_io, hi)
    scores = _pool_scores(pool, min_io, max_io, scene, camera, config)
    best = int(np.argmax(scores))
    return replace(pool[best], score=float(scores[best]))


def selection_probabilities(
    pool: list[Hypothesis],
    current: CuboidSet,
    scene: Scene,
    camera: CameraModel,
    config: FitConfig,
) -> np.ndarray:
    """Softmax of the pool's inlier counts (max-subtracted for overflow safety)."""
    if not pool:
        raise ValueError("empty hypothesis pool")
    min_io, max_io = _empty_extrema(len(scene))
    for cuboid in current:
        lo, hi = io_extrema(cuboid, scene.points, camera, config.inlier, config.occlusion_aware)
        min_io = np.minimum(min_io, lo)
        max_io = np.maximum(max_io, hi)
    scores = _pool_scores(pool, min_io, max_io, scene, camera, config)
    z = np.exp(scores - scores.max())
    return z / z.sum()


def _support_oa(cuboid: Cuboid, points: np.ndarray, camera: CameraModel) -> float:
    """Mean occlusion-aware distance of the given points to one cuboid."""
    if len(points) == 0:
        return 0.0
    d = point_cuboid_distance(cuboid, points)
    return float(np.mean(np.maximum(d, occlusion_distance([cuboid], points, camera))))


def refine_cuboid(
    cuboid: Cuboid,
    points: np.ndarray,
    config: SolverConfig,
    band: float,
) -> Cuboid:
    """Warm-start descent of an accepted cuboid on its supporting points.

    Support is every point within `band` of the surface; descent runs in the
    cuboid's own frame so the chart is centred on the warm start.
    """
    near = point_cuboid_distance(cuboid, points) < band
    support = points[near]
    if len(support) < MINIMAL_SET_SIZE:
        return cuboid
    R0 = cuboid.matrix
    t0 = cuboid.translation
    local = (support - t0) @ R0.T
    params = np.zeros((1, 9))
    params[0, 0:3] = cuboid.half_extents
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate
    obj, grad = objective_gradient(params, local[None])
    best_obj = obj.copy()
    best = params.copy()
    for step in range(1, config.iterations + 1):
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad**2
        params = params - lr * (m / (1.0 - b1**step)) / (np.sqrt(v / (1.0 - b2**step)) + eps)
        params[:, 0:3] = np.maximum(params[:, 0:3], 1e-4)
        obj, grad = objective_gradient(params, local[None])
        if not np.isfinite(obj[0]):
            break
        if obj[0] < best_obj[0]:
            best_obj = obj.copy()
            best = params.copy()
    p = best[0]
    return Cuboid(p[0:3], angle_axis(rotation_matrix(p[3:6]) @ R0), t0 + R0.T @ p[6:9])


def sequential_fit(
    scene: Scene,
    weights: SamplingWeights | list[SamplingWeights],
    config: FitConfig,
    camera: CameraModel | None = None,
) -> CuboidSet:
    """Accept hypotheses one by one while each raises the joint count by > cutoff.

    The empty set counts as 0. Rounds reuse the same weights unless a list
    supplies per-round ones. An empty result is valid, not an error.
    """
    camera = scene.camera if camera is None else camera
    per_round = weights if isinstance(weights, list) else [weights]

    cuboids: list[Cuboid] = []
    scores: list[float] = []
    current_count = 0.0
    min_io, max_io = _empty_extrema(len(scene))

    for round_index in range(config.max_instances):
        w = per_round[min(round_index, len(per_round) - 1)]
        pool = generate_hypotheses(scene, w, config, round_index)
        pool_scores = _pool_scores(pool, min_io, max_io, scene, camera, config)
        best = int(np.argmax(pool_scores))
        best_score = float(pool_scores[best])
        if best_score - current_count <= config.cutoff:
            break
        accepted = pool[best].cuboid
        if config.refine:
            band = 2.0 * np.sqrt(config.inlier.tau)
            polished = refine_cuboid(accepted, scene.points, config.refine_solver, band)
            if polished is not accepted:
                polished_score = float(
                    _pool_scores(
                        [replace(pool[best], cuboid=polished)],
                        min_io, max_io, scene, camera, config,
                    )[0]
                )
                support = point_cuboid_distance(accepted, scene.points) < band
                before = _support_oa(accepted, scene.points[support], camera)
                after = _support_oa(polished, scene.points[support], camera)
                # The polish must still clear the cutoff and must tighten the
                # occlusion-aware misfit on its own support. Soft counts alone
                # cannot veto thin fits whose solid slides in front of the
                # points (both faces stay inside the tau band).
                if polished_score - current_count > config.cutoff and after <= before:
                    accepted = polished
                    best_score = polished_score
        cuboids.append(accepted)
        scores.append(best_score)
        current_count = best_score
        lo, hi = io_extrema(
            accepted, scene.points, camera, config.inlier, config.occlusion_aware
        )
        min_io = np.minimum(min_io, lo)
        max_io = np.maximum(max_io, hi)

    return CuboidSet(cuboids=tuple(cuboids), scores=tuple(scores))
