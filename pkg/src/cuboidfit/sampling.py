"""Two-step minimal-set sampling over multiple weight rasters.

Weight rasters live at 1/8 of the depth resolution (nearest-neighbor block
expansion maps raster cells to pixels). Sampling first picks one raster by
its selection probability, then draws 9 distinct points without replacement,
proportionally to their pixel weights. All randomness flows through a
counter-based Philox generator keyed by (master seed, stream id), so
hypothesis generation parallelizes reproducibly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .scene import Scene
from .solver import MINIMAL_SET_SIZE, MinimalSet

# Raster cells cover this many pixels per side.
BLOCK = 8

WEIGHT_MAGIC = b"SWM1"


@dataclass(frozen=True)
class RngStream:
    """Key of a deterministic random stream; identical keys replay identical draws."""

    master_seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(key=np.array([self.master_seed, self.stream_id], dtype=np.uint64))
        )


def _as_generator(rng) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngStream) else rng


@dataclass(frozen=True)
class SamplingWeights:
    """Q per-pixel weight rasters at (ceil(H/8), ceil(W/8)) plus selection probs."""

    sets: np.ndarray  # (Q, Hr, Wr) nonnegative float
    selection: np.ndarray  # (Q,) sums to 1

    def __post_init__(self):
        sets = np.asarray(self.sets, dtype=float)
        sel = np.asarray(self.selection, dtype=float).reshape(-1)
        if sets.ndim != 3:
            raise ValueError(f"weight sets must be (Q, H, W), got shape {sets.shape}")
        if len(sel) != sets.shape[0]:
            raise ValueError("selection length must match the number of weight sets")
        if not np.all(np.isfinite(sets)) or np.any(sets < 0):
            raise ValueError("weights must be finite and nonnegative")
        if np.any(sel < 0) or abs(sel.sum() - 1.0) > 1e-6:
            raise ValueError("selection probabilities must be nonnegative and sum to 1")
        for q in range(sets.shape[0]):
            if np.count_nonzero(sets[q] > 0) < MINIMAL_SET_SIZE:
                raise ValueError(
                    f"weight set {q} has fewer than {MINIMAL_SET_SIZE} positive cells"
                )
        sets.flags.writeable = False
        sel.flags.writeable = False
        object.__setattr__(self, "sets", sets)
        object.__setattr__(self, "selection", sel)

    @property
    def count(self) -> int:
        return int(self.sets.shape[0])


def per_point_weights(raster: np.ndarray, scene: Scene) -> np.ndarray:
    """Expand a reduced-resolution raster to one weight per scene point."""
    raster = np.asarray(raster, dtype=float)
    if scene.resolution is None:
        if raster.shape != (1, 1):
            raise ValueError("weight rasters require a raster-backed scene")
        return np.full(len(scene), float(raster[0, 0]))
    H, W = scene.resolution
    expect = (-(-H // BLOCK), -(-W // BLOCK))
    if raster.shape != expect:
        raise ValueError(f"weight raster shape {raster.shape} does not match scene raster {expect}")
    v, u = scene.point_ids // W, scene.point_ids % W
    return raster[v // BLOCK, u // BLOCK]


def select_weight_set(weights: SamplingWeights, rng) -> int:
    """Categorical draw of one weight-set index by the selection probabilities."""
    gen = _as_generator(rng)
    cdf = np.cumsum(weights.selection)
    return int(min(np.searchsorted(cdf, gen.random(), side="right"), weights.count - 1))


def sample_minimal_set(weights_raster: np.ndarray, scene: Scene, rng) -> MinimalSet:
    """Draw 9 distinct point indices, proportionally to per-pixel weights.

    Without replacement via Gumbel top-k on the log weights; zero-weight
    points are never drawn.
    """
    gen = _as_generator(rng)
    w = per_point_weights(weights_raster, scene)
    positive = w > 0
    if int(positive.sum()) < MINIMAL_SET_SIZE:
        raise ValueError("insufficient support: fewer than 9 positive-weight valid pixels")
    with np.errstate(divide="ignore"):
        keys = np.log(w) - np.log(-np.log(gen.random(len(w))))
    order = np.argsort(keys)
    idx = order[-MINIMAL_SET_SIZE:][::-1].copy()
    return MinimalSet(indices=idx, points=scene.points[idx])


def uniform_weights(scene: Scene) -> SamplingWeights:
    """Q=1 uniform weights over valid pixels: the sequential-RANSAC baseline."""
    if len(scene) == 0:
        raise ValueError("scene has no valid points")
    if scene.resolution is None:
        return SamplingWeights(sets=np.ones((1, 1, 1)), selection=np.ones(1))
    H, W = scene.resolution
    Hr, Wr = -(-H // BLOCK), -(-W // BLOCK)
    raster = np.zeros((Hr, Wr))
    v, u = scene.point_ids // W, scene.point_ids % W
    raster[v // BLOCK, u // BLOCK] = 1.0
    return SamplingWeights(sets=raster[None], selection=np.ones(1))


def load_weights(path) -> SamplingWeights:
    """Read the binary weight-map format (magic, u32 dims, f32 payload)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != WEIGHT_MAGIC:
        raise ValueError(f"{path}: bad magic at byte 0, expected {WEIGHT_MAGIC!r}")
    if len(data) < 16:
        raise ValueError(f"{path}: truncated header at byte {len(data)}")
    h, w, q = struct.unpack_from("<III", data, 4)
    need = 16 + 4 * (q * h * w + q)
    if len(data) != need:
        raise ValueError(f"{path}: expected {need} bytes, got {len(data)} (at byte 16)")
    sets = np.frombuffer(data, dtype="<f4", count=q * h * w, offset=16)
    sel = np.frombuffer(data, dtype="<f4", count=q, offset=16 + 4 * q * h * w)
    if not np.all(np.isfinite(sets)) or not np.all(np.isfinite(sel)):
        raise ValueError(f"{path}: non-finite weight payload")
    return SamplingWeights(
        sets=sets.astype(float).reshape(q, h, w), selection=sel.astype(float)
    )


def save_weights(weights: SamplingWeights, path) -> None:
    q, h, w = weights.sets.shape
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<III", h, w, q))
        fh.write(weights.sets.astype("<f4").tobytes())
        fh.write(weights.selection.astype("<f4").tobytes())
