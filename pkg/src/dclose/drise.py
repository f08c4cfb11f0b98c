"""Grid-mask baseline explainer.

Masks come from a coarse Bernoulli mesh (default 16x16, p=0.5, N=5000)
bilinearly upsampled and randomly shifted by up to one cell, and the map is
the plain weighted mean of the masks under the same proposal-similarity
weights the multi-level engine uses. No density normalization, no fusion —
this is the comparison baseline, sharing scoring and resampling conventions
so benchmark differences isolate the methods themselves.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import SaliencyMap, TargetSpec, minmax_normalize, validate_image
from .detector import DetectorHandle
from .maskgen import MaskBatch, _KeyedRngPool, resize_then_crop
from .saliency import mask_weight

__all__ = ["GridMaskConfig", "generate_grid_masks", "iter_grid_mask_chunks", "drise_explain"]

_CHUNK = 64


@dataclass(frozen=True)
class GridMaskConfig:
    """Mesh resolution, fill probability and sample count for grid masks."""

    grid_h: int = 16
    grid_w: int = 16
    fill_probability: float = 0.5
    n_masks: int = 5000
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError("grid resolution must be >= 1")
        if not (0.0 <= self.fill_probability <= 1.0):
            raise ValueError("fill_probability must lie in [0, 1]")
        if self.n_masks < 1:
            raise ValueError("n_masks must be >= 1")


def iter_grid_mask_chunks(cfg: GridMaskConfig, height: int, width: int, chunk: int = _CHUNK):
    """Yield (start_index, masks) chunks of grid masks for an image size.

    Per mask: Bernoulli(p) bits on the grid, bilinear upsample so one grid
    cell maps to ceil(size/grid) pixels with one spare cell of headroom, then
    an h x w crop at a uniform random offset inside that cell. Per-mask RNG
    and draw order (bits, row offset, col offset) mirror the segment masks.
    """
    cell_h = math.ceil(height / cfg.grid_h)
    cell_w = math.ceil(width / cfg.grid_w)
    up_h = (cfg.grid_h + 1) * cell_h
    up_w = (cfg.grid_w + 1) * cell_w

    pool = _KeyedRngPool()
    for start in range(0, cfg.n_masks, chunk):
        m = min(chunk, cfg.n_masks - start)
        bits = np.empty((m, cfg.grid_h, cfg.grid_w), dtype=np.float32)
        dy = np.empty(m, dtype=np.int64)
        dx = np.empty(m, dtype=np.int64)
        for j in range(m):
            rng = pool.keyed(cfg.seed, 0, start + j)
            bits[j] = (rng.random((cfg.grid_h, cfg.grid_w)) < cfg.fill_probability).astype(np.float32)
            dy[j] = rng.integers(0, cell_h)
            dx[j] = rng.integers(0, cell_w)
        masks = resize_then_crop(bits, up_h, up_w, dy, dx, height, width)
        yield start, np.ascontiguousarray(masks, dtype=np.float32)


def generate_grid_masks(cfg: GridMaskConfig, height: int, width: int) -> MaskBatch:
    """Materialize the full grid-mask batch (tests and small runs)."""
    parts = [masks for _, masks in iter_grid_mask_chunks(cfg, height, width)]
    return MaskBatch(
        level_index=0,
        masks=np.concatenate(parts, axis=0),
        seed=cfg.seed,
        fill_probability=cfg.fill_probability,
        resize_ratio=0.0,  # grid masks shift by one cell, not by a ratio
    )


def drise_explain(
    img: np.ndarray,
    det: DetectorHandle,
    target: TargetSpec,
    cfg: GridMaskConfig | None = None,
    progress=None,
    timings: dict | None = None,
) -> SaliencyMap:
    """Baseline saliency: weighted mean of grid masks, min-max normalized."""
    cfg = cfg or GridMaskConfig()
    img = validate_image(img)
    img32 = np.ascontiguousarray(img, dtype=np.float32)
    h, w = img32.shape[:2]

    weighted = np.zeros((h, w), dtype=np.float64)
    seen = 0
    for start, masks in iter_grid_mask_chunks(cfg, h, w, chunk=cfg.batch_size):
        t0 = time.perf_counter()
        masked = img32[None, :, :, :] * masks[:, :, :, None]
        results = det.detect_batch(list(masked))
        weights = np.array([mask_weight(ps, target) for ps in results], dtype=np.float64)
        weighted += np.einsum("n,nhw->hw", weights, masks.astype(np.float64))
        seen += masks.shape[0]
        if timings is not None:
            timings["inference"] = timings.get("inference", 0.0) + (time.perf_counter() - t0)
        if progress is not None and (start // max(cfg.batch_size, 1)) % 32 == 0:
            progress(f"grid masks scored: {seen}/{cfg.n_masks}")
    return minmax_normalize(SaliencyMap((weighted / seen).astype(np.float32)))
