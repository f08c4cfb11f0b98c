"""Perturbation mask generation.

Each mask starts as a segment-wise Bernoulli(p) fill of the label map, is
bilinearly upsampled to floor((r+1)h) x floor((r+1)w), and an h x w window is
cropped back out at a uniformly random integer offset. Upsampling leaves the
masks continuous in [0, 1]; they are never re-binarized.

Randomness is counter-based: mask i of level k under master seed s draws from
its own Philox stream keyed by (s, k, i), so any single mask can be rebuilt
in isolation and generation can be parallelized or chunked without changing
the output. Per mask the draw order is fixed: segment bits, then row offset,
then column offset (offsets are drawn even when there is no crop headroom).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - the numpy fallback is equivalent
    _HAVE_NUMBA = False

from .segmentation import SegmentationMap

__all__ = [
    "MaskBatch",
    "generate_masks",
    "iter_mask_chunks",
    "apply_mask",
    "bilinear_resize",
    "resize_then_crop",
]

_CHUNK = 64  # masks upsampled at a time; bounds transient memory


@dataclass(frozen=True)
class MaskBatch:
    """N masks in [0, 1] for one segmentation level, plus their provenance."""

    level_index: int
    masks: np.ndarray  # (N, h, w) float32
    seed: int
    fill_probability: float
    resize_ratio: float

    def __post_init__(self):
        masks = np.ascontiguousarray(self.masks, dtype=np.float32)
        if masks.ndim != 3:
            raise ValueError("masks must have shape (N, h, w)")
        masks.flags.writeable = False
        object.__setattr__(self, "masks", masks)

    def __len__(self) -> int:
        return self.masks.shape[0]


def _mask_key(seed: int, level_index: int, mask_index: int) -> np.ndarray:
    # Philox key words: (master seed, level << 32 | index). Collision-free.
    return np.array(
        [np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64((level_index << 32) | mask_index)],
        dtype=np.uint64,
    )


def _mask_rng(seed: int, level_index: int, mask_index: int) -> np.random.Generator:
    """The counter-based stream of one mask, constructed in isolation."""
    return np.random.Generator(np.random.Philox(key=_mask_key(seed, level_index, mask_index)))


class _KeyedRngPool:
    """One reusable Philox generator, rekeyed per mask.

    Produces streams bit-identical to ``_mask_rng`` at a fraction of the
    construction cost (state assignment instead of object construction).
    Not safe for concurrent use; callers hold one pool per loop.
    """

    def __init__(self):
        self._philox = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        self._gen = np.random.Generator(self._philox)
        self._template = self._philox.state  # fresh state: empty buffers

    def keyed(self, seed: int, level_index: int, mask_index: int) -> np.random.Generator:
        state = dict(self._template)
        state["state"] = {
            "counter": np.zeros(4, dtype=np.uint64),
            "key": _mask_key(seed, level_index, mask_index),
        }
        self._philox.state = state
        return self._gen


def _sample_grid(in_size: int, out_size: int):
    """Half-pixel-center source positions for a 1-D bilinear resample:
    src = (dst + 0.5) * in/out - 0.5, clamped to the source extent."""
    s = np.clip((np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5, 0.0, in_size - 1.0)
    lo = np.floor(s).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = (s - lo).astype(np.float32)
    return lo, hi, frac


def bilinear_resize(grids: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resample a (N, h, w) stack (or one (h, w) grid) to the
    requested size, half-pixel-center convention, rows interpolated first.
    Values in [0, 1] stay in [0, 1]."""
    grids = np.asarray(grids, dtype=np.float32)
    squeeze = grids.ndim == 2
    if squeeze:
        grids = grids[None]
    n, h, w = grids.shape
    if (out_h, out_w) == (h, w):
        out = grids.copy()
        return out[0] if squeeze else out

    y0, y1, fy = _sample_grid(h, out_h)
    x0, x1, fx = _sample_grid(w, out_w)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    rows = grids[:, y0, :] * (1 - fy) + grids[:, y1, :] * fy
    out = rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx
    return out[0] if squeeze else out


def _band_lerp(g0: np.ndarray, g1: np.ndarray, rows, cols, col_lo, fy, x0, x1, fx) -> np.ndarray:
    """Shared second half of the windowed resample: lerp rows, gather the
    needed columns of the band, lerp columns."""
    rfy = fy[rows][:, :, None]
    cfx = fx[cols][:, None, :]
    interp = g0 * (1 - rfy) + g1 * rfy
    cx0 = (x0[cols] - col_lo[:, None])[:, None, :]
    cx1 = (x1[cols] - col_lo[:, None])[:, None, :]
    a = np.take_along_axis(interp, cx0, axis=2)
    b = np.take_along_axis(interp, cx1, axis=2)
    return a * (1 - cfx) + b * cfx


def _resize_then_crop_numpy(grids, up_h, up_w, dy, dx, out_h, out_w):
    grids = np.asarray(grids, dtype=np.float32)
    n = grids.shape[0]
    y0, y1, fy = _sample_grid(grids.shape[1], up_h)
    x0, x1, fx = _sample_grid(grids.shape[2], up_w)

    rows = np.asarray(dy)[:, None] + np.arange(out_h)  # (n, out_h) indices into the upsample
    cols = np.asarray(dx)[:, None] + np.arange(out_w)
    ridx = np.arange(n)[:, None, None]

    # the crop samples only a narrow contiguous band of source columns per
    # grid; restrict the row pass to that band, then gather columns in it
    col_lo = x0[cols[:, 0]]
    band = int((x1[cols[:, -1]] - col_lo).max()) + 1
    # clamped tail positions are gathered but never selected in the col pass
    band_cols = np.minimum(col_lo[:, None, None] + np.arange(band)[None, None, :], grids.shape[2] - 1)
    g0 = grids[ridx, y0[rows][:, :, None], band_cols]
    g1 = grids[ridx, y1[rows][:, :, None], band_cols]
    return _band_lerp(g0, g1, rows, cols, col_lo, fy, x0, x1, fx)


def _paint_resize_crop_numpy(bits, labels, up_h, up_w, dy, dx):
    h, w = labels.shape
    n, n_seg = bits.shape
    y0, y1, fy = _sample_grid(h, up_h)
    x0, x1, fx = _sample_grid(w, up_w)

    rows = np.asarray(dy)[:, None] + np.arange(h)
    cols = np.asarray(dx)[:, None] + np.arange(w)
    col_lo = x0[cols[:, 0]]
    band = int((x1[cols[:, -1]] - col_lo).max()) + 1
    band_cols = np.minimum(col_lo[:, None, None] + np.arange(band)[None, None, :], w - 1)

    flat = bits.ravel()
    base = (np.arange(n, dtype=np.int64) * n_seg)[:, None, None]
    g0 = np.take(flat, base + labels[y0[rows][:, :, None], band_cols])
    g1 = np.take(flat, base + labels[y1[rows][:, :, None], band_cols])
    return _band_lerp(g0, g1, rows, cols, col_lo, fy, x0, x1, fx)


if _HAVE_NUMBA:

    @_njit(cache=True)
    def _resample_grids_kernel(grids, y0, y1, fy, x0, x1, fx, dy, dx, out):
        one = np.float32(1.0)
        n, out_h, out_w = out.shape
        for k in range(n):
            for i in range(out_h):
                r = dy[k] + i
                ra, rb, f_y = y0[r], y1[r], fy[r]
                for j in range(out_w):
                    c = dx[k] + j
                    ca, cb, f_x = x0[c], x1[c], fx[c]
                    left = grids[k, ra, ca] * (one - f_y) + grids[k, rb, ca] * f_y
                    right = grids[k, ra, cb] * (one - f_y) + grids[k, rb, cb] * f_y
                    out[k, i, j] = left * (one - f_x) + right * f_x

    @_njit(cache=True)
    def _resample_bits_kernel(bits, labels, y0, y1, fy, x0, x1, fx, dy, dx, out):
        one = np.float32(1.0)
        n, out_h, out_w = out.shape
        for k in range(n):
            for i in range(out_h):
                r = dy[k] + i
                ra, rb, f_y = y0[r], y1[r], fy[r]
                for j in range(out_w):
                    c = dx[k] + j
                    ca, cb, f_x = x0[c], x1[c], fx[c]
                    left = bits[k, labels[ra, ca]] * (one - f_y) + bits[k, labels[rb, ca]] * f_y
                    right = bits[k, labels[ra, cb]] * (one - f_y) + bits[k, labels[rb, cb]] * f_y
                    out[k, i, j] = left * (one - f_x) + right * f_x


def resize_then_crop(
    grids: np.ndarray,
    up_h: int,
    up_w: int,
    dy: np.ndarray,
    dx: np.ndarray,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Per-grid window [dy : dy+out_h, dx : dx+out_w] of the (up_h, up_w)
    bilinear upsample, computing only the cropped pixels. Bit-identical to
    ``bilinear_resize`` followed by slicing (the compiled and numpy paths
    apply the same per-element operations in the same order)."""
    grids = np.ascontiguousarray(grids, dtype=np.float32)
    if not _HAVE_NUMBA:
        return _resize_then_crop_numpy(grids, up_h, up_w, dy, dx, out_h, out_w)
    y0, y1, fy = _sample_grid(grids.shape[1], up_h)
    x0, x1, fx = _sample_grid(grids.shape[2], up_w)
    out = np.empty((grids.shape[0], out_h, out_w), dtype=np.float32)
    _resample_grids_kernel(
        grids, y0, y1, fy, x0, x1, fx, np.ascontiguousarray(dy), np.ascontiguousarray(dx), out
    )
    return out


def _paint_resize_crop(
    bits: np.ndarray,
    labels: np.ndarray,
    up_h: int,
    up_w: int,
    dy: np.ndarray,
    dx: np.ndarray,
) -> np.ndarray:
    """Fused segment paint + windowed resample: reads the per-segment bits
    straight through the label map, skipping the full (n, h, w) fill.
    Bit-identical to ``bits[:, labels]`` followed by ``resize_then_crop``."""
    if not _HAVE_NUMBA:
        return _paint_resize_crop_numpy(bits, labels, up_h, up_w, dy, dx)
    h, w = labels.shape
    y0, y1, fy = _sample_grid(h, up_h)
    x0, x1, fx = _sample_grid(w, up_w)
    out = np.empty((bits.shape[0], h, w), dtype=np.float32)
    _resample_bits_kernel(
        np.ascontiguousarray(bits),
        np.ascontiguousarray(labels.astype(np.int64)),
        y0,
        y1,
        fy,
        x0,
        x1,
        fx,
        np.ascontiguousarray(dy),
        np.ascontiguousarray(dx),
        out,
    )
    return out


def iter_mask_chunks(
    seg: SegmentationMap,
    n: int,
    p: float,
    r: float,
    seed: int,
    level_index: int = 0,
    chunk: int = _CHUNK,
):
    """Yield (start_index, masks) chunks without materializing all N masks."""
    if not (0.0 <= p <= 1.0):
        raise ValueError("fill probability must lie in [0, 1]")
    if r < 0.0:
        raise ValueError("resize ratio must be >= 0")
    if n < 1:
        raise ValueError("need at least one mask")

    h, w = seg.height, seg.width
    n_seg = seg.n_actual
    labels = seg.labels
    up_h = int(np.floor((r + 1.0) * h))
    up_w = int(np.floor((r + 1.0) * w))
    upsample = (up_h, up_w) != (h, w)

    pool = _KeyedRngPool()
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        bits = np.empty((m, n_seg), dtype=np.float32)
        dy = np.empty(m, dtype=np.int64)
        dx = np.empty(m, dtype=np.int64)
        for j in range(m):
            rng = pool.keyed(seed, level_index, start + j)
            bits[j] = rng.random(n_seg) < p
            dy[j] = rng.integers(0, up_h - h + 1)
            dx[j] = rng.integers(0, up_w - w + 1)

        if upsample:
            grids = _paint_resize_crop(bits, labels, up_h, up_w, dy, dx)
        else:
            grids = bits[:, labels]  # (m, h, w) binary fills
        yield start, np.ascontiguousarray(grids, dtype=np.float32)


def generate_masks(
    seg: SegmentationMap,
    n: int,
    p: float,
    r: float,
    seed: int,
    level_index: int = 0,
) -> MaskBatch:
    """Generate the full batch of ``n`` perturbation masks for one level."""
    parts = [masks for _, masks in iter_mask_chunks(seg, n, p, r, seed, level_index)]
    return MaskBatch(
        level_index=level_index,
        masks=np.concatenate(parts, axis=0),
        seed=seed,
        fill_probability=p,
        resize_ratio=r,
    )


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Occlude an image with a mask: per-pixel, per-channel multiply."""
    img = np.asarray(img)
    mask = np.asarray(mask)
    if img.shape[:2] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    return img * mask[..., None]


def save_mask_pngs(batch: MaskBatch, directory, limit: int | None = None) -> list:
    """Debug dump of masks as 8-bit grayscale PNGs; returns written paths."""
    from pathlib import Path

    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    count = len(batch) if limit is None else min(limit, len(batch))
    for i in range(count):
        arr = np.round(batch.masks[i] * 255.0).astype(np.uint8)
        path = directory / f"mask_L{batch.level_index}_{i:05d}.png"
        Image.fromarray(arr, mode="L").save(path)
        paths.append(path)
    return paths
