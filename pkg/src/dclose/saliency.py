"""The multi-level explanation engine.

For each segmentation level the image is perturbed with N soft masks, every
masked image goes through the detector, and each mask is weighted by the best
similarity between the detector's proposals and the target detection
(IoU x objectness x class-score cosine, max over proposals). Per level, the
weighted sum of masks is divided pixelwise by the density map (the plain sum
of masks) to cancel uneven mask coverage; the per-level maps are min-max
normalized and combined by a cascading add-then-gate recursion, finest level
first:

    A_1 = (S_1 + S_2) * S_2
    A_k = (A_{k-1} + S_{k+1}) * S_{k+1}

The final map is A_{L-1}, min-max normalized.

Accumulation runs in double precision and follows a fixed reduction order
(level, then mask index), so identical seeds give bit-identical results;
outputs are stored in single precision.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    DetectionVector,
    ExplainConfig,
    SaliencyMap,
    TargetSpec,
    minmax_normalize,
    validate_image,
)
from .core import iou as box_iou
from .core import cosine as score_cosine
from .detector import DetectorHandle, ProposalSet
from .maskgen import iter_mask_chunks
from .segmentation import slic_segment

__all__ = [
    "similarity",
    "mask_weight",
    "LevelAccumulator",
    "accumulate",
    "finalize_level",
    "FusionStack",
    "fusion_cascade",
    "fuse",
    "explain",
    "explain_ablations",
    "write_dcls",
    "read_dcls",
    "write_csv",
]


def similarity(d_p: DetectionVector, d_t: TargetSpec | DetectionVector) -> float:
    """Similarity between a proposal and the target: IoU of the boxes times
    the proposal's objectness times the cosine of the class-score vectors."""
    t = d_t.target if isinstance(d_t, TargetSpec) else d_t
    overlap = box_iou(d_p.box, t.box)
    if overlap == 0.0:
        return 0.0
    return overlap * d_p.objectness * score_cosine(d_p.class_scores, t.class_scores)


def mask_weight(props: ProposalSet, d_t: TargetSpec) -> float:
    """Best similarity over all proposals of one masked image; 0 when the
    detector found nothing."""
    best = 0.0
    for p in props:
        s = similarity(p, d_t)
        if s > best:
            best = s
    return best


@dataclass
class LevelAccumulator:
    """Running weighted sum of masks plus the mask density for one level.

    Workers may each own one and merge afterwards; merging is associative and
    commutative up to float rounding.
    """

    weighted_sum: np.ndarray  # (h, w) float64
    density: np.ndarray  # (h, w) float64
    count: int = 0

    @classmethod
    def zeros(cls, height: int, width: int) -> "LevelAccumulator":
        return cls(
            weighted_sum=np.zeros((height, width), dtype=np.float64),
            density=np.zeros((height, width), dtype=np.float64),
        )

    def add(self, mask: np.ndarray, weight: float) -> None:
        if mask.shape != self.weighted_sum.shape:
            raise ValueError(f"mask shape {mask.shape} does not match accumulator {self.weighted_sum.shape}")
        if not (0.0 <= weight <= 1.0):
            raise ValueError(f"mask weight must lie in [0, 1], got {weight}")
        self.weighted_sum += weight * mask.astype(np.float64)
        self.density += mask
        self.count += 1

    def add_batch(self, masks: np.ndarray, weights: np.ndarray) -> None:
        if masks.shape[0] != len(weights):
            raise ValueError("one weight per mask required")
        weights = np.asarray(weights, dtype=np.float64)
        if weights.size and (weights.min() < 0.0 or weights.max() > 1.0):
            raise ValueError("mask weights must lie in [0, 1]")
        self.weighted_sum += np.einsum("n,nhw->hw", weights, masks, dtype=np.float64)
        self.density += masks.sum(axis=0, dtype=np.float64)
        self.count += masks.shape[0]

    def merge(self, other: "LevelAccumulator") -> None:
        self.weighted_sum += other.weighted_sum
        self.density += other.density
        self.count += other.count

    def finalize(self, use_density: bool = True) -> SaliencyMap:
        if self.count < 1:
            raise ValueError("cannot finalize an empty accumulator")
        if use_density:
            out = np.divide(
                self.weighted_sum,
                self.density,
                out=np.zeros_like(self.weighted_sum),
                where=self.density > 0,
            )
        else:
            out = self.weighted_sum / self.count
        return SaliencyMap(out.astype(np.float32))


def accumulate(acc: LevelAccumulator, mask: np.ndarray, weight: float) -> LevelAccumulator:
    """Absorb one (mask, weight) pair; returns the same accumulator."""
    acc.add(mask, weight)
    return acc


def finalize_level(acc: LevelAccumulator, use_density: bool = True) -> SaliencyMap:
    """Per-pixel average score: weighted sum over density (pixels never
    covered get 0), or the plain mean over the mask count when density
    normalization is ablated."""
    return acc.finalize(use_density)


@dataclass(frozen=True)
class FusionStack:
    """Per-level saliency grids in fusion order (finest first by default).

    Callers normalize each level before stacking; the cascade itself mixes
    sums and products and assumes a common scale.
    """

    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        levels = tuple(np.asarray(m, dtype=np.float64) for m in self.levels)
        if not levels:
            raise ValueError("fusion stack needs at least one level")
        shape = levels[0].shape
        for m in levels[1:]:
            if m.shape != shape:
                raise ValueError("all fused maps must share dimensions")
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)


def fusion_cascade(levels) -> list[np.ndarray]:
    """The raw add-then-gate recursion; returns [A_1, ..., A_{L-1}]."""
    levels = [np.asarray(m, dtype=np.float64) for m in levels]
    steps: list[np.ndarray] = []
    current = levels[0]
    for nxt in levels[1:]:
        current = (current + nxt) * nxt
        steps.append(current)
    return steps


def fuse(stack: FusionStack) -> SaliencyMap:
    """Collapse a stack of per-level maps into one, min-max normalized."""
    if len(stack) == 1:
        return minmax_normalize(SaliencyMap(stack.levels[0].astype(np.float32)))
    final = fusion_cascade(stack.levels)[-1]
    return minmax_normalize(SaliencyMap(final.astype(np.float32)))


def _level_order(cfg: ExplainConfig) -> list[int]:
    """Level indices sorted for fusion: finest (most segments) first unless
    the config flips the order."""
    idx = sorted(range(cfg.levels), key=lambda k: cfg.segments_per_level[k])
    if cfg.fusion_order == "fine_to_coarse":
        idx.reverse()
    return idx


def compute_level_accumulators(
    img: np.ndarray,
    det: DetectorHandle,
    target: TargetSpec,
    cfg: ExplainConfig,
    progress=None,
    timings: dict | None = None,
) -> list[LevelAccumulator]:
    """Run the expensive half of the pipeline: segment, mask, detect, weight
    and accumulate per level, in the fixed reference order."""
    img = validate_image(img)
    if det.class_count is not None and target.target.class_scores.size != det.class_count:
        raise ValueError(
            f"target has {target.target.class_scores.size} class scores, detector expects {det.class_count}"
        )
    img32 = np.ascontiguousarray(img, dtype=np.float32)
    h, w = img32.shape[:2]

    accs: list[LevelAccumulator] = []
    for k, n_segments in enumerate(cfg.segments_per_level):
        t0 = time.perf_counter()
        seg = slic_segment(img32, n_segments)
        t1 = time.perf_counter()
        if timings is not None:
            timings["segmentation"] = timings.get("segmentation", 0.0) + (t1 - t0)

        acc = LevelAccumulator.zeros(h, w)
        for start, masks in iter_mask_chunks(
            seg,
            cfg.masks_per_level,
            cfg.fill_probability,
            cfg.resize_ratio,
            cfg.master_seed,
            level_index=k,
            chunk=cfg.batch_size,
        ):
            t2 = time.perf_counter()
            masked = img32[None, :, :, :] * masks[:, :, :, None]
            results = det.detect_batch(list(masked))
            weights = np.array([mask_weight(ps, target) for ps in results], dtype=np.float64)
            t3 = time.perf_counter()
            acc.add_batch(masks, weights)
            if timings is not None:
                timings["inference"] = timings.get("inference", 0.0) + (t3 - t2)
        accs.append(acc)
        if progress is not None:
            progress(f"level {k + 1}/{cfg.levels} ({n_segments} segments): {acc.count} masks scored")
    return accs


def compose_saliency(accs: list[LevelAccumulator], cfg: ExplainConfig) -> SaliencyMap:
    """Finalize per-level maps and combine them per the config's ablation
    switches: cascade fusion, or the plain mean of the normalized levels."""
    maps = [minmax_normalize(acc.finalize(cfg.use_density)) for acc in accs]
    order = _level_order(cfg)
    ordered = [maps[k].values for k in order]
    if len(ordered) == 1:
        return maps[order[0]]
    if cfg.use_fusion:
        return fuse(FusionStack(tuple(ordered)))
    mean = np.mean(np.stack(ordered, axis=0), axis=0)
    return SaliencyMap(mean.astype(np.float32), normalized=False)


def explain(
    img: np.ndarray,
    det: DetectorHandle,
    target: TargetSpec,
    cfg: ExplainConfig | None = None,
    progress=None,
    timings: dict | None = None,
) -> SaliencyMap:
    """Explain one detection: returns the pixel-importance map for ``target``.

    Deterministic given (img, det, target, cfg). Backend failures propagate
    as BackendError.
    """
    cfg = cfg or ExplainConfig()
    accs = compute_level_accumulators(img, det, target, cfg, progress=progress, timings=timings)
    t0 = time.perf_counter()
    out = compose_saliency(accs, cfg)
    if timings is not None:
        timings["compose"] = timings.get("compose", 0.0) + (time.perf_counter() - t0)
    return out


ABLATION_SETTINGS = (
    ("segment_only", False, False),
    ("with_density", True, False),
    ("with_fusion", True, True),
)


def explain_ablations(
    img: np.ndarray,
    det: DetectorHandle,
    target: TargetSpec,
    cfg: ExplainConfig | None = None,
    progress=None,
) -> dict[str, SaliencyMap]:
    """All three ablation settings from one pass over the detector.

    The heavy accumulators are shared; only finalize/fusion differ, which is
    exactly what the ablation toggles change.
    """
    cfg = cfg or ExplainConfig()
    accs = compute_level_accumulators(img, det, target, cfg, progress=progress)
    out = {}
    for name, use_density, use_fusion in ABLATION_SETTINGS:
        out[name] = compose_saliency(accs, cfg.with_ablation(use_density, use_fusion))
    return out


# --- raw map serialization ----------------------------------------------------

_DCLS_MAGIC = b"DCLS"
_DCLS_HEADER = struct.Struct("<4sIII")  # magic, width, height, reserved


def write_dcls(m: SaliencyMap, path) -> None:
    """Raw grid format: 16-byte header (magic "DCLS", u32 width, u32 height,
    u32 reserved) followed by row-major little-endian float32 values."""
    with open(path, "wb") as f:
        f.write(_DCLS_HEADER.pack(_DCLS_MAGIC, m.width, m.height, 0))
        f.write(np.ascontiguousarray(m.values, dtype="<f4").tobytes())


def write_csv(m: SaliencyMap, path) -> None:
    """Plain-text export of the grid, one row per line."""
    np.savetxt(path, m.values, fmt="%.7g", delimiter=",")


def read_dcls(path) -> SaliencyMap:
    with open(path, "rb") as f:
        header = f.read(_DCLS_HEADER.size)
        if len(header) != _DCLS_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, width, height, _ = _DCLS_HEADER.unpack(header)
        if magic != _DCLS_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(f.read(width * height * 4), dtype="<f4")
        if data.size != width * height:
            raise ValueError(f"{path}: truncated payload")
    return SaliencyMap(data.reshape(height, width).copy())
