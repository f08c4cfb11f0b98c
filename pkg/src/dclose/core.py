"""Shared domain types and the small pure math the rest of the package leans on.

Conventions used everywhere:

* images are numpy arrays of shape (h, w, 3), dtype float32/float64, values
  in [0, 1] (so occluding with a mask is a plain element-wise multiply);
* boxes are continuous pixel coordinates (x1, y1, x2, y2) with x1 <= x2 and
  y1 <= y2;
* saliency maps are (h, w) grids of finite, non-negative floats.

Everything in this module is an immutable value or a pure function, safe to
share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "BBox",
    "DetectionVector",
    "TargetSpec",
    "SaliencyMap",
    "ExplainConfig",
    "validate_image",
    "iou",
    "cosine",
    "minmax_normalize",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a)
    out.flags.writeable = False
    return out


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check that ``img`` is a (h, w, 3) float array with values in [0, 1].

    Returns the array unchanged so calls can be inlined at module boundaries.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected a (h, w, 3) image, got shape {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"expected a float image in [0, 1], got dtype {img.dtype}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates, corners inclusive of
    (x1, y1) top-left and (x2, y2) bottom-right."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError("box coordinates must be finite")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"degenerate box: {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class DetectionVector:
    """One detector proposal: box, objectness and the full class-score vector."""

    box: BBox
    objectness: float
    class_scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.class_scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size == 0:
            raise ValueError("class_scores must be a non-empty 1-D vector")
        if np.any(scores < 0.0) or np.any(scores > 1.0) or not np.all(np.isfinite(scores)):
            raise ValueError("class scores must be finite probabilities in [0, 1]")
        if not (0.0 <= self.objectness <= 1.0):
            raise ValueError(f"objectness must lie in [0, 1], got {self.objectness}")
        object.__setattr__(self, "class_scores", _readonly(scores))

    @property
    def class_id(self) -> int:
        """Index of the highest class score (ties go to the lowest index)."""
        return int(np.argmax(self.class_scores))

    @property
    def score(self) -> float:
        """Scalar confidence: objectness times the best class score."""
        return float(self.objectness * self.class_scores.max())


@dataclass(frozen=True)
class TargetSpec:
    """The detection to be explained, optionally carrying a display label."""

    target: DetectionVector
    label: str | None = None


@dataclass(frozen=True)
class SaliencyMap:
    """A (h, w) grid of non-negative pixel importances.

    ``normalized`` records whether the map has been min-max rescaled; a
    normalized non-constant map spans exactly [0, 1].
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"saliency values must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("saliency values must be finite")
        if values.size and values.min() < 0.0:
            raise ValueError("saliency values must be non-negative")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


_DEFAULT_SEGMENTS = (150, 300, 600, 1200, 2400)


@dataclass(frozen=True)
class ExplainConfig:
    """All pipeline knobs for the multi-level explanation engine.

    Defaults follow the reference parameterization: five segmentation levels
    of [150, 300, 600, 1200, 2400] superpixels, 800 masks per level, fill
    probability 0.5 and resize offset ratio 2.2.
    """

    segments_per_level: tuple[int, ...] = _DEFAULT_SEGMENTS
    masks_per_level: int = 800
    fill_probability: float = 0.5
    resize_ratio: float = 2.2
    master_seed: int = 0
    use_density: bool = True
    use_fusion: bool = True
    fusion_order: str = "fine_to_coarse"
    batch_size: int = 32

    def __post_init__(self):
        segs = tuple(int(s) for s in self.segments_per_level)
        if len(segs) < 1:
            raise ValueError("need at least one segmentation level")
        if any(s < 1 for s in segs):
            raise ValueError("segment counts must be >= 1")
        diffs = [b - a for a, b in zip(segs, segs[1:])]
        if diffs and not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
            raise ValueError("segments_per_level must be strictly monotonic")
        if self.masks_per_level < 1:
            raise ValueError("masks_per_level must be >= 1")
        if not (0.0 <= self.fill_probability <= 1.0):
            raise ValueError("fill_probability must lie in [0, 1]")
        if self.resize_ratio < 0.0:
            raise ValueError("resize_ratio must be >= 0")
        if self.fusion_order not in ("fine_to_coarse", "coarse_to_fine"):
            raise ValueError(f"unknown fusion_order {self.fusion_order!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        object.__setattr__(self, "segments_per_level", segs)

    @property
    def levels(self) -> int:
        return len(self.segments_per_level)

    def with_ablation(self, use_density: bool, use_fusion: bool) -> "ExplainConfig":
        return replace(self, use_density=use_density, use_fusion=use_fusion)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when the union has no area."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two non-negative score vectors.

    Zero-norm vectors compare as 0 rather than raising: masked images can
    legitimately produce near-empty detections and the scoring must stay
    total.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"score vectors differ in length: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def minmax_normalize(m: SaliencyMap) -> SaliencyMap:
    """Rescale a map to [0, 1]; a constant map collapses to all zeros.

    Idempotent, and preserves argmax/argmin positions.
    """
    values = m.values
    lo = float(values.min()) if values.size else 0.0
    hi = float(values.max()) if values.size else 0.0
    if hi == lo:
        return SaliencyMap(np.zeros_like(values), normalized=True)
    out = (values - lo) / (hi - lo)
    return SaliencyMap(out, normalized=True)
