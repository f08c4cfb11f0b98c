"""Evaluation machinery for saliency maps of object detections.

Plausibility: Sparsity (concentration ratio max/mean of the normalized map)
and the energy-based pointing game, the percentage of saliency mass inside
the ground-truth box. Faithfulness: Deletion and Insertion curves scored in
the same similarity currency used to build the maps, and Over-all =
Insertion - Deletion. Plus ground-truth matching, the sanity-check map
correlation, signed difference maps for error analysis, and 1-D k-means
grouping of objects by size.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .core import BBox, SaliencyMap
from .core import iou as box_iou
from .detector import DetectorHandle, ProposalSet
from .saliency import mask_weight

__all__ = [
    "UndefinedMetricError",
    "CurvePoint",
    "EvalRecord",
    "ebpg",
    "sparsity",
    "blur_baseline",
    "deletion_curve",
    "insertion_curve",
    "overall",
    "match_detections_to_gt",
    "kmeans_1d_group",
    "compare_maps",
    "error_diff",
    "records_to_csv",
    "records_to_json",
    "markdown_report",
]


class UndefinedMetricError(ValueError):
    """The metric has no defined value for this input (e.g. an all-zero map)."""


@dataclass(frozen=True)
class CurvePoint:
    """One step of a deletion/insertion curve."""

    fraction: float  # of pixels processed, in [0, 1]
    score: float  # best proposal similarity to the target, in [0, 1]


@dataclass
class EvalRecord:
    """Every metric for one explained object."""

    object_id: str
    method: str
    size_group: str
    sparsity: float
    ebpg: float
    deletion_auc: float
    insertion_auc: float
    overall: float


def _require_normalized(m: SaliencyMap, op: str) -> None:
    if not m.normalized:
        raise ValueError(f"{op} expects a min-max normalized map")


def _box_slices(b: BBox, height: int, width: int) -> tuple[slice, slice]:
    """Integer pixel window of a continuous box: any pixel whose cell
    overlaps the box counts as inside."""
    y0 = max(int(np.floor(b.y1)), 0)
    y1 = min(int(np.ceil(b.y2)), height)
    x0 = max(int(np.floor(b.x1)), 0)
    x1 = min(int(np.ceil(b.x2)), width)
    return slice(y0, y1), slice(x0, x1)


def ebpg(m: SaliencyMap, gt: BBox) -> float:
    """Energy-based pointing game: percentage of total saliency inside the
    ground-truth box (0 for an all-zero map)."""
    _require_normalized(m, "ebpg")
    total = float(m.values.sum())
    if total == 0.0:
        return 0.0
    ys, xs = _box_slices(gt, m.height, m.width)
    inside = float(m.values[ys, xs].sum())
    return 100.0 * inside / total


def sparsity(m: SaliencyMap) -> float:
    """Concentration ratio max/mean; equals 1/mean on a normalized map."""
    _require_normalized(m, "sparsity")
    peak = float(m.values.max())
    if peak == 0.0:
        raise UndefinedMetricError("sparsity is undefined for an all-zero map")
    return peak / float(m.values.mean())


def blur_baseline(img: np.ndarray, kernel: int = 11, repeats: int = 3) -> np.ndarray:
    """Strongly blurred copy of the image: separable binomial kernel applied
    ``repeats`` times. The insertion curve starts from this."""
    weights = np.array([float(math.comb(kernel - 1, i)) for i in range(kernel)])
    weights /= weights.sum()
    out = np.asarray(img, dtype=np.float64)
    for _ in range(repeats):
        out = convolve1d(out, weights, axis=0, mode="nearest")
        out = convolve1d(out, weights, axis=1, mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _saliency_order(m: SaliencyMap) -> np.ndarray:
    # Descending saliency; the stable sort keeps row-major order on ties.
    return np.argsort(-m.values.ravel(), kind="stable")


def _curve(
    det: DetectorHandle,
    target,
    m: SaliencyMap,
    steps: int,
    start: np.ndarray,
    finish: np.ndarray,
) -> tuple[list[CurvePoint], float]:
    """Shared deletion/insertion walk: start from ``start`` and write pixels
    of ``finish`` in descending saliency order, scoring after every step."""
    if steps < 2:
        raise ValueError("need at least 2 steps")
    h, w = m.height, m.width
    n_pixels = h * w
    order = _saliency_order(m)
    bounds = [int(round(t * n_pixels / steps)) for t in range(steps + 1)]

    work = start.reshape(n_pixels, 3).copy()
    finish_flat = finish.reshape(n_pixels, 3)
    states = [work.copy()]
    for t in range(1, steps + 1):
        sel = order[bounds[t - 1] : bounds[t]]
        work[sel] = finish_flat[sel]
        states.append(work.copy())

    images = [s.reshape(h, w, 3) for s in states]
    scores = [mask_weight(ps, target) for ps in det.detect_batch(images)]
    fractions = [b / n_pixels for b in bounds]
    points = [CurvePoint(f, s) for f, s in zip(fractions, scores)]
    auc = float(np.trapezoid(scores, fractions))
    return points, auc


def deletion_curve(
    img: np.ndarray,
    det: DetectorHandle,
    target,
    m: SaliencyMap,
    steps: int = 100,
    baseline: np.ndarray | float = 0.0,
) -> tuple[list[CurvePoint], float]:
    """Remove the most salient pixels first (replacing them with ``baseline``,
    black by default) and watch the target's score collapse.

    Lower AUC means the map found the pixels the detector actually uses.
    """
    _require_normalized(m, "deletion_curve")
    img = np.asarray(img, dtype=np.float32)
    if np.isscalar(baseline):
        base = np.full_like(img, float(baseline))
    else:
        base = np.asarray(baseline, dtype=np.float32)
    return _curve(det, target, m, steps, start=img, finish=base)


def insertion_curve(
    img: np.ndarray,
    det: DetectorHandle,
    target,
    m: SaliencyMap,
    steps: int = 100,
    baseline: np.ndarray | None = None,
) -> tuple[list[CurvePoint], float]:
    """Start from a blurred image and restore the most salient pixels first;
    higher AUC means earlier recovery of the prediction."""
    _require_normalized(m, "insertion_curve")
    img = np.asarray(img, dtype=np.float32)
    base = blur_baseline(img) if baseline is None else np.asarray(baseline, dtype=np.float32)
    return _curve(det, target, m, steps, start=base, finish=img)


def overall(ins_auc: float, del_auc: float) -> float:
    """Insertion minus deletion; the single-number faithfulness summary."""
    for v in (ins_auc, del_auc):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"AUC values must lie in [0, 1], got {v}")
    return ins_auc - del_auc


def match_detections_to_gt(
    dets: ProposalSet,
    gts: list[tuple[BBox, int]],
    iou_threshold: float = 0.5,
) -> list[tuple[int, int]]:
    """Greedy per-class matching of detections to ground truths.

    Pairs are taken in descending IoU; each side is used at most once; pairs
    under the threshold are discarded. Returns (gt_index, det_index) pairs
    sorted by gt_index.
    """
    matches: list[tuple[int, int]] = []
    classes = {c for _, c in gts}
    for cls in sorted(classes):
        gt_idx = [i for i, (_, c) in enumerate(gts) if c == cls]
        det_idx = [j for j, d in enumerate(dets) if d.class_id == cls]
        pairs = []
        for i in gt_idx:
            for j in det_idx:
                v = box_iou(gts[i][0], dets[j].box)
                if v >= iou_threshold:
                    pairs.append((v, i, j))
        pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
        used_gt: set[int] = set()
        used_det: set[int] = set()
        for v, i, j in pairs:
            if i in used_gt or j in used_det:
                continue
            used_gt.add(i)
            used_det.add(j)
            matches.append((i, j))
    return sorted(matches)


_SIZE_NAMES = ("small", "middle", "large")


def kmeans_1d_group(
    ratios,
    k: int = 3,
    seed: int = 0,
) -> tuple[list[str], np.ndarray]:
    """Group box-to-image area ratios with 1-D Lloyd k-means.

    Centroids start at the (2i+1)/(2k) quantiles and iterate to convergence
    (max centroid shift < 1e-9, at most 100 iterations). Groups are named
    small/middle/large by ascending centroid (generic names for k != 3).
    ``seed`` is accepted for interface stability but unused: the quantile
    initialization is deterministic.
    """
    del seed
    x = np.asarray(list(ratios), dtype=np.float64)
    if np.unique(x).size < k:
        raise ValueError(f"need at least {k} distinct values, got {np.unique(x).size}")

    centroids = np.quantile(x, [(2 * i + 1) / (2 * k) for i in range(k)])
    assign = np.zeros(x.size, dtype=np.int64)
    for _ in range(100):
        # argmin takes the first (lowest-index) centroid on ties
        assign = np.argmin(np.abs(x[:, None] - centroids[None, :]), axis=1)
        new_centroids = centroids.copy()
        for c in range(k):
            members = x[assign == c]
            if members.size:
                new_centroids[c] = members.mean()
        if np.max(np.abs(new_centroids - centroids)) < 1e-9:
            centroids = new_centroids
            break
        centroids = new_centroids

    order = np.argsort(centroids, kind="stable")
    rank_of = np.empty(k, dtype=np.int64)
    rank_of[order] = np.arange(k)
    names = _SIZE_NAMES if k == 3 else tuple(f"group{i}" for i in range(k))
    labels = [names[rank_of[a]] for a in assign]
    return labels, centroids[order]


def compare_maps(a: SaliencyMap, b: SaliencyMap) -> float:
    """Pearson correlation of two maps' pixel values; the sanity-check
    scalar (randomizing the model should destroy the correlation)."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"map shapes differ: {a.values.shape} vs {b.values.shape}")
    av = a.values.ravel().astype(np.float64)
    bv = b.values.ravel().astype(np.float64)
    if av.std() == 0.0 or bv.std() == 0.0:
        raise UndefinedMetricError("correlation is undefined for a constant map")
    return float(np.corrcoef(av, bv)[0, 1])


def error_diff(a: SaliencyMap, b: SaliencyMap) -> np.ndarray:
    """Signed per-pixel difference a - b between two normalized maps, for
    divergent rendering of where two explanations disagree."""
    _require_normalized(a, "error_diff")
    _require_normalized(b, "error_diff")
    if a.values.shape != b.values.shape:
        raise ValueError(f"map shapes differ: {a.values.shape} vs {b.values.shape}")
    return a.values.astype(np.float64) - b.values.astype(np.float64)


# --- record export -------------------------------------------------------------

_CSV_FIELDS = ["object_id", "method", "size_group", "sparsity", "ebpg", "deletion_auc", "insertion_auc", "overall"]


def records_to_csv(records: list[EvalRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS)
    writer.writeheader()
    for r in records:
        writer.writerow(asdict(r))
    return buf.getvalue()


def records_to_json(records: list[EvalRecord]) -> str:
    return json.dumps([asdict(r) for r in records], indent=2)


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else float("nan")


def markdown_report(records: list[EvalRecord]) -> str:
    """Mean metrics per size group and combined, one column block per method."""
    methods = sorted({r.method for r in records})
    groups = [g for g in ("small", "middle", "large") if any(r.size_group == g for r in records)]
    header = ["Metrics"] + [f"{g}/{m}" for g in groups + ["all"] for m in methods]
    rows = []
    metric_cols = [
        ("Sparsity", "sparsity", "{:.2f}"),
        ("EBPG (%)", "ebpg", "{:.2f}"),
        ("Del (%)", "deletion_auc", "{:.2%}"),
        ("Ins (%)", "insertion_auc", "{:.2%}"),
        ("Over-all (%)", "overall", "{:.2%}"),
    ]
    for title, attr, fmt in metric_cols:
        row = [title]
        for g in groups + ["all"]:
            for m in methods:
                pool = [getattr(r, attr) for r in records if r.method == m and (g == "all" or r.size_group == g)]
                row.append(fmt.format(_mean(pool)) if pool else "-")
        rows.append(row)
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = [
        "| " + " | ".join(str(v).ljust(w) for v, w in zip(header, widths)) + " |",
        "|" + "|".join("-" * (w + 2) for w in widths) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(str(v).ljust(w) for v, w in zip(row, widths)) + " |")
    return "\n".join(lines) + "\n"
