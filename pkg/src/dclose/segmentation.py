"""Superpixel segmentation via SLIC (localized k-means in CIELAB + position).

The clustering is deliberately deterministic: grid seeding, a fixed iteration
count, and lowest-center-index tie-breaks, so the same image and parameters
always produce the same label map. A connectivity pass then merges fragments
smaller than a quarter of the mean segment area into their largest adjacent
segment, which keeps every label 4-connected and the actual segment count
close to the request (downstream code tolerates the difference).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = ["SegmentationMap", "slic_segment", "save_labels_csv"]


@dataclass(frozen=True)
class SegmentationMap:
    """Per-pixel superpixel labels at one granularity level.

    Labels are dense integers 0..n_actual-1; every label occurs at least once
    and each label's pixel set is 4-connected.
    """

    labels: np.ndarray
    n_requested: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be a 2-D integer array")
        labels = np.ascontiguousarray(labels)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n_actual(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


# sRGB -> CIELAB (D65 white), the perceptual space SLIC clusters in.

_XYZ_FROM_RGB = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65 = np.array([0.95047, 1.0, 1.08883])


def _rgb_to_lab(img: np.ndarray) -> np.ndarray:
    rgb = np.asarray(img, dtype=np.float64)
    linear = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = linear @ _XYZ_FROM_RGB.T
    xyz = xyz / _D65
    f = np.where(xyz > (6.0 / 29.0) ** 3, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def slic_segment(
    img: np.ndarray,
    n_segments: int,
    compactness: float = 10.0,
    max_iters: int = 10,
) -> SegmentationMap:
    """Split ``img`` into roughly ``n_segments`` superpixels.

    Cluster centers start on a regular grid at spacing S = sqrt(h*w/n) and are
    refined by k-means restricted to a 2Sx2S window around each center, under
    the distance d = d_lab + (compactness / S) * d_xy. On equal distance the
    lowest center index wins.

    The returned segment count may differ from the request; callers must use
    ``SegmentationMap.n_actual``.
    """
    h, w = img.shape[0], img.shape[1]
    n_pixels = h * w
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if n_segments > n_pixels:
        raise ValueError(f"n_segments={n_segments} exceeds pixel count {n_pixels}")

    if n_segments == 1:
        return SegmentationMap(np.zeros((h, w), dtype=np.int32), n_requested=1)

    lab = _rgb_to_lab(img)
    spacing = np.sqrt(n_pixels / n_segments)
    ratio = compactness / spacing

    # Grid seeds: ny*nx cells as close to n_segments as the aspect allows.
    ny = max(1, int(round(h / spacing)))
    nx = max(1, int(round(w / spacing)))
    cy = (np.arange(ny) + 0.5) * (h / ny)
    cx = (np.arange(nx) + 0.5) * (w / nx)
    grid_y, grid_x = np.meshgrid(cy, cx, indexing="ij")
    centers_xy = np.stack([grid_y.ravel(), grid_x.ravel()], axis=1)
    seed_rows = np.clip(centers_xy[:, 0].astype(np.int64), 0, h - 1)
    seed_cols = np.clip(centers_xy[:, 1].astype(np.int64), 0, w - 1)
    centers_lab = lab[seed_rows, seed_cols, :].copy()
    n_centers = centers_xy.shape[0]

    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    py = np.repeat(rows, w)
    px = np.tile(cols, h)
    lab_flat = lab.reshape(-1, 3)
    # Two bit-equivalent assignment sweeps: a per-center window loop (cheap
    # when centers are few and windows large) and a vectorized per-pixel
    # candidate gather (cheap when centers are dense and windows tiny).
    dense_centers = n_centers >= 0.2 * n_pixels

    previous = None
    for _ in range(max_iters):
        if dense_centers:
            assignment = _assign_pixels(
                lab_flat, py, px, centers_lab, centers_xy, spacing, ratio, h, w
            ).reshape(h, w)
        else:
            assignment = _assign_loop(lab, centers_lab, centers_xy, spacing, ratio, h, w)

        # a repeated assignment is a fixpoint: identical means, identical next
        # sweep, so stopping early changes nothing
        if previous is not None and np.array_equal(assignment, previous):
            break
        previous = assignment

        flat = assignment.ravel()
        counts = np.bincount(flat, minlength=n_centers).astype(np.float64)
        occupied = counts > 0
        sum_y = np.bincount(flat, weights=np.repeat(rows, w), minlength=n_centers)
        sum_x = np.bincount(flat, weights=np.tile(cols, h), minlength=n_centers)
        new_xy = centers_xy.copy()
        new_xy[occupied, 0] = sum_y[occupied] / counts[occupied]
        new_xy[occupied, 1] = sum_x[occupied] / counts[occupied]
        new_lab = centers_lab.copy()
        for ch in range(3):
            sums = np.bincount(flat, weights=lab[..., ch].ravel(), minlength=n_centers)
            new_lab[occupied, ch] = sums[occupied] / counts[occupied]
        centers_xy, centers_lab = new_xy, new_lab

    labels = _enforce_connectivity(assignment, min_size=n_pixels / n_segments / 4.0)
    return SegmentationMap(labels, n_requested=n_segments)


def _assign_loop(
    lab: np.ndarray,
    centers_lab: np.ndarray,
    centers_xy: np.ndarray,
    spacing: float,
    ratio: float,
    h: int,
    w: int,
) -> np.ndarray:
    """One assignment sweep as a per-center window loop: distances are
    evaluated only inside each center's 2Sx2S window, and the strict-<
    update in ascending center order gives lowest-index tie-breaks."""
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    best = np.full((h, w), np.inf, dtype=np.float64)
    assignment = np.zeros((h, w), dtype=np.int32)
    for c in range(centers_xy.shape[0]):
        yc, xc = centers_xy[c]
        y0 = max(int(yc - spacing), 0)
        y1 = min(int(yc + spacing) + 1, h)
        x0 = max(int(xc - spacing), 0)
        x1 = min(int(xc + spacing) + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        window = lab[y0:y1, x0:x1, :]
        diff = window - centers_lab[c]
        d_color = np.sqrt((diff * diff).sum(axis=2))
        dy = rows[y0:y1, None] - yc
        dx = cols[None, x0:x1] - xc
        d = d_color + ratio * np.sqrt(dy * dy + dx * dx)
        sub = best[y0:y1, x0:x1]
        better = d < sub
        sub[better] = d[better]
        assignment[y0:y1, x0:x1][better] = c

    uncovered = np.isinf(best)
    if uncovered.any():
        # window gaps after center drift: nearest center by position
        yy, xx = np.nonzero(uncovered)
        d2 = (yy[:, None] - centers_xy[None, :, 0]) ** 2 + (xx[:, None] - centers_xy[None, :, 1]) ** 2
        assignment[yy, xx] = np.argmin(d2, axis=1)
    return assignment


def _assign_pixels(
    lab_flat: np.ndarray,
    py: np.ndarray,
    px: np.ndarray,
    centers_lab: np.ndarray,
    centers_xy: np.ndarray,
    spacing: float,
    ratio: float,
    h: int,
    w: int,
) -> np.ndarray:
    """One assignment sweep, vectorized over (pixel, candidate-center) pairs.

    Centers are bucketed by the spacing-sized grid cells their 2Sx2S windows
    overlap, so a pixel's candidate list is exactly the centers that could
    claim its cell. Membership then uses the exact window bounds
    [trunc(c-S), trunc(c+S)+1) and ties resolve to the lowest center index,
    so the result matches a sequential per-center sweep bit for bit.
    """
    n_centers = centers_xy.shape[0]
    n_pixels = py.size
    cell = spacing
    grid_h = int((h - 1) // cell) + 1
    grid_w = int((w - 1) // cell) + 1

    # (center, covered-cell) pairs: windows are converted to their integer
    # pixel bounds first (matching the sweep's int() truncation), and the
    # cells are those of the first/last covered pixel.
    wy0 = np.maximum(np.trunc(centers_xy[:, 0] - spacing), 0.0)
    wy1 = np.minimum(np.trunc(centers_xy[:, 0] + spacing) + 1.0, float(h)) - 1.0
    wx0 = np.maximum(np.trunc(centers_xy[:, 1] - spacing), 0.0)
    wx1 = np.minimum(np.trunc(centers_xy[:, 1] + spacing) + 1.0, float(w)) - 1.0
    nonempty = (wy0 <= wy1) & (wx0 <= wx1)
    cy0 = np.clip((wy0 // cell).astype(np.int64), 0, grid_h - 1)
    cy1 = np.clip((wy1 // cell).astype(np.int64), 0, grid_h - 1)
    cx0 = np.clip((wx0 // cell).astype(np.int64), 0, grid_w - 1)
    cx1 = np.clip((wx1 // cell).astype(np.int64), 0, grid_w - 1)
    span = int(max((cy1 - cy0).max(), (cx1 - cx0).max())) + 1 if n_centers else 1
    ids = np.arange(n_centers, dtype=np.int64)
    pair_center = []
    pair_cell = []
    for i in range(span):
        ys = cy0 + i
        ok_y = nonempty & (ys <= cy1)
        for j in range(span):
            xs = cx0 + j
            ok = ok_y & (xs <= cx1)
            pair_center.append(ids[ok])
            pair_cell.append(ys[ok] * grid_w + xs[ok])
    pair_center = np.concatenate(pair_center)
    pair_cell = np.concatenate(pair_cell)
    order = np.argsort(pair_cell, kind="stable")
    sorted_cells = pair_cell[order]
    sorted_centers = pair_center[order]
    starts = np.searchsorted(sorted_cells, np.arange(grid_h * grid_w), side="left")
    ends = np.searchsorted(sorted_cells, np.arange(grid_h * grid_w), side="right")
    cap = int((ends - starts).max()) if len(pair_cell) else 0
    bucket = np.full((grid_h * grid_w, max(cap, 1)), -1, dtype=np.int64)
    for slot in range(cap):
        has = starts + slot < ends
        bucket[has, slot] = sorted_centers[starts[has] + slot]

    p_cell = np.clip((py // cell).astype(np.int64), 0, grid_h - 1) * grid_w + np.clip(
        (px // cell).astype(np.int64), 0, grid_w - 1
    )

    assign = np.zeros(n_pixels, dtype=np.int32)
    chunk = max(1, 4_000_000 // max(cap, 1))  # bound transients
    for lo in range(0, n_pixels, chunk):
        hi = min(lo + chunk, n_pixels)
        pyc = py[lo:hi, None]
        pxc = px[lo:hi, None]
        cand = bucket[p_cell[lo:hi]]  # (chunk, cap), -1 = empty
        valid = cand >= 0
        safe = np.where(valid, cand, 0)

        yc = centers_xy[safe, 0]
        xc = centers_xy[safe, 1]
        y0 = np.maximum(np.trunc(yc - spacing), 0.0)
        y1 = np.minimum(np.trunc(yc + spacing) + 1.0, float(h))
        x0 = np.maximum(np.trunc(xc - spacing), 0.0)
        x1 = np.minimum(np.trunc(xc + spacing) + 1.0, float(w))
        member = valid & (pyc >= y0) & (pyc < y1) & (pxc >= x0) & (pxc < x1)

        diff = lab_flat[lo:hi, None, :] - centers_lab[safe]
        d_color = np.sqrt((diff * diff).sum(axis=2))
        dy = pyc - yc
        dx = pxc - xc
        d = d_color + ratio * np.sqrt(dy * dy + dx * dx)
        d = np.where(member, d, np.inf)

        dmin = d.min(axis=1)
        tie_ids = np.where(d == dmin[:, None], safe, n_centers)
        assign[lo:hi] = tie_ids.min(axis=1).astype(np.int32)

        uncovered = ~np.isfinite(dmin)
        if uncovered.any():
            # window gaps after center drift: nearest center by position
            d2 = (pyc[uncovered] - centers_xy[None, :, 0]) ** 2 + (
                pxc[uncovered] - centers_xy[None, :, 1]
            ) ** 2
            assign[lo : hi][uncovered] = np.argmin(d2, axis=1)
    return assign


def _components(labels: np.ndarray) -> np.ndarray:
    """4-connected components of equal-label pixels, as dense component ids."""
    h, w = labels.shape
    idx = np.arange(h * w).reshape(h, w)
    edges_src = []
    edges_dst = []
    same_v = labels[1:, :] == labels[:-1, :]
    edges_src.append(idx[1:, :][same_v])
    edges_dst.append(idx[:-1, :][same_v])
    same_h = labels[:, 1:] == labels[:, :-1]
    edges_src.append(idx[:, 1:][same_h])
    edges_dst.append(idx[:, :-1][same_h])
    src = np.concatenate(edges_src)
    dst = np.concatenate(edges_dst)
    graph = coo_matrix((np.ones(len(src), dtype=np.int8), (src, dst)), shape=(h * w, h * w))
    _, comp = connected_components(graph, directed=False)
    return comp.reshape(h, w)


def _enforce_connectivity(assignment: np.ndarray, min_size: float) -> np.ndarray:
    """Split disconnected clusters, then absorb fragments below ``min_size``
    into their largest adjacent component."""
    comp = _components(assignment)
    n_comp = int(comp.max()) + 1
    sizes = np.bincount(comp.ravel(), minlength=n_comp).astype(np.int64)

    # Component adjacency from 4-neighbour pixel pairs that cross components.
    pairs = set()
    a, b = comp[1:, :].ravel(), comp[:-1, :].ravel()
    diff = a != b
    pairs.update(zip(np.minimum(a[diff], b[diff]).tolist(), np.maximum(a[diff], b[diff]).tolist()))
    a, b = comp[:, 1:].ravel(), comp[:, :-1].ravel()
    diff = a != b
    pairs.update(zip(np.minimum(a[diff], b[diff]).tolist(), np.maximum(a[diff], b[diff]).tolist()))
    adjacency: list[set[int]] = [set() for _ in range(n_comp)]
    for p, q in pairs:
        adjacency[p].add(q)
        adjacency[q].add(p)

    # Union-find over components; small ones merge into their largest
    # neighbour (ties to the lowest component id), smallest first.
    parent = np.arange(n_comp)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    order = sorted(range(n_comp), key=lambda c: (sizes[c], c))
    for c in order:
        root = find(c)
        if root != c or sizes[root] >= min_size:
            continue
        neighbours = {find(n) for n in adjacency[c]} - {root}
        if not neighbours:
            continue
        target = max(neighbours, key=lambda n: (sizes[n], -n))
        parent[root] = target
        sizes[target] += sizes[root]
        adjacency[target].update(adjacency[c])

    roots = np.array([find(c) for c in range(n_comp)])
    merged = roots[comp]

    # Dense relabel in raster order of first appearance.
    flat = merged.ravel()
    first = np.full(n_comp, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size))
    present = np.unique(flat)
    new_ids = np.empty(n_comp, dtype=np.int32)
    for rank, c in enumerate(sorted(present.tolist(), key=lambda c: first[c])):
        new_ids[c] = rank
    return new_ids[merged].astype(np.int32)


def save_labels_csv(seg: SegmentationMap, path) -> None:
    """Debug export of the label map as a plain integer grid."""
    np.savetxt(path, seg.labels, fmt="%d", delimiter=",")
