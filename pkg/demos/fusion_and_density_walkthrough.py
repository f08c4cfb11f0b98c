#!/usr/bin/env python3
"""Walk through the pieces the explainer is built from.

For one test image this renders, into demos/out/walkthrough/:
  * the superpixel boundaries at three granularities,
  * a handful of perturbation masks,
  * the mask density map (why per-pixel normalization is needed),
  * each level's saliency map and every cascade step of the fusion.
"""

from pathlib import Path

import numpy as np

from dclose import ExplainConfig, SaliencyMap, minmax_normalize, slic_segment
from dclose.corpus import make_blob_cases
from dclose.maskgen import generate_masks
from dclose.render import save_heatmap_png, save_image
from dclose.saliency import compute_level_accumulators, finalize_level, fusion_cascade

out = Path(__file__).parent / "out" / "walkthrough"
out.mkdir(parents=True, exist_ok=True)

case = make_blob_cases(per_group=1, seed=7)[2]  # a large-object case
img = case.image
save_image(img, out / "input.png")

# 1. segmentation levels: draw boundaries
for n in (50, 200, 800):
    seg = slic_segment(img, n)
    edges = np.zeros(seg.labels.shape, dtype=bool)
    edges[1:, :] |= seg.labels[1:, :] != seg.labels[:-1, :]
    edges[:, 1:] |= seg.labels[:, 1:] != seg.labels[:, :-1]
    shown = img.copy()
    shown[edges] = [1.0, 1.0, 0.2]
    save_image(shown, out / f"segments_{n}.png")
    print(f"segmentation with {n} requested -> {seg.n_actual} actual superpixels")

# 2. a few masks from the finest level
seg = slic_segment(img, 800)
batch = generate_masks(seg, 6, p=0.5, r=2.2, seed=3)
for i, mask in enumerate(batch.masks):
    save_image(np.repeat(mask[:, :, None], 3, axis=2), out / f"mask_{i}.png")

# 3. run the pipeline once, keeping the per-level accumulators
cfg = ExplainConfig(segments_per_level=(100, 300, 900), masks_per_level=250, master_seed=5)
det, target = case.detector(), case.target()
accs = compute_level_accumulators(img, det, target, cfg, progress=print)

density = accs[-1].density
print(f"density map of the finest level: min {density.min():.0f}, max {density.max():.0f} "
      f"over {accs[-1].count} masks (uneven coverage is what the normalization cancels)")
save_heatmap_png(minmax_normalize(SaliencyMap(density)), out / "density_finest.png", cmap="magma")

levels = []
for k, acc in enumerate(accs):
    m = minmax_normalize(finalize_level(acc, use_density=True))
    levels.append(m.values)
    save_heatmap_png(m, out / f"level_{cfg.segments_per_level[k]}.png")

# 4. fusion cascade, finest level first
ordered = levels[::-1]
for step, a in enumerate(fusion_cascade(ordered)):
    save_heatmap_png(minmax_normalize(SaliencyMap(a)), out / f"cascade_step_{step + 1}.png")
print(f"wrote walkthrough renders to {out}")
