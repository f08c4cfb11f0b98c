#!/usr/bin/env python3
"""Explain a real detector process end to end over the wire protocol.

Requires the bridge to be built first:

    cd bridge && npm install && npm run build

The bridge wraps a serialized template-correlation model behind the JSON-lines
stdin/stdout protocol; the engine talks to it exactly as it would to any other
external detector. Outputs land in demos/out/bridge/.
"""

import json
import sys
from pathlib import Path

from dclose import BBox, ExplainConfig, SubprocessDetector, TargetSpec, explain
from dclose.metrics import ebpg, match_detections_to_gt
from dclose.render import load_image, save_overlay_png

repo = Path(__file__).parent.parent
server = repo / "bridge" / "dist" / "server.js"
if not server.exists():
    sys.exit("bridge not built; run `npm install && npm run build` in bridge/ first")

out = Path(__file__).parent / "out" / "bridge"
out.mkdir(parents=True, exist_ok=True)

img = load_image(repo / "bridge" / "fixtures" / "scene.png")
gt = json.loads((repo / "bridge" / "fixtures" / "scene_gt.json").read_text())
gts = [(BBox(*o["box"]), o["class_id"]) for o in gt["objects"]]

with SubprocessDetector(
    ["node", str(server), "--model", str(repo / "bridge" / "models" / "template-detector.json")],
    batch_size=64,
) as det:
    clean = det.detect(img)
    print(f"bridge returned {len(clean)} detections on the clean scene")
    matches = match_detections_to_gt(clean, gts)
    for gt_i, det_j in matches:
        target = TargetSpec(clean[det_j], label=gt["objects"][gt_i]["class_name"])
        cfg = ExplainConfig(segments_per_level=(100, 300, 900), masks_per_level=150, master_seed=11)
        m = explain(img, det, target, cfg, progress=print)
        name = gt["objects"][gt_i]["class_name"]
        save_overlay_png(img, m, out / f"{name}_overlay.png")
        box = gts[gt_i][0]
        baseline = 100.0 * box.area / (img.shape[0] * img.shape[1])
        print(f"{name}: EBPG {ebpg(m, box):.1f}% vs uniform-map baseline {baseline:.1f}%")
print(f"wrote overlays to {out}")
