#!/usr/bin/env python3
"""Build the bridge demo fixtures: a deterministic outdoor-style scene, its
ground-truth boxes, and the template-correlation model whose kernels are cut
from the clean scene (the shipped weights; nothing is trained at run time).

Run from the bridge/ directory:  python3 fixtures/generate_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
SIZE = 128

BEACON_BOX = (84, 28, 108, 52)  # x1, y1, x2, y2
CRATE_BOX = (24, 80, 48, 104)


def build_scene() -> np.ndarray:
    rng = np.random.default_rng(2024)
    img = np.zeros((SIZE, SIZE, 3), dtype=np.float32)

    # sky gradient with a faint sun disk
    for y in range(72):
        t = y / 72.0
        img[y, :, 0] = 0.35 + 0.10 * t
        img[y, :, 1] = 0.55 + 0.08 * t
        img[y, :, 2] = 0.80 - 0.10 * t
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    sun = ((xx - 20.0) ** 2 + (yy - 16.0) ** 2) < 8.0**2
    img[sun] = [0.95, 0.92, 0.75]

    # textured ground
    coarse = rng.uniform(0.0, 1.0, size=(8, 8)).astype(np.float32)
    fine = np.kron(coarse, np.ones((16, 16), dtype=np.float32))[:SIZE, :SIZE]
    ground = 0.25 + 0.12 * fine
    for y in range(72, SIZE):
        img[y, :, 0] = ground[y] * 0.8
        img[y, :, 1] = ground[y] * 1.15
        img[y, :, 2] = ground[y] * 0.6
    img += rng.uniform(-0.015, 0.015, size=img.shape).astype(np.float32)

    # beacon: bright disk with a dark ring, on a pole
    bx1, by1, bx2, by2 = BEACON_BOX
    cx, cy, r = (bx1 + bx2) / 2.0, (by1 + by2) / 2.0, 9.0
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    img[d2 < r**2] = [0.95, 0.85, 0.25]
    ring = (d2 >= (r - 2.5) ** 2) & (d2 < r**2)
    img[ring] = [0.30, 0.12, 0.10]
    img[int(cy + r) : by2 + 16, int(cx) - 1 : int(cx) + 1] = [0.25, 0.20, 0.18]

    # crate: checkered box with a dark outline
    cxl, cyt, cxr, cyb = CRATE_BOX
    cells = np.indices((cyb - cyt, cxr - cxl)).sum(axis=0) // 6 % 2
    block = np.where(cells[..., None] == 0, [0.82, 0.62, 0.35], [0.45, 0.30, 0.15])
    img[cyt:cyb, cxl:cxr] = block
    img[cyt : cyt + 2, cxl:cxr] = [0.2, 0.13, 0.08]
    img[cyb - 2 : cyb, cxl:cxr] = [0.2, 0.13, 0.08]
    img[cyt:cyb, cxl : cxl + 2] = [0.2, 0.13, 0.08]
    img[cyt:cyb, cxr - 2 : cxr] = [0.2, 0.13, 0.08]

    return np.clip(img, 0.0, 1.0)


def main() -> None:
    from PIL import Image

    img = build_scene()
    out = (ROOT / "fixtures").resolve()
    Image.fromarray(np.round(img * 255).astype(np.uint8), mode="RGB").save(out / "scene.png")

    (out / "scene_gt.json").write_text(
        json.dumps(
            {
                "image": "scene.png",
                "objects": [
                    {"box": list(BEACON_BOX), "class_id": 0, "class_name": "beacon"},
                    {"box": list(CRATE_BOX), "class_id": 1, "class_name": "crate"},
                ],
            },
            indent=2,
        )
        + "\n"
    )

    # quantize exactly like the PNG so templates match what the bridge sees
    quantized = np.round(img * 255) / 255.0
    gray = quantized.mean(axis=2)
    templates = []
    for class_id, (x1, y1, x2, y2) in enumerate((BEACON_BOX, CRATE_BOX)):
        kernel = gray[y1:y2, x1:x2]
        templates.append(
            {
                "class_id": class_id,
                "width": int(x2 - x1),
                "height": int(y2 - y1),
                "kernel": [round(float(v), 6) for v in kernel.ravel()],
            }
        )
    model = {
        "format": "template-correlation-v1",
        "classes": ["beacon", "crate"],
        "threshold": 0.55,
        "stride": 2,
        "templates": templates,
    }
    (ROOT / "models").mkdir(exist_ok=True)
    (ROOT / "models" / "template-detector.json").write_text(json.dumps(model) + "\n")
    print("wrote scene.png, scene_gt.json, models/template-detector.json")


if __name__ == "__main__":
    main()
