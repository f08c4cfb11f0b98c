"""Benchmark corpora: the manifest format, a COCO converter, and the
synthetic blob suite.

A corpus manifest is a JSON array of entries::

    {"image_path": "...", "objects": [{"box": [x1, y1, x2, y2],
     "class_id": 0, "class_name": "thing"}], "synthetic": {...}}

The optional "synthetic" field carries blob-detector specs so oracle runs can
rebuild the per-image detector (``--detector synthetic:manifest``); real
backends ignore it.

The blob suite is a set of images with one bright textured rectangle on a
noisy background, in three size groups. The rectangle is simultaneously the
ground-truth box and the evidence region of the matching synthetic detector,
so the pixels an explanation should find are known exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BBox, TargetSpec
from .detector import BlobDetector, BlobSpec
from .maskgen import bilinear_resize

__all__ = [
    "CorpusError",
    "CorpusObject",
    "CorpusEntry",
    "load_corpus",
    "save_corpus",
    "blob_detector_for_entry",
    "convert_coco",
    "BlobCase",
    "make_blob_cases",
    "write_blob_suite",
]


class CorpusError(ValueError):
    """Manifest could not be parsed or fails the schema."""


@dataclass(frozen=True)
class CorpusObject:
    box: BBox
    class_id: int
    class_name: str | None = None


@dataclass(frozen=True)
class CorpusEntry:
    image_path: str
    objects: tuple[CorpusObject, ...]
    synthetic: dict | None = None


def _parse_box(raw, where: str) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise CorpusError(f"{where}: 'box' must be [x1, y1, x2, y2]")
    try:
        return BBox(*(float(v) for v in raw))
    except (TypeError, ValueError) as e:
        raise CorpusError(f"{where}: bad box {raw!r} ({e})") from e


def load_corpus(path) -> list[CorpusEntry]:
    """Parse a manifest; parse errors carry the JSON line number, schema
    errors the entry index."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path}: line {e.lineno}: {e.msg}") from e
    if not isinstance(data, list):
        raise CorpusError(f"{path}: manifest must be a JSON array of entries")
    entries = []
    for i, raw in enumerate(data):
        where = f"{path}: entry {i}"
        if not isinstance(raw, dict) or "image_path" not in raw:
            raise CorpusError(f"{where}: missing 'image_path'")
        objects = []
        for j, obj in enumerate(raw.get("objects", [])):
            ow = f"{where}, object {j}"
            if "box" not in obj or "class_id" not in obj:
                raise CorpusError(f"{ow}: needs 'box' and 'class_id'")
            objects.append(
                CorpusObject(
                    box=_parse_box(obj["box"], ow),
                    class_id=int(obj["class_id"]),
                    class_name=obj.get("class_name"),
                )
            )
        entries.append(
            CorpusEntry(
                image_path=str(raw["image_path"]),
                objects=tuple(objects),
                synthetic=raw.get("synthetic"),
            )
        )
    return entries


def save_corpus(entries: list[CorpusEntry], path) -> None:
    data = []
    for e in entries:
        raw: dict = {
            "image_path": e.image_path,
            "objects": [
                {
                    "box": list(o.box.as_tuple()),
                    "class_id": o.class_id,
                    **({"class_name": o.class_name} if o.class_name else {}),
                }
                for o in e.objects
            ],
        }
        if e.synthetic is not None:
            raw["synthetic"] = e.synthetic
        data.append(raw)
    Path(path).write_text(json.dumps(data, indent=2))


def blob_detector_for_entry(entry: CorpusEntry) -> BlobDetector:
    """Rebuild the oracle detector recorded in an entry's synthetic field."""
    if not entry.synthetic or "blobs" not in entry.synthetic:
        raise CorpusError(f"{entry.image_path}: no synthetic detector spec in manifest")
    specs = []
    for raw in entry.synthetic["blobs"]:
        specs.append(
            BlobSpec(
                box=_parse_box(raw["box"], entry.image_path),
                class_profile=np.asarray(raw["profile"], dtype=np.float64),
                evidence=_parse_box(raw["evidence"], entry.image_path) if "evidence" in raw else None,
            )
        )
    return BlobDetector(specs)


def convert_coco(coco: dict, images_root: str = "") -> list[CorpusEntry]:
    """Convert COCO-style annotation JSON (images/annotations/categories,
    bbox as [x, y, w, h]) into manifest entries. class_id becomes the index
    of the category in ascending category-id order."""
    try:
        categories = sorted(coco["categories"], key=lambda c: c["id"])
        cat_index = {c["id"]: i for i, c in enumerate(categories)}
        cat_name = {c["id"]: c.get("name") for c in categories}
        images = {im["id"]: im for im in coco["images"]}
    except (KeyError, TypeError) as e:
        raise CorpusError(f"not COCO annotation JSON: missing {e}") from e

    by_image: dict = {im_id: [] for im_id in images}
    for ann in coco.get("annotations", []):
        x, y, w, h = ann["bbox"]
        by_image.setdefault(ann["image_id"], []).append(
            CorpusObject(
                box=BBox(float(x), float(y), float(x + w), float(y + h)),
                class_id=cat_index[ann["category_id"]],
                class_name=cat_name[ann["category_id"]],
            )
        )
    root = Path(images_root) if images_root else None
    entries = []
    for im_id, im in sorted(images.items()):
        path = str(root / im["file_name"]) if root else im["file_name"]
        entries.append(CorpusEntry(image_path=path, objects=tuple(by_image.get(im_id, ()))))
    return entries


# --- blob suite ----------------------------------------------------------------

_GROUP_SIDES = {"small": (10, 16), "middle": (26, 38), "large": (48, 62)}


@dataclass(frozen=True)
class BlobCase:
    """One synthetic benchmark case: image + oracle detector spec."""

    name: str
    group: str
    image: np.ndarray
    spec: BlobSpec
    class_id: int
    class_count: int = 3

    def detector(self, score_floor: float = 0.05) -> BlobDetector:
        return BlobDetector([self.spec], score_floor=score_floor)

    def target(self) -> TargetSpec:
        props = self.detector().detect(self.image)
        if not len(props):
            raise RuntimeError(f"case {self.name}: oracle emits nothing on the clean image")
        return TargetSpec(props[0], label=self.name)

    @property
    def gt_box(self) -> BBox:
        return self.spec.box

    def area_ratio(self) -> float:
        h, w = self.image.shape[:2]
        return self.spec.box.area / (h * w)


def _textured_background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.uniform(0.15, 0.45, size=(6, 6)).astype(np.float32)
    base = bilinear_resize(coarse, size, size)
    img = np.stack([base, base, base], axis=2)
    tint = rng.uniform(-0.04, 0.04, size=3).astype(np.float32)
    img = img + tint[None, None, :]
    img = img + rng.uniform(-0.02, 0.02, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _case_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def make_blob_cases(
    per_group: int = 10,
    size: int = 96,
    seed: int = 7,
    class_count: int = 3,
) -> list[BlobCase]:
    """Deterministic suite of per_group cases in each of the three size
    groups: a bright rectangle (the evidence region and ground truth) on a
    textured background."""
    cases = []
    index = 0
    for group, (lo, hi) in _GROUP_SIDES.items():
        for i in range(per_group):
            rng = _case_rng(seed, index)
            img = _textured_background(rng, size)

            bh = int(rng.integers(lo, hi + 1))
            bw = int(rng.integers(lo, hi + 1))
            y0 = int(rng.integers(1, size - bh - 1))
            x0 = int(rng.integers(1, size - bw - 1))
            box = BBox(float(x0), float(y0), float(x0 + bw), float(y0 + bh))

            patch = 0.88 + rng.uniform(-0.05, 0.05, size=(bh, bw)).astype(np.float32)
            block = np.stack([patch, patch * 0.96, patch * 0.9], axis=2)  # warm cast
            img[y0 : y0 + bh, x0 : x0 + bw, :] = np.clip(block, 0.0, 1.0)

            class_id = index % class_count
            profile = np.full(class_count, 0.05)
            profile[class_id] = 0.9
            cases.append(
                BlobCase(
                    name=f"{group}_{i:02d}",
                    group=group,
                    image=img,
                    spec=BlobSpec(box=box, class_profile=profile),
                    class_id=class_id,
                    class_count=class_count,
                )
            )
            index += 1
    return cases


def write_blob_suite(root, cases: list[BlobCase] | None = None, **kwargs) -> Path:
    """Write suite images plus a manifest (with synthetic detector specs);
    returns the manifest path."""
    from .render import save_image

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cases = cases if cases is not None else make_blob_cases(**kwargs)
    entries = []
    for case in cases:
        img_path = root / f"{case.name}.png"
        save_image(case.image, img_path)
        entries.append(
            CorpusEntry(
                image_path=str(img_path),
                objects=(
                    CorpusObject(box=case.gt_box, class_id=case.class_id, class_name=f"class{case.class_id}"),
                ),
                synthetic={
                    "blobs": [
                        {
                            "box": list(case.spec.box.as_tuple()),
                            "profile": list(case.spec.class_profile),
                        }
                    ]
                },
            )
        )
    manifest = root / "corpus.json"
    save_corpus(entries, manifest)
    return manifest
