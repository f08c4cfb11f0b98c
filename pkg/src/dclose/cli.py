"""Command-line front end.

Verbs: ``explain`` (one object -> saliency files), ``benchmark`` (corpus ->
metric report for both methods), ``sanity`` (base vs randomized detector),
``errordiff`` (two targets -> signed difference), ``convert-coco`` and
``render``.

Every command writes a run manifest JSON capturing the config snapshot,
detector descriptor, seeds, per-stage wall-clock and the detector-call
count; with a synthetic backend, re-running from the manifest reproduces the
outputs byte-identically.

Config precedence is flags > TOML config file > defaults. Exit codes are
stable: 0 ok, 2 usage, 3 unreadable input, 4 unknown detector, 5 bad target
selection, 6 backend failure, 7 malformed or empty corpus manifest.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .core import BBox, DetectionVector, ExplainConfig, SaliencyMap, TargetSpec, minmax_normalize
from .corpus import CorpusError, blob_detector_for_entry, convert_coco, load_corpus, save_corpus
from .detector import BackendError, CountingDetector, create_detector, make_randomized_detector
from .drise import GridMaskConfig, drise_explain
from .metrics import (
    EvalRecord,
    UndefinedMetricError,
    compare_maps,
    deletion_curve,
    ebpg,
    error_diff,
    insertion_curve,
    kmeans_1d_group,
    markdown_report,
    match_detections_to_gt,
    overall,
    records_to_csv,
    records_to_json,
    sparsity,
)
from .render import load_image, save_diff_png, save_heatmap_png, save_overlay_png
from .saliency import ABLATION_SETTINGS, explain, explain_ablations, read_dcls, write_csv, write_dcls

EXIT_OK = 0
EXIT_INPUT = 3
EXIT_DETECTOR = 4
EXIT_TARGET = 5
EXIT_BACKEND = 6
EXIT_MANIFEST = 7


class TargetError(ValueError):
    pass


@dataclass
class RunManifest:
    """Everything needed to re-execute a run (bit-identically for synthetic
    backends, call-identically for external ones)."""

    tool_version: str
    command: str
    method: str
    detector: str
    inputs: dict
    config: dict
    drise: dict
    seeds: dict
    stages: dict = field(default_factory=dict)
    detector_calls: int = 0
    outputs: list = field(default_factory=list)
    created: str = ""

    def write(self, path: Path) -> None:
        self.created = datetime.datetime.now().isoformat(timespec="seconds")
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_toml_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def _pick(flag, file_cfg: dict, key: str, default):
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    return default


def _explain_config(args, file_cfg: dict) -> ExplainConfig:
    section = file_cfg.get("explain", {})
    segments = _pick(args.segments, section, "segments", None)
    if isinstance(segments, str):
        segments = [int(s) for s in segments.split(",")]
    defaults = ExplainConfig()
    return ExplainConfig(
        segments_per_level=tuple(segments) if segments else defaults.segments_per_level,
        masks_per_level=int(_pick(args.masks, section, "masks", defaults.masks_per_level)),
        fill_probability=float(_pick(args.p, section, "p", defaults.fill_probability)),
        resize_ratio=float(_pick(args.r, section, "r", defaults.resize_ratio)),
        master_seed=int(_pick(args.seed, section, "seed", defaults.master_seed)),
        use_density=bool(_pick(args.density, section, "density", defaults.use_density)),
        use_fusion=bool(_pick(args.fusion, section, "fusion", defaults.use_fusion)),
        fusion_order=str(_pick(args.fusion_order, section, "fusion_order", defaults.fusion_order)),
        batch_size=int(_pick(args.batch_size, section, "batch_size", defaults.batch_size)),
    )


def _drise_config(args, file_cfg: dict, seed: int) -> GridMaskConfig:
    section = file_cfg.get("drise", {})
    grid = _pick(getattr(args, "drise_grid", None), section, "grid", None)
    if isinstance(grid, str):
        grid = [int(v) for v in grid.split(",")]
    defaults = GridMaskConfig()
    return GridMaskConfig(
        grid_h=int(grid[0]) if grid else defaults.grid_h,
        grid_w=int(grid[1]) if grid and len(grid) > 1 else defaults.grid_w,
        fill_probability=float(_pick(getattr(args, "drise_p", None), section, "p", defaults.fill_probability)),
        n_masks=int(_pick(getattr(args, "drise_masks", None), section, "masks", defaults.n_masks)),
        seed=seed,
        batch_size=int(_pick(args.batch_size, section, "batch_size", defaults.batch_size)),
    )


def _parse_target_text(text: str, class_count: int | None):
    """``<index>`` into the clean-image detections, or
    ``x1,y1,x2,y2@class_id`` for an explicit box and class."""
    if "@" in text:
        coords, _, cls = text.partition("@")
        parts = [float(v) for v in coords.split(",")]
        if len(parts) != 4:
            raise TargetError(f"explicit target needs 4 coordinates, got {text!r}")
        if class_count is None:
            raise TargetError("explicit targets need a detector with a known class count (or --classes)")
        class_id = int(cls)
        if not (0 <= class_id < class_count):
            raise TargetError(f"class id {class_id} out of range for {class_count} classes")
        scores = np.zeros(class_count)
        scores[class_id] = 1.0
        return DetectionVector(box=BBox(*parts), objectness=1.0, class_scores=scores)
    try:
        return int(text)
    except ValueError as e:
        raise TargetError(f"target must be an index or x1,y1,x2,y2@class: {text!r}") from e


def _select_target(text: str, det, img, class_count_flag: int | None) -> TargetSpec:
    class_count = det.class_count or class_count_flag
    parsed = _parse_target_text(text, class_count)
    if isinstance(parsed, DetectionVector):
        return TargetSpec(parsed)
    props = det.detect(img)
    if not len(props):
        raise TargetError("detector found nothing on the clean image; use an explicit box target")
    if not (0 <= parsed < len(props)):
        raise TargetError(f"target index {parsed} out of range: {len(props)} clean detections")
    return TargetSpec(props[parsed])


def _run_method(method: str, img, det, target, cfg: ExplainConfig, gcfg: GridMaskConfig, timings) -> SaliencyMap:
    if method == "drise":
        return drise_explain(img, det, target, gcfg, timings=timings)
    return explain(img, det, target, cfg, timings=timings)


def _manifest_for(args, command: str, cfg: ExplainConfig, gcfg: GridMaskConfig, inputs: dict) -> RunManifest:
    return RunManifest(
        tool_version=__version__,
        command=command,
        method=getattr(args, "method", "dclose"),
        detector=getattr(args, "detector", ""),
        inputs=inputs,
        config=asdict(cfg),
        drise=asdict(gcfg),
        seeds={"master_seed": cfg.master_seed, "drise_seed": gcfg.seed},
    )


# --- explain -------------------------------------------------------------------

def cmd_explain(args) -> int:
    if args.from_manifest:
        try:
            stored = json.loads(Path(args.from_manifest).read_text())
        except OSError as e:
            return _fail(EXIT_INPUT, f"cannot read manifest: {e}")
        args.image = stored["inputs"]["image"]
        args.detector = stored["detector"]
        args.target = stored["inputs"]["target"]
        args.method = stored["method"]
        cfg = ExplainConfig(**{**stored["config"], "segments_per_level": tuple(stored["config"]["segments_per_level"])})
        gcfg = GridMaskConfig(**stored["drise"])
    else:
        try:
            file_cfg = _load_toml_config(args.config)
        except OSError as e:
            return _fail(EXIT_INPUT, f"cannot read config: {e}")
        cfg = _explain_config(args, file_cfg)
        gcfg = _drise_config(args, file_cfg, cfg.master_seed)

    try:
        img = load_image(args.image)
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read image: {e}")
    try:
        det = CountingDetector(create_detector(args.detector, image_shape=img.shape, batch_size=cfg.batch_size))
    except ValueError as e:
        return _fail(EXIT_DETECTOR, str(e))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_for(args, "explain", cfg, gcfg, {"image": str(args.image), "target": args.target})
    try:
        target = _select_target(args.target, det, img, args.classes)
        timings: dict = {}
        m = _run_method(args.method, img, det, target, cfg, gcfg, timings)
    except TargetError as e:
        return _fail(EXIT_TARGET, str(e))
    except BackendError as e:
        return _fail(EXIT_BACKEND, str(e))
    finally:
        det.close()

    dcls = out / "saliency.dcls"
    heat = out / "heatmap.png"
    over = out / "overlay.png"
    write_dcls(m, dcls)
    save_heatmap_png(m, heat)
    save_overlay_png(img, m, over)
    outputs = [dcls, heat, over]
    if args.csv:
        write_csv(m, out / "saliency.csv")
        outputs.append(out / "saliency.csv")
    manifest.stages = {k: round(v, 6) for k, v in timings.items()}
    manifest.detector_calls = det.calls
    manifest.outputs = [str(p) for p in outputs]
    manifest.write(out / "manifest.json")
    print(f"wrote {dcls}, {heat}, {over} ({det.calls} detector calls)")
    return EXIT_OK


# --- benchmark -----------------------------------------------------------------

def _evaluate_object(img, det, target, gt_box, methods, cfg, gcfg, steps, object_id):
    """All metrics for one matched object under each requested method."""
    out = []
    for method in methods:
        m = minmax_normalize(_run_method(method, img, det, target, cfg, gcfg, None))
        try:
            sp = sparsity(m)
        except UndefinedMetricError:
            sp = float("nan")
        _, del_auc = deletion_curve(img, det, target, m, steps=steps)
        _, ins_auc = insertion_curve(img, det, target, m, steps=steps)
        out.append(
            EvalRecord(
                object_id=object_id,
                method=method,
                size_group="all",
                sparsity=sp,
                ebpg=ebpg(m, gt_box),
                deletion_auc=del_auc,
                insertion_auc=ins_auc,
                overall=overall(ins_auc, del_auc),
            )
        )
    return out


def _entry_detector(descriptor: str, entry, image_shape, batch_size: int):
    if descriptor == "synthetic:manifest":
        return blob_detector_for_entry(entry)
    return create_detector(descriptor, image_shape=image_shape, batch_size=batch_size)


def _benchmark_entry(entry_idx, entry, descriptor, methods, cfg, gcfg, steps, with_ablation):
    """Worker: evaluate every matched object of one corpus entry. Returns
    (records, ablation_records, ratios, calls, seconds)."""
    img = load_image(entry.image_path)
    det = CountingDetector(_entry_detector(descriptor, entry, img.shape, cfg.batch_size))
    t0 = time.perf_counter()
    records: list[EvalRecord] = []
    ablation_records: list[EvalRecord] = []
    ratios: list[float] = []
    try:
        clean = det.detect(img)
        gts = [(o.box, o.class_id) for o in entry.objects]
        matches = match_detections_to_gt(clean, gts)
        h, w = img.shape[:2]
        for gt_i, det_j in matches:
            target = TargetSpec(clean[det_j])
            gt_box = gts[gt_i][0]
            object_id = f"{Path(entry.image_path).stem}:{gt_i}"
            records.extend(
                _evaluate_object(img, det, target, gt_box, methods, cfg, gcfg, steps, object_id)
            )
            ratios.append(gt_box.area / (h * w))
            if with_ablation:
                maps = explain_ablations(img, det, target, cfg)
                for name, _, _ in ABLATION_SETTINGS:
                    m = minmax_normalize(maps[name])
                    _, del_auc = deletion_curve(img, det, target, m, steps=steps)
                    _, ins_auc = insertion_curve(img, det, target, m, steps=steps)
                    try:
                        sp = sparsity(m)
                    except UndefinedMetricError:
                        sp = float("nan")
                    ablation_records.append(
                        EvalRecord(
                            object_id=object_id,
                            method=f"ablation:{name}",
                            size_group="all",
                            sparsity=sp,
                            ebpg=ebpg(m, gt_box),
                            deletion_auc=del_auc,
                            insertion_auc=ins_auc,
                            overall=overall(ins_auc, del_auc),
                        )
                    )
    finally:
        det.close()
    return entry_idx, records, ablation_records, ratios, det.calls, time.perf_counter() - t0


def _assign_size_groups(records_per_object: list[list[EvalRecord]], ratios: list[float]) -> None:
    """Label records small/middle/large by 1-D k-means over area ratios;
    degenerate corpora (fewer than 3 distinct ratios) keep group 'all'."""
    if len(set(ratios)) < 3:
        return
    labels, _ = kmeans_1d_group(ratios, k=3)
    for recs, label in zip(records_per_object, labels):
        for r in recs:
            r.size_group = label


def cmd_benchmark(args) -> int:
    try:
        file_cfg = _load_toml_config(args.config)
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read config: {e}")
    cfg = _explain_config(args, file_cfg)
    gcfg = _drise_config(args, file_cfg, cfg.master_seed)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]

    try:
        entries = load_corpus(args.corpus)
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read corpus: {e}")
    except CorpusError as e:
        return _fail(EXIT_MANIFEST, str(e))
    if not entries:
        return _fail(EXIT_MANIFEST, f"{args.corpus}: corpus is empty")
    if args.limit:
        entries = entries[: args.limit]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_for(args, "benchmark", cfg, gcfg, {"corpus": str(args.corpus)})

    jobs = max(1, args.jobs)
    work = [
        (i, entry, args.detector, methods, cfg, gcfg, args.steps, args.ablation)
        for i, entry in enumerate(entries)
    ]
    results = []
    t_start = time.perf_counter()
    try:
        if jobs == 1:
            for w in work:
                results.append(_benchmark_entry(*w))
        else:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_benchmark_entry_star, work))
    except (OSError, ValueError) as e:
        return _fail(EXIT_DETECTOR, str(e))
    except BackendError as e:
        return _fail(EXIT_BACKEND, str(e))
    results.sort(key=lambda r: r[0])

    per_object_records: list[list[EvalRecord]] = []
    ablation_records: list[EvalRecord] = []
    ratios: list[float] = []
    total_calls = 0
    for _, recs, abl, rs, calls, _secs in results:
        # regroup records object-by-object so size labels line up with ratios
        by_object: dict[str, list[EvalRecord]] = {}
        for rec in recs + abl:
            by_object.setdefault(rec.object_id, []).append(rec)
        for object_id, rlist in by_object.items():
            per_object_records.append(rlist)
        ratios.extend(rs)
        ablation_records.extend(abl)
        total_calls += calls
    _assign_size_groups(per_object_records, ratios)
    records = [r for rlist in per_object_records for r in rlist if not r.method.startswith("ablation:")]

    if not records:
        return _fail(EXIT_MANIFEST, "no objects were matched; nothing to report")

    (out / "records.csv").write_text(records_to_csv(records + ablation_records))
    (out / "records.json").write_text(records_to_json(records + ablation_records))
    report = ["# Benchmark report", "", markdown_report(records)]
    if ablation_records:
        report += ["", "## Ablation settings", "", _ablation_table(ablation_records)]
    report += [
        "",
        "## Run summary",
        "",
        f"- objects evaluated: {len(per_object_records)}",
        f"- detector calls: {total_calls}",
        f"- wall-clock: {time.perf_counter() - t_start:.1f} s",
        f"- planned calls per object: dclose={cfg.levels * cfg.masks_per_level}, drise={gcfg.n_masks}",
        "",
    ]
    (out / "report.md").write_text("\n".join(report))
    manifest.detector_calls = total_calls
    manifest.stages = {"total": round(time.perf_counter() - t_start, 3)}
    manifest.outputs = [str(out / n) for n in ("records.csv", "records.json", "report.md")]
    manifest.write(out / "manifest.json")
    print((out / "report.md").read_text())
    return EXIT_OK


def _benchmark_entry_star(w):
    return _benchmark_entry(*w)


def _ablation_table(records: list[EvalRecord]) -> str:
    names = [f"ablation:{name}" for name, _, _ in ABLATION_SETTINGS]
    lines = ["| Setting | Sparsity | EBPG (%) | Over-all (%) |", "|---|---|---|---|"]
    for name in names:
        pool = [r for r in records if r.method == name]
        if not pool:
            continue
        lines.append(
            "| {} | {:.2f} | {:.2f} | {:.2%} |".format(
                name.split(":", 1)[1],
                float(np.mean([r.sparsity for r in pool])),
                float(np.mean([r.ebpg for r in pool])),
                float(np.mean([r.overall for r in pool])),
            )
        )
    return "\n".join(lines)


# --- sanity --------------------------------------------------------------------

def cmd_sanity(args) -> int:
    try:
        file_cfg = _load_toml_config(args.config)
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read config: {e}")
    cfg = _explain_config(args, file_cfg)
    gcfg = _drise_config(args, file_cfg, cfg.master_seed)
    try:
        img = load_image(args.image)
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read image: {e}")
    try:
        base = CountingDetector(create_detector(args.detector, image_shape=img.shape, batch_size=cfg.batch_size))
    except ValueError as e:
        return _fail(EXIT_DETECTOR, str(e))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_for(args, "sanity", cfg, gcfg, {"image": str(args.image), "target": args.target})
    try:
        target = _select_target(args.target, base, img, args.classes)
        randomized = make_randomized_detector(base, seed=args.randomize_seed)
        m_base = _run_method(args.method, img, base, target, cfg, gcfg, None)
        m_rand = _run_method(args.method, img, randomized, target, cfg, gcfg, None)
    except TargetError as e:
        return _fail(EXIT_TARGET, str(e))
    except BackendError as e:
        return _fail(EXIT_BACKEND, str(e))
    finally:
        base.close()

    try:
        corr = compare_maps(m_base, m_rand)
    except UndefinedMetricError:
        corr = float("nan")
    save_overlay_png(img, m_base, out / "base_overlay.png")
    save_overlay_png(img, m_rand, out / "randomized_overlay.png")
    (out / "sanity.json").write_text(json.dumps({"correlation": corr}, indent=2) + "\n")
    manifest.detector_calls = base.calls
    manifest.outputs = [str(out / n) for n in ("base_overlay.png", "randomized_overlay.png", "sanity.json")]
    manifest.write(out / "manifest.json")
    print(f"saliency correlation between base and randomized detector: {corr:.4f}")
    return EXIT_OK


# --- errordiff -----------------------------------------------------------------

def cmd_errordiff(args) -> int:
    try:
        file_cfg = _load_toml_config(args.config)
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read config: {e}")
    cfg = _explain_config(args, file_cfg)
    gcfg = _drise_config(args, file_cfg, cfg.master_seed)
    try:
        img = load_image(args.image)
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read image: {e}")
    try:
        det = CountingDetector(create_detector(args.detector, image_shape=img.shape, batch_size=cfg.batch_size))
    except ValueError as e:
        return _fail(EXIT_DETECTOR, str(e))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_for(
        args, "errordiff", cfg, gcfg, {"image": str(args.image), "target_a": args.target_a, "target_b": args.target_b}
    )
    try:
        target_a = _select_target(args.target_a, det, img, args.classes)
        target_b = _select_target(args.target_b, det, img, args.classes)
        m_a = minmax_normalize(_run_method(args.method, img, det, target_a, cfg, gcfg, None))
        m_b = minmax_normalize(_run_method(args.method, img, det, target_b, cfg, gcfg, None))
    except TargetError as e:
        return _fail(EXIT_TARGET, str(e))
    except BackendError as e:
        return _fail(EXIT_BACKEND, str(e))
    finally:
        det.close()

    diff = error_diff(m_a, m_b)
    write_dcls(m_a, out / "map_a.dcls")
    write_dcls(m_b, out / "map_b.dcls")
    save_overlay_png(img, m_a, out / "overlay_a.png")
    save_overlay_png(img, m_b, out / "overlay_b.png")
    save_diff_png(diff, out / "diff.png")
    np.save(out / "diff.npy", diff)
    manifest.detector_calls = det.calls
    manifest.outputs = [
        str(out / n) for n in ("map_a.dcls", "map_b.dcls", "overlay_a.png", "overlay_b.png", "diff.png", "diff.npy")
    ]
    manifest.write(out / "manifest.json")
    print(f"wrote signed difference map to {out / 'diff.png'}")
    return EXIT_OK


# --- converters / rendering -----------------------------------------------------

def _tool_manifest(command: str, inputs: dict, outputs: list) -> RunManifest:
    """Manifest for the file-transform commands, which have no pipeline run."""
    return RunManifest(
        tool_version=__version__,
        command=command,
        method="",
        detector="",
        inputs=inputs,
        config={},
        drise={},
        seeds={},
        outputs=[str(p) for p in outputs],
    )


def cmd_convert_coco(args) -> int:
    try:
        coco = json.loads(Path(args.coco).read_text())
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read COCO file: {e}")
    except json.JSONDecodeError as e:
        return _fail(EXIT_MANIFEST, f"{args.coco}: line {e.lineno}: {e.msg}")
    try:
        entries = convert_coco(coco, images_root=args.images_root)
    except CorpusError as e:
        return _fail(EXIT_MANIFEST, str(e))
    save_corpus(entries, args.out)
    manifest_path = Path(args.out).with_suffix(".manifest.json")
    _tool_manifest("convert-coco", {"coco": str(args.coco)}, [args.out]).write(manifest_path)
    print(f"wrote {args.out} ({len(entries)} entries)")
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        m = read_dcls(args.map)
    except (OSError, ValueError) as e:
        return _fail(EXIT_INPUT, f"cannot read saliency map: {e}")
    try:
        img = load_image(args.image)
    except OSError as e:
        return _fail(EXIT_INPUT, f"cannot read image: {e}")
    if (m.height, m.width) != img.shape[:2]:
        return _fail(EXIT_INPUT, f"map is {m.width}x{m.height} but image is {img.shape[1]}x{img.shape[0]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_heatmap_png(m, out / "heatmap.png")
    save_overlay_png(img, m, out / "overlay.png")
    _tool_manifest(
        "render", {"map": str(args.map), "image": str(args.image)}, [out / "heatmap.png", out / "overlay.png"]
    ).write(out / "manifest.json")
    print(f"wrote {out / 'heatmap.png'}, {out / 'overlay.png'}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file (flags override it)")
    p.add_argument("--method", choices=["dclose", "drise"], default="dclose")
    p.add_argument("--detector", default="synthetic:blob", help="synthetic:blob[@x1,y1,x2,y2[,class]] | subprocess:<command> | tcp:<host:port>")
    p.add_argument("--classes", type=int, default=None, help="class count for explicit targets when the backend does not expose one")
    p.add_argument("--segments", help="comma-separated superpixel counts per level")
    p.add_argument("--masks", type=int, default=None, help="masks per level")
    p.add_argument("--p", type=float, default=None, help="mask fill probability")
    p.add_argument("--r", type=float, default=None, help="mask resize offset ratio")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--fusion-order", choices=["fine_to_coarse", "coarse_to_fine"], default=None)
    p.add_argument("--no-density", dest="density", action="store_false", default=None)
    p.add_argument("--no-fusion", dest="fusion", action="store_false", default=None)
    p.add_argument("--drise-masks", type=int, default=None)
    p.add_argument("--drise-grid", help="grid resolution, e.g. 16,16")
    p.add_argument("--drise-p", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dclose", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="explain one detection, write saliency + renders")
    _add_common(p)
    p.add_argument("--image", required=False)
    p.add_argument("--target", default="0", help="index into clean detections, or x1,y1,x2,y2@class")
    p.add_argument("--out", default="out")
    p.add_argument("--csv", action="store_true", help="also write the raw grid as CSV")
    p.add_argument("--from-manifest", help="re-run a previous explain from its manifest")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("benchmark", help="run methods over a corpus and report metrics")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--methods", default="dclose,drise")
    p.add_argument("--steps", type=int, default=100, help="deletion/insertion steps")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--limit", type=int, default=0, help="evaluate only the first N entries")
    p.add_argument("--ablation", action="store_true", help="add ablation-setting rows")
    p.add_argument("--out", default="bench_out")
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("sanity", help="compare explanations under base vs randomized detector")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--target", default="0")
    p.add_argument("--randomize-seed", type=int, default=1)
    p.add_argument("--out", default="sanity_out")
    p.set_defaults(fn=cmd_sanity)

    p = sub.add_parser("errordiff", help="signed difference between two targets' explanations")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--target-a", required=True)
    p.add_argument("--target-b", required=True)
    p.add_argument("--out", default="errordiff_out")
    p.set_defaults(fn=cmd_errordiff)

    p = sub.add_parser("convert-coco", help="convert COCO annotation JSON to a corpus manifest")
    p.add_argument("--coco", required=True)
    p.add_argument("--images-root", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_convert_coco)

    p = sub.add_parser("render", help="re-render heatmap/overlay from a saved map")
    p.add_argument("--map", required=True, help=".dcls file")
    p.add_argument("--image", required=True)
    p.add_argument("--out", default="render_out")
    p.set_defaults(fn=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "explain" and not args.image and not args.from_manifest:
        return _fail(EXIT_INPUT, "explain needs --image (or --from-manifest)")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
