import json

import numpy as np
import pytest

from dclose.cli import EXIT_DETECTOR, EXIT_INPUT, EXIT_MANIFEST, EXIT_TARGET, main
from dclose.corpus import load_corpus, make_blob_cases, write_blob_suite

FAST = ["--segments", "30,90,270", "--masks", "40", "--seed", "5", "--drise-masks", "150", "--drise-grid", "8,8"]


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite")
    cases = make_blob_cases(per_group=1, seed=3)
    write_blob_suite(root, cases)
    return root, cases


def _blob_descriptor(case):
    b = case.gt_box
    return f"synthetic:blob@{b.x1},{b.y1},{b.x2},{b.y2},{case.class_id}"


class TestExplain:
    def test_smoke_writes_four_files(self, suite_dir, tmp_path):
        root, cases = suite_dir
        out = tmp_path / "out"
        code = main(
            ["explain", "--image", str(root / "small_00.png"), "--detector", _blob_descriptor(cases[0]),
             "--target", "0", "--out", str(out)] + FAST
        )
        assert code == 0
        for name in ("saliency.dcls", "heatmap.png", "overlay.png", "manifest.json"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["detector_calls"] == 3 * 40 + 1  # levels x masks + clean detect
        assert manifest["tool_version"]

    def test_drise_method(self, suite_dir, tmp_path):
        root, cases = suite_dir
        out = tmp_path / "out"
        code = main(
            ["explain", "--image", str(root / "small_00.png"), "--detector", _blob_descriptor(cases[0]),
             "--method", "drise", "--out", str(out)] + FAST
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["method"] == "drise"
        assert manifest["detector_calls"] == 150 + 1

    def test_reproducible_byte_identical(self, suite_dir, tmp_path):
        root, cases = suite_dir
        args = ["explain", "--image", str(root / "middle_00.png"), "--detector", _blob_descriptor(cases[1])] + FAST
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "saliency.dcls").read_bytes()
        b = (tmp_path / "b" / "saliency.dcls").read_bytes()
        assert a == b

    def test_rerun_from_manifest(self, suite_dir, tmp_path):
        root, cases = suite_dir
        args = ["explain", "--image", str(root / "small_00.png"), "--detector", _blob_descriptor(cases[0])] + FAST
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(["explain", "--from-manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "saliency.dcls").read_bytes() == (tmp_path / "b" / "saliency.dcls").read_bytes()

    def test_explicit_box_target(self, suite_dir, tmp_path):
        root, cases = suite_dir
        b = cases[0].gt_box
        code = main(
            ["explain", "--image", str(root / "small_00.png"), "--detector", _blob_descriptor(cases[0]),
             "--target", f"{b.x1},{b.y1},{b.x2},{b.y2}@{cases[0].class_id}", "--out", str(tmp_path / "o")] + FAST
        )
        assert code == 0

    def test_exit_codes(self, suite_dir, tmp_path):
        root, cases = suite_dir
        img = str(root / "small_00.png")
        det = _blob_descriptor(cases[0])
        assert main(["explain", "--image", "/nope/missing.png", "--detector", det, "--out", str(tmp_path)] + FAST) == EXIT_INPUT
        assert main(["explain", "--image", img, "--detector", "magic:wand", "--out", str(tmp_path)] + FAST) == EXIT_DETECTOR
        assert main(["explain", "--image", img, "--detector", det, "--target", "99", "--out", str(tmp_path)] + FAST) == EXIT_TARGET

    def test_backend_failure_exit_code(self, suite_dir, tmp_path):
        from dclose.cli import EXIT_BACKEND

        root, _ = suite_dir
        code = main(
            ["explain", "--image", str(root / "small_00.png"), "--detector", "subprocess:/bin/false",
             "--out", str(tmp_path / "o")] + FAST
        )
        assert code == EXIT_BACKEND

    def test_csv_export(self, suite_dir, tmp_path):
        root, cases = suite_dir
        out = tmp_path / "csv"
        code = main(
            ["explain", "--image", str(root / "small_00.png"), "--detector", _blob_descriptor(cases[0]),
             "--csv", "--out", str(out)] + FAST
        )
        assert code == 0
        from dclose import read_dcls

        grid = np.loadtxt(out / "saliency.csv", delimiter=",")
        np.testing.assert_allclose(grid, read_dcls(out / "saliency.dcls").values, atol=1e-6)


class TestBenchmark:
    def test_fixture_run(self, suite_dir, tmp_path):
        root, _ = suite_dir
        out = tmp_path / "bench"
        code = main(
            ["benchmark", "--corpus", str(root / "corpus.json"), "--detector", "synthetic:manifest",
             "--steps", "20", "--out", str(out)] + FAST
        )
        assert code == 0
        report = (out / "report.md").read_text()
        assert "dclose" in report and "drise" in report
        for g in ("small", "middle", "large"):
            assert g in report
        records = json.loads((out / "records.json").read_text())
        assert {r["method"] for r in records} == {"dclose", "drise"}
        assert (out / "records.csv").exists() and (out / "manifest.json").exists()

    def test_empty_corpus_fails(self, tmp_path):
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        assert main(["benchmark", "--corpus", str(empty), "--detector", "synthetic:manifest",
                     "--out", str(tmp_path / "o")] + FAST) == EXIT_MANIFEST

    def test_malformed_corpus_fails(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("[{broken")
        assert main(["benchmark", "--corpus", str(bad), "--detector", "synthetic:manifest",
                     "--out", str(tmp_path / "o")] + FAST) == EXIT_MANIFEST

    def test_ablation_rows(self, suite_dir, tmp_path):
        root, _ = suite_dir
        out = tmp_path / "bench"
        code = main(
            ["benchmark", "--corpus", str(root / "corpus.json"), "--detector", "synthetic:manifest",
             "--steps", "20", "--limit", "1", "--methods", "dclose", "--ablation", "--out", str(out)] + FAST
        )
        assert code == 0
        report = (out / "report.md").read_text()
        assert "Ablation settings" in report
        for row in ("segment_only", "with_density", "with_fusion"):
            assert row in report

    def test_parallel_jobs_match_serial(self, suite_dir, tmp_path):
        root, _ = suite_dir
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        base = ["benchmark", "--corpus", str(root / "corpus.json"), "--detector", "synthetic:manifest",
                "--steps", "10", "--methods", "dclose"] + FAST
        assert main(base + ["--out", str(serial)]) == 0
        assert main(base + ["--out", str(parallel), "--jobs", "2"]) == 0
        a = json.loads((serial / "records.json").read_text())
        b = json.loads((parallel / "records.json").read_text())
        assert a == b


class TestSanity:
    def test_reports_correlation(self, suite_dir, tmp_path, capsys):
        root, cases = suite_dir
        out = tmp_path / "san"
        code = main(
            ["sanity", "--image", str(root / "middle_00.png"), "--detector", _blob_descriptor(cases[1]),
             "--out", str(out)] + FAST
        )
        assert code == 0
        corr = json.loads((out / "sanity.json").read_text())["correlation"]
        assert -1.0 <= corr <= 1.0
        assert corr < 0.5
        assert (out / "base_overlay.png").exists() and (out / "randomized_overlay.png").exists()


class TestErrordiff:
    def test_identical_targets_zero_diff(self, suite_dir, tmp_path):
        root, cases = suite_dir
        out = tmp_path / "ed"
        code = main(
            ["errordiff", "--image", str(root / "small_00.png"), "--detector", _blob_descriptor(cases[0]),
             "--target-a", "0", "--target-b", "0", "--out", str(out)] + FAST
        )
        assert code == 0
        diff = np.load(out / "diff.npy")
        np.testing.assert_array_equal(diff, 0.0)

    def test_two_object_targets_localize_disagreement(self, suite_dir, tmp_path):
        # an image with two bright objects and a two-proposal detector: the
        # signed diff must split along the two evidence regions
        from dclose.render import save_image

        img = np.full((64, 64, 3), 0.12, dtype=np.float32)
        img[8:28, 8:28] = 0.9
        img[36:56, 36:56] = 0.85
        img_path = tmp_path / "two.png"
        save_image(img, img_path)
        descriptor = "synthetic:blob@8,8,28,28,0;blob@36,36,56,56,1"
        out = tmp_path / "ed"
        code = main(
            ["errordiff", "--image", str(img_path), "--detector", descriptor,
             "--target-a", "0", "--target-b", "1", "--out", str(out)] + FAST
        )
        assert code == 0
        diff = np.load(out / "diff.npy")
        assert diff[8:28, 8:28].mean() > 0.2
        assert diff[36:56, 36:56].mean() < -0.2
        assert (out / "diff.png").exists()


class TestConvertAndRender:
    def test_convert_coco(self, tmp_path):
        coco = {
            "images": [{"id": 1, "file_name": "a.png"}],
            "annotations": [{"image_id": 1, "bbox": [1, 2, 3, 4], "category_id": 5}],
            "categories": [{"id": 5, "name": "thing"}],
        }
        src = tmp_path / "coco.json"
        src.write_text(json.dumps(coco))
        out = tmp_path / "corpus.json"
        assert main(["convert-coco", "--coco", str(src), "--out", str(out)]) == 0
        entries = load_corpus(out)
        assert entries[0].objects[0].box.as_tuple() == (1.0, 2.0, 4.0, 6.0)

    def test_render_from_dcls(self, suite_dir, tmp_path):
        root, cases = suite_dir
        out = tmp_path / "exp"
        assert main(["explain", "--image", str(root / "small_00.png"), "--detector", _blob_descriptor(cases[0]),
                     "--out", str(out)] + FAST) == 0
        rend = tmp_path / "rend"
        assert main(["render", "--map", str(out / "saliency.dcls"), "--image", str(root / "small_00.png"),
                     "--out", str(rend)]) == 0
        assert (rend / "heatmap.png").exists() and (rend / "overlay.png").exists()

    def test_render_size_mismatch(self, suite_dir, tmp_path):
        root, cases = suite_dir
        out = tmp_path / "exp"
        main(["explain", "--image", str(root / "small_00.png"), "--detector", _blob_descriptor(cases[0]),
              "--out", str(out)] + FAST)
        from dclose import SaliencyMap, write_dcls

        small = tmp_path / "small.dcls"
        write_dcls(SaliencyMap(np.zeros((4, 4), dtype=np.float32)), small)
        assert main(["render", "--map", str(small), "--image", str(root / "small_00.png"),
                     "--out", str(tmp_path / "r")]) == EXIT_INPUT
