import itertools

import numpy as np
import pytest

from dclose import (
    BBox,
    BlobSpec,
    DetectionVector,
    ExplainConfig,
    FusionStack,
    LevelAccumulator,
    SaliencyMap,
    TargetSpec,
    explain,
    explain_ablations,
    fuse,
    fusion_cascade,
    make_blob_detector,
    mask_weight,
    minmax_normalize,
    read_dcls,
    similarity,
    write_dcls,
)
from dclose.detector import ProposalSet
from dclose.maskgen import iter_mask_chunks
from dclose.saliency import compute_level_accumulators, finalize_level
from dclose.segmentation import SegmentationMap
from dclose.metrics import ebpg


def _det(box, objectness, scores):
    return DetectionVector(BBox(*box), objectness=objectness, class_scores=np.asarray(scores))


class TestSimilarity:
    def test_self_similarity(self):
        d = _det((0, 0, 10, 10), 1.0, [0.2, 0.8])
        assert similarity(d, TargetSpec(d)) == pytest.approx(1.0)

    def test_disjoint_boxes_zero(self):
        a = _det((0, 0, 10, 10), 1.0, [0.9, 0.1])
        b = _det((20, 20, 30, 30), 1.0, [0.9, 0.1])
        assert similarity(a, TargetSpec(b)) == 0.0

    def test_product_of_factors(self):
        # IoU 0.5, objectness 0.8, cosine 1/sqrt(2)
        p = _det((0, 0, 10, 5), 0.8, [1.0, 1.0])
        t = _det((0, 0, 10, 10), 1.0, [1.0, 0.0])
        assert similarity(p, TargetSpec(t)) == pytest.approx(0.5 * 0.8 / np.sqrt(2), abs=1e-4)

    def test_class_length_mismatch(self):
        p = _det((0, 0, 10, 10), 1.0, [1.0])
        t = _det((0, 0, 10, 10), 1.0, [1.0, 0.0])
        with pytest.raises(ValueError):
            similarity(p, TargetSpec(t))


class TestMaskWeight:
    def test_empty_proposals(self):
        t = TargetSpec(_det((0, 0, 10, 10), 1.0, [1.0]))
        assert mask_weight(ProposalSet(), t) == 0.0

    def test_single_equal_proposal(self):
        d = _det((0, 0, 10, 10), 1.0, [0.3, 0.7])
        assert mask_weight(ProposalSet((d,)), TargetSpec(d)) == pytest.approx(1.0)

    def test_max_over_proposals(self):
        t = _det((0, 0, 10, 10), 1.0, [1.0])
        weak = _det((0, 0, 10, 3), 1.0, [1.0])  # IoU 0.3
        strong = _det((0, 0, 10, 9), 1.0, [1.0])  # IoU 0.9
        w = mask_weight(ProposalSet((weak, strong)), TargetSpec(t))
        assert w == pytest.approx(0.9)


class TestAccumulator:
    def test_all_ones_masks_density_equals_n(self, rng):
        acc = LevelAccumulator.zeros(3, 4)
        for i in range(7):
            acc.add(np.ones((3, 4)), weight=float(rng.random()))
        np.testing.assert_array_equal(acc.density, np.full((3, 4), 7.0))

    def test_zero_weight_only_raises_density(self):
        acc = LevelAccumulator.zeros(1, 2)
        acc.add(np.array([[1.0, 0.5]]), weight=0.0)
        np.testing.assert_array_equal(acc.weighted_sum, [[0.0, 0.0]])
        np.testing.assert_array_equal(acc.density, [[1.0, 0.5]])
        assert acc.count == 1

    def test_hand_sum(self):
        acc = LevelAccumulator.zeros(1, 2)
        acc.add(np.array([[1.0, 0.0]]), weight=0.5)
        acc.add(np.array([[1.0, 1.0]]), weight=1.0)
        np.testing.assert_allclose(acc.weighted_sum, [[1.5, 1.0]])
        np.testing.assert_allclose(acc.density, [[2.0, 1.0]])

    def test_finalize_density_and_mean(self):
        acc = LevelAccumulator.zeros(1, 2)
        acc.add(np.array([[1.0, 0.0]]), weight=0.5)
        acc.add(np.array([[1.0, 1.0]]), weight=1.0)
        np.testing.assert_allclose(finalize_level(acc, use_density=True).values, [[0.75, 1.0]])
        np.testing.assert_allclose(finalize_level(acc, use_density=False).values, [[0.75, 0.5]])

    def test_zero_density_pixels_get_zero(self):
        acc = LevelAccumulator.zeros(1, 2)
        acc.add(np.array([[1.0, 0.0]]), weight=1.0)
        np.testing.assert_allclose(finalize_level(acc, use_density=True).values, [[1.0, 0.0]])

    def test_weight_range_enforced(self):
        acc = LevelAccumulator.zeros(1, 1)
        with pytest.raises(ValueError):
            acc.add(np.ones((1, 1)), weight=1.5)

    def test_weighted_sum_bounded_by_density(self, rng):
        acc = LevelAccumulator.zeros(5, 5)
        for _ in range(50):
            acc.add(rng.random((5, 5)), weight=float(rng.random()))
        assert np.all(acc.weighted_sum <= acc.density + 1e-12)

    def test_merge_matches_sequential(self, rng):
        masks = rng.random((20, 4, 4))
        weights = rng.random(20)
        whole = LevelAccumulator.zeros(4, 4)
        whole.add_batch(masks, weights)
        a = LevelAccumulator.zeros(4, 4)
        b = LevelAccumulator.zeros(4, 4)
        a.add_batch(masks[:11], weights[:11])
        b.add_batch(masks[11:], weights[11:])
        a.merge(b)
        np.testing.assert_allclose(a.weighted_sum, whole.weighted_sum, atol=1e-12)
        assert a.count == whole.count

    def test_density_debiasing_constant_weights(self, rng):
        # constant weights: the density-normalized map is that constant
        # wherever any mask coverage exists, for any mask distribution
        for trial in range(20):
            acc = LevelAccumulator.zeros(6, 6)
            c = float(rng.uniform(0.1, 1.0))
            masks = (rng.random((30, 6, 6)) < rng.uniform(0.2, 0.8)).astype(float)
            acc.add_batch(masks, np.full(30, c))
            out = finalize_level(acc, use_density=True).values
            covered = acc.density > 0
            np.testing.assert_allclose(out[covered], c, atol=1e-6)
            np.testing.assert_array_equal(out[~covered], 0.0)

    def test_order_independence_within_tolerance(self, rng):
        masks = rng.random((64, 8, 8))
        weights = rng.random(64)
        a = LevelAccumulator.zeros(8, 8)
        a.add_batch(masks, weights)
        perm = rng.permutation(64)
        b = LevelAccumulator.zeros(8, 8)
        for i in perm:
            b.add(masks[i], float(weights[i]))
        np.testing.assert_allclose(
            finalize_level(a).values, finalize_level(b).values, atol=1e-6
        )

    def test_reference_order_bit_exact(self, rng):
        masks = rng.random((64, 8, 8)).astype(np.float32)
        weights = rng.random(64)
        runs = []
        for _ in range(2):
            acc = LevelAccumulator.zeros(8, 8)
            for start in range(0, 64, 16):
                acc.add_batch(masks[start : start + 16], weights[start : start + 16])
            runs.append(finalize_level(acc).values)
        np.testing.assert_array_equal(runs[0], runs[1])


class TestFusion:
    def test_single_level_is_normalized_input(self):
        out = fuse(FusionStack((np.array([[2.0, 0.0], [1.0, 0.0]]),)))
        np.testing.assert_allclose(out.values, [[1.0, 0.0], [0.5, 0.0]])
        assert out.normalized

    def test_two_level_regression_vector(self):
        s1 = np.array([[1.0, 0.0]])
        s2 = np.array([[1.0, 1.0]])
        steps = fusion_cascade([s1, s2])
        np.testing.assert_array_equal(steps[0], [[2.0, 1.0]])
        out = fuse(FusionStack((s1, s2)))
        np.testing.assert_allclose(out.values, [[1.0, 0.0]])

    def test_three_level_regression_vector(self):
        s1 = np.array([[1.0, 0.0]])
        s2 = np.array([[1.0, 1.0]])
        s3 = np.array([[0.0, 1.0]])
        steps = fusion_cascade([s1, s2, s3])
        np.testing.assert_array_equal(steps[0], [[2.0, 1.0]])
        np.testing.assert_array_equal(steps[1], [[0.0, 2.0]])
        out = fuse(FusionStack((s1, s2, s3)))
        np.testing.assert_allclose(out.values, [[0.0, 1.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            FusionStack((np.zeros((2, 2)), np.zeros((3, 3))))


class TestExplain:
    def test_blob_localization_with_defaults(self, blob_case):
        det, target = blob_case.detector(), blob_case.target()
        m = explain(blob_case.image, det, target, ExplainConfig(master_seed=11))
        assert m.normalized
        # frozen regression bound: most saliency energy falls on the evidence
        assert ebpg(m, blob_case.gt_box) >= 60.0

    def test_monotone_evidence(self, blob_case):
        det, target = blob_case.detector(), blob_case.target()
        cfg = ExplainConfig(segments_per_level=(50, 200, 800), masks_per_level=150, master_seed=2)
        m = explain(blob_case.image, det, target, cfg)
        b = blob_case.gt_box
        inside = m.values[int(b.y1) : int(b.y2), int(b.x1) : int(b.x2)]
        outside_mask = np.ones(m.values.shape, dtype=bool)
        outside_mask[int(b.y1) : int(b.y2), int(b.x1) : int(b.x2)] = False
        assert inside.mean() > m.values[outside_mask].mean()

    def test_orthogonal_target_gives_zero_map(self, blob_case):
        # same box, but a class vector orthogonal to everything the detector
        # can emit: every mask weight is 0
        scores = np.zeros(blob_case.class_count)
        scores[(blob_case.class_id + 1) % blob_case.class_count] = 1.0
        profile = blob_case.spec.class_profile.copy()
        profile[(blob_case.class_id + 1) % blob_case.class_count] = 0.0
        det = make_blob_detector(BlobSpec(box=blob_case.spec.box, class_profile=profile))
        target = TargetSpec(DetectionVector(blob_case.spec.box, objectness=1.0, class_scores=scores))
        cfg = ExplainConfig(segments_per_level=(20, 50), masks_per_level=30, master_seed=4)
        m = explain(blob_case.image, det, target, cfg)
        np.testing.assert_array_equal(m.values, 0.0)

    def test_deterministic(self, blob_case):
        det, target = blob_case.detector(), blob_case.target()
        cfg = ExplainConfig(segments_per_level=(30, 90), masks_per_level=40, master_seed=6)
        a = explain(blob_case.image, det, target, cfg)
        b = explain(blob_case.image, det, target, cfg)
        np.testing.assert_array_equal(a.values, b.values)

    def test_values_bounded_after_density_normalization(self, blob_case):
        det, target = blob_case.detector(), blob_case.target()
        cfg = ExplainConfig(segments_per_level=(40,), masks_per_level=60, master_seed=6)
        accs = compute_level_accumulators(blob_case.image, det, target, cfg)
        raw = finalize_level(accs[0], use_density=True)
        assert raw.values.min() >= 0.0 and raw.values.max() <= 1.0

    def test_ablation_no_fusion_is_mean_of_normalized_levels(self, blob_case):
        det, target = blob_case.detector(), blob_case.target()
        cfg = ExplainConfig(segments_per_level=(30, 90, 270), masks_per_level=40, master_seed=6, use_fusion=False)
        m = explain(blob_case.image, det, target, cfg)
        accs = compute_level_accumulators(blob_case.image, det, target, cfg)
        maps = [minmax_normalize(finalize_level(a, use_density=True)).values for a in accs]
        np.testing.assert_allclose(m.values, np.mean(maps, axis=0), atol=1e-7)
        assert not m.normalized

    def test_fusion_order_flag_flips_stack(self, blob_case):
        det, target = blob_case.detector(), blob_case.target()
        base = dict(segments_per_level=(30, 120), masks_per_level=40, master_seed=6)
        fine_first = explain(blob_case.image, det, target, ExplainConfig(**base, fusion_order="fine_to_coarse"))
        coarse_first = explain(blob_case.image, det, target, ExplainConfig(**base, fusion_order="coarse_to_fine"))
        assert not np.array_equal(fine_first.values, coarse_first.values)

    def test_explain_ablations_matches_separate_runs(self, blob_case):
        det, target = blob_case.detector(), blob_case.target()
        cfg = ExplainConfig(segments_per_level=(30, 90), masks_per_level=30, master_seed=8)
        shared = explain_ablations(blob_case.image, det, target, cfg)
        for name, use_density, use_fusion in (
            ("segment_only", False, False),
            ("with_density", True, False),
            ("with_fusion", True, True),
        ):
            separate = explain(blob_case.image, det, target, cfg.with_ablation(use_density, use_fusion))
            np.testing.assert_array_equal(shared[name].values, separate.values)

    def test_class_count_mismatch_rejected(self, blob_case):
        det = blob_case.detector()
        bad_target = TargetSpec(_det((0, 0, 5, 5), 1.0, [1.0]))  # 1 class vs detector's 3
        with pytest.raises(ValueError):
            explain(blob_case.image, det, bad_target, ExplainConfig(segments_per_level=(10,), masks_per_level=5))


class TestSmallExhaustiveOracle:
    def test_six_segment_exhaustive_vs_monte_carlo(self):
        # 12x12 image, 6 hand-built segments, r=0: enumerate all 2^6 masks
        labels = np.zeros((12, 12), dtype=np.int32)
        for r in range(2):
            for c in range(3):
                labels[r * 6 : (r + 1) * 6, c * 4 : (c + 1) * 4] = r * 3 + c
        seg = SegmentationMap(labels, n_requested=6)
        rng = np.random.default_rng(3)
        img = rng.uniform(0.2, 0.9, size=(12, 12, 3)).astype(np.float32)
        evidence = BBox(2, 3, 10, 10)
        det = make_blob_detector(
            BlobSpec(box=evidence, class_profile=np.array([0.7, 0.3])), score_floor=0.0
        )
        target = TargetSpec(det.detect(img)[0])

        num = np.zeros((12, 12))
        den = np.zeros((12, 12))
        for bits in itertools.product([0.0, 1.0], repeat=6):
            mask = np.asarray(bits)[labels]
            w = mask_weight(det.detect(img * mask[:, :, None]), target)
            num += w * mask
            den += mask
        exact = num / den

        acc = LevelAccumulator.zeros(12, 12)
        for _, masks in iter_mask_chunks(seg, 8000, 0.5, 0.0, seed=17, chunk=256):
            masked = img[None] * masks[:, :, :, None]
            weights = np.array([mask_weight(ps, target) for ps in det.detect_batch(list(masked))])
            acc.add_batch(masks, weights)
        mc = finalize_level(acc, use_density=True).values
        rel = np.abs(mc - exact) / exact
        assert rel.max() < 0.05


class TestDclsFormat:
    def test_round_trip(self, tmp_path, rng):
        m = SaliencyMap(rng.uniform(0, 1, size=(5, 7)).astype(np.float32))
        path = tmp_path / "map.dcls"
        write_dcls(m, path)
        back = read_dcls(path)
        assert (back.height, back.width) == (5, 7)
        np.testing.assert_array_equal(back.values, m.values)

    def test_header_layout(self, tmp_path):
        m = SaliencyMap(np.zeros((2, 3), dtype=np.float32))
        path = tmp_path / "map.dcls"
        write_dcls(m, path)
        raw = path.read_bytes()
        assert raw[:4] == b"DCLS"
        assert int.from_bytes(raw[4:8], "little") == 3  # width
        assert int.from_bytes(raw[8:12], "little") == 2  # height
        assert len(raw) == 16 + 2 * 3 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.dcls"
        path.write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(ValueError):
            read_dcls(path)
