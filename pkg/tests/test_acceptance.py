"""Acceptance suite: one test per criterion, each printing a verdict line.

Criteria 1-9 cover the primary component. Criterion 10 (bridge protocol
conformance) lives in the bridge package's own test suite and does not
affect this one.
"""

import time

import numpy as np

from fixture_occlusion import build_occlusion_fixture
from partlift.backends import (
    NoiseParams,
    NoisyDetector,
    NoisySegmenter,
    OracleDetector,
    OracleSegmenter,
    TextPrompt,
)
from partlift.extension import Group3D
from partlift.geometry import (
    ColoredPointCloud,
    PointIndexSet,
    normalize_to_unit_sphere,
)
from partlift.labeling import assign_labels, cnvp, tdcm_vote
from partlift.merging import Part3D, merge_groups
from partlift.metrics import average_iou
from partlift.multiview import (
    EMPTY_INDEX,
    Viewpoint,
    bip_backward,
    bip_forward,
    build_view_graph,
    extension_sequence,
    place_viewpoints,
    render,
    visible_subset,
)
from partlift.pipeline import (
    PipelineConfig,
    collect_groups,
    render_views,
    run_pipeline,
    segment_unlabeled,
)
from partlift.scenes import SceneSpec, generate_scene, template_classes
from test_merging import reference_merge

ALL_TEMPLATES = ("mug", "table", "kettle", "stapler", "lamp")


def _verdict(criterion: int, ok: bool, detail: str) -> None:
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def _label_accuracy(labeled, gt) -> float:
    correct = 0
    for part in labeled:
        iid = int(gt.instance[part.points.indices[0]])
        if part.label is not None and part.label == gt.instance_class(iid):
            correct += 1
    return correct / len(labeled)


def test_criterion_1_cnvp_unit_exact():
    out = cnvp(np.array([[16, 8, 6, 0]]))
    ok = out.tolist() == [[16.0, 4.0, 0.0, 0.0]]
    # row maximum retained, boundary ratio halves, below-half zeroes
    ok = ok and cnvp(np.array([[10, 5]])).tolist() == [[10.0, 2.5]]
    ok = ok and cnvp(np.array([[10, 4]])).tolist() == [[10.0, 0.0]]
    ok = ok and cnvp(np.array([[10, 10]])).tolist() == [[10.0, 10.0]]
    _verdict(1, ok, "vote row {16,8,6,0} refines to {16,4,0,0} exactly")


def test_criterion_2_merging_matches_reference_on_200_fixtures():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(200):
        n_groups = int(rng.integers(1, 9))
        universe = int(rng.integers(10, 501))
        groups = []
        for _ in range(n_groups):
            size = int(rng.integers(1, universe + 1))
            groups.append(
                set(rng.choice(universe, size=size, replace=False).tolist())
            )
        threshold = float(rng.uniform(0.05, 0.95))
        ours = merge_groups(
            [Group3D(PointIndexSet(sorted(g)), 1) for g in groups], threshold
        )
        ref = reference_merge(groups, threshold)
        assert [set(p.points.indices.tolist()) for p in ours] == ref
        checked += 1
    _verdict(
        2, checked == 200,
        f"200/200 randomized fixtures match the reference merge "
        f"({time.perf_counter() - t0:.1f}s)",
    )


def test_criterion_3_end_to_end_oracle_run():
    t0 = time.perf_counter()
    config = PipelineConfig()
    assert (config.viewpoint_count, config.resolution, config.fps_count,
            config.merge_threshold, config.camera_distance) == (20, 800, 256, 0.3, 2.2)
    worst_iou, worst_acc = 1.0, 1.0
    for template in ALL_TEMPLATES:
        cloud, gt = generate_scene(SceneSpec(template, total_points=20000, seed=7))
        prompt = TextPrompt(tuple(template_classes(template)))
        labeled, _ = run_pipeline(
            cloud, OracleSegmenter(gt), OracleDetector(gt), prompt, config
        )
        aiou = average_iou(labeled, gt)
        acc = _label_accuracy(labeled, gt)
        worst_iou = min(worst_iou, aiou)
        worst_acc = min(worst_acc, acc)
    elapsed = time.perf_counter() - t0
    ok = worst_iou >= 0.95 and worst_acc == 1.0 and elapsed < 300.0
    _verdict(
        3, ok,
        f"5 templates at full defaults: min avg IoU {worst_iou:.4f} (>= 0.95), "
        f"label accuracy {worst_acc:.0%} (= 100%), {elapsed:.0f}s (< 300s)",
    )


def test_criterion_4_extending_ablation_direction():
    t0 = time.perf_counter()
    thresholds = [round(0.1 * k, 1) for k in range(1, 10)]
    per_setting = {"ext": [], "noext": []}
    params = NoiseParams(erosion=2, drop_rate=0.1)
    for template in ("mug", "kettle", "stapler"):
        cloud, gt = generate_scene(SceneSpec(template, total_points=8000, seed=7))
        normalized, _ = normalize_to_unit_sphere(cloud)
        viewpoints = place_viewpoints(20)
        renders = render_views(normalized, viewpoints, 400, 1)
        graph = build_view_graph(viewpoints)
        for setting, extend in (("ext", True), ("noext", False)):
            cfg = PipelineConfig(resolution=400, extend=extend)
            groups = collect_groups(
                normalized, renders, graph, viewpoints,
                NoisySegmenter(gt, params, seed=5), cfg,
            )
            per_setting[setting].append(
                [average_iou(merge_groups(groups, t), gt) for t in thresholds]
            )
    ext_by_t = np.mean(per_setting["ext"], axis=0)
    noext_by_t = np.mean(per_setting["noext"], axis=0)
    ext_mean, noext_mean = ext_by_t.mean(), noext_by_t.mean()
    ext_range = ext_by_t.max() - ext_by_t.min()
    noext_range = noext_by_t.max() - noext_by_t.min()
    ok = ext_mean > noext_mean and ext_range < noext_range
    _verdict(
        4, ok,
        f"extending mean {ext_mean:.3f} > without {noext_mean:.3f}; "
        f"range {ext_range:.3f} < {noext_range:.3f} over T in 0.1..0.9 "
        f"({time.perf_counter() - t0:.0f}s)",
    )


def test_criterion_5_cnvp_ablation_direction():
    t0 = time.perf_counter()
    fixtures = []
    for template in ("mug", "table", "lamp"):
        cloud, gt = generate_scene(SceneSpec(template, total_points=6000, seed=7))
        normalized, _ = normalize_to_unit_sphere(cloud)
        renders = render_views(normalized, place_viewpoints(4), 320, 1)
        parts = [
            Part3D(gt.instance_points(iid), k)
            for k, iid in enumerate(gt.instance_ids())
        ]
        prompt = TextPrompt(tuple(template_classes(template)))
        fixtures.append((gt, renders, parts, prompt))

    with_means, without_means = [], []
    for seed in range(50):
        acc_with, acc_without = [], []
        for gt, renders, parts, prompt in fixtures:
            detector = NoisyDetector(gt, NoiseParams(mislabel_rate=0.2), seed=seed)
            boxes = [
                b for vp_id in sorted(renders)
                for b in detector.detect(renders[vp_id], prompt)
            ]
            votes, _ = tdcm_vote(boxes, parts, renders, len(prompt))
            acc_with.append(_label_accuracy(assign_labels(cnvp(votes), parts), gt))
            acc_without.append(
                _label_accuracy(assign_labels(votes.astype(float), parts), gt)
            )
        with_means.append(np.mean(acc_with))
        without_means.append(np.mean(acc_without))

    diffs = np.array(with_means) - np.array(without_means)
    boot = np.random.default_rng(0).choice(
        diffs, size=(10000, diffs.size), replace=True
    ).mean(axis=1)
    sign_confidence = float((boot >= 0).mean())
    ok = diffs.mean() >= 0 and sign_confidence >= 0.95
    _verdict(
        5, ok,
        f"labeling accuracy with refinement {np.mean(with_means):.4f} >= "
        f"without {np.mean(without_means):.4f} over 50 seeds; "
        f"bootstrap sign confidence {sign_confidence:.3f} >= 0.95 "
        f"({time.perf_counter() - t0:.0f}s)",
    )


def test_criterion_6_tdcm_occlusion_fixture():
    parts, renders, crafted, back_idx, front_idx = build_occlusion_fixture()
    votes_both, disc_both = tdcm_vote([crafted], parts, renders, 1, mode="both")
    votes_2d, disc_2d = tdcm_vote([crafted], parts, renders, 1, mode="2d")
    votes_3d, disc_3d = tdcm_vote([crafted], parts, renders, 1, mode="3d")
    ok = (
        disc_both == 1 and votes_both.sum() == 0
        and disc_2d == 0 and votes_2d[0, back_idx] == 1
        and disc_3d == 0 and votes_3d[0, front_idx] == 1
    )
    _verdict(
        6, ok,
        "cross-matched box: discarded by 2D&3D checking, accepted by both "
        "single-space modes (toward different parts)",
    )


def test_criterion_7_rotation_insensitivity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    config = PipelineConfig(resolution=320)
    worst = 0.0
    for template in ALL_TEMPLATES:
        cloud, gt = generate_scene(SceneSpec(template, total_points=6000, seed=7))
        base = average_iou(
            segment_unlabeled(cloud, OracleSegmenter(gt), config).parts, gt
        )
        for _ in range(10):
            angles = tuple(rng.uniform(0.0, 360.0, 3).tolist())
            rcloud, rgt = generate_scene(
                SceneSpec(template, total_points=6000, seed=7, rotation=angles)
            )
            riou = average_iou(
                segment_unlabeled(rcloud, OracleSegmenter(rgt), config).parts, rgt
            )
            worst = max(worst, abs(riou - base))
    ok = worst <= 0.02
    _verdict(
        7, ok,
        f"max avg-IoU shift over 10 random rotations x {len(ALL_TEMPLATES)} "
        f"templates = {worst:.4f} (<= 0.02) ({time.perf_counter() - t0:.0f}s)",
    )


def _random_test_cloud(rng, n=150):
    return ColoredPointCloud(
        rng.normal(size=(n, 3)) * 0.5,
        rng.integers(0, 256, (n, 3)).astype(np.uint8),
    )


def test_criterion_8_projection_invariants():
    t0 = time.perf_counter()
    viewpoints = place_viewpoints(20)

    violations = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cloud = _random_test_cloud(rng)
        vp = viewpoints[int(rng.integers(0, 20))]
        rp = render(cloud, vp, resolution=96)
        subset = PointIndexSet(rng.choice(len(cloud), size=40, replace=False))
        back = bip_backward(bip_forward(subset, rp), rp)
        if not np.all(np.isin(back.indices, subset.indices)):
            violations += 1
        visible_part = subset.intersection(visible_subset(rp))
        back_full = bip_backward(bip_forward(visible_part, rp), rp)
        if back_full != visible_part:
            violations += 1

    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        cloud = _random_test_cloud(rng)
        rp = render(cloud, viewpoints[int(rng.integers(0, 20))], resolution=96)
        mask = rp.index_map != EMPTY_INDEX
        if not np.array_equal(rp.image[mask], cloud.colors[rp.index_map[mask]]):
            violations += 1

    for seed in range(100):
        rng = np.random.default_rng(2000 + seed)
        count = int(rng.integers(2, 31))
        vps = place_viewpoints(count)
        graph = build_view_graph(vps)
        start = int(rng.choice([vp.id for vp in vps]))
        seq = extension_sequence(graph, start)
        edges = set(graph.edges)
        if sorted(seq) != sorted(graph.nodes):
            violations += 1
        for j in range(1, len(seq)):
            if not any(
                (min(seq[j], m), max(seq[j], m)) in edges for m in seq[:j]
            ):
                violations += 1
    ok = violations == 0
    _verdict(
        8, ok,
        f"projection roundtrip, image consistency, co-view guarantee: "
        f"0 violations over 3x100 seeds ({time.perf_counter() - t0:.0f}s)",
    )


def test_criterion_9_viewpoint_count_direction():
    t0 = time.perf_counter()
    params = NoiseParams(erosion=2, drop_rate=0.1)
    means = {}
    for count in (20, 8, 4):
        ious = []
        for template in ALL_TEMPLATES:
            cloud, gt = generate_scene(SceneSpec(template, total_points=6000, seed=7))
            cfg = PipelineConfig(viewpoint_count=count, resolution=320)
            run = segment_unlabeled(cloud, NoisySegmenter(gt, params, seed=5), cfg)
            ious.append(average_iou(run.parts, gt))
        means[count] = float(np.mean(ious))
    ok = means[20] >= means[8] >= means[4]
    _verdict(
        9, ok,
        f"avg IoU by view count: 20 -> {means[20]:.3f} >= 8 -> {means[8]:.3f} "
        f">= 4 -> {means[4]:.3f} ({time.perf_counter() - t0:.0f}s)",
    )
