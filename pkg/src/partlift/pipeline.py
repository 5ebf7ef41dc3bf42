"""End-to-end orchestration: normalize, render, extend, merge, label.

Defaults are the production configuration: 20 viewpoints at camera distance
2.2, 800x800 rendering, 256 key points for automatic segmentation, and merge
threshold 0.3.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .backends import (
    BackendUnavailableError,
    DetectionBackend,
    SegmentationBackend,
    TextPrompt,
)
from .extension import Group3D, self_extension
from .geometry import CloudTransform, ColoredPointCloud, normalize_to_unit_sphere
from .labeling import multi_model_labeling
from .merging import Part3D, merge_groups
from .multiview import (
    RenderProduct,
    ViewGraph,
    Viewpoint,
    build_view_graph,
    extension_sequence,
    place_viewpoints,
    render,
)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    viewpoint_count: int = 20
    resolution: int = 800
    fps_count: int = 256
    sve_fps_count: int = 8
    merge_threshold: float = 0.3
    camera_distance: float = 2.2
    splat_radius: int = 1
    extend: bool = True
    use_cnvp: bool = True
    vote_mode: str = "both"
    seed: int = 0
    min_group_size: int = 10
    min_visible_points: int = 3
    skip_on_failure: bool = False
    jobs: int = 1


@dataclass
class SegmentationRun:
    """Everything the unlabeled phase produced, reusable by the label phase."""

    parts: list[Part3D]
    groups: list[Group3D]
    renders: dict[int, RenderProduct]
    viewpoints: list[Viewpoint]
    graph: ViewGraph
    cloud: ColoredPointCloud  # normalized
    transform: CloudTransform


def render_views(
    cloud: ColoredPointCloud,
    viewpoints: Sequence[Viewpoint],
    resolution: int,
    splat_radius: int,
    jobs: int = 1,
) -> dict[int, RenderProduct]:
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            products = list(
                pool.map(
                    lambda vp: render(cloud, vp, resolution, splat_radius), viewpoints
                )
            )
    else:
        products = [render(cloud, vp, resolution, splat_radius) for vp in viewpoints]
    return {rp.viewpoint_id: rp for rp in products}


def collect_groups(
    cloud: ColoredPointCloud,
    renders: Mapping[int, RenderProduct],
    graph: ViewGraph,
    viewpoints: Sequence[Viewpoint],
    segmenter: SegmentationBackend,
    config: PipelineConfig,
) -> list[Group3D]:
    """Run one self-extension per start viewpoint and pool all groups."""
    starts = [vp.id for vp in viewpoints if vp.is_start]
    if not starts:
        starts = [viewpoints[0].id]

    def run(start: int) -> list[Group3D]:
        try:
            return self_extension(
                cloud,
                extension_sequence(graph, start),
                renders,
                segmenter.scoped(start),
                fps_count=config.fps_count,
                sve_fps_count=config.sve_fps_count,
                extend=config.extend,
                min_group_size=config.min_group_size,
                min_visible=config.min_visible_points,
                skip_on_failure=config.skip_on_failure,
            )
        except BackendUnavailableError:
            # a run whose own start view is down contributes nothing
            if not config.skip_on_failure:
                raise
            log.warning("run from view %d abandoned: segmenter unreachable", start)
            return []

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            per_run = list(pool.map(run, starts))
    else:
        per_run = [run(s) for s in starts]
    return [g for groups in per_run for g in groups]


def segment_unlabeled(
    cloud: ColoredPointCloud,
    segmenter: SegmentationBackend,
    config: PipelineConfig | None = None,
) -> SegmentationRun:
    config = config or PipelineConfig()
    t0 = time.perf_counter()
    normalized, transform = normalize_to_unit_sphere(cloud)
    viewpoints = place_viewpoints(config.viewpoint_count, config.camera_distance)
    renders = render_views(
        normalized, viewpoints, config.resolution, config.splat_radius, config.jobs
    )
    t1 = time.perf_counter()
    graph = build_view_graph(viewpoints)
    groups = collect_groups(normalized, renders, graph, viewpoints, segmenter, config)
    t2 = time.perf_counter()
    parts = merge_groups(groups, config.merge_threshold)
    t3 = time.perf_counter()
    log.info(
        "segment: %d views rendered in %.2fs, %d groups in %.2fs, "
        "%d parts merged in %.2fs",
        len(viewpoints), t1 - t0, len(groups), t2 - t1, len(parts), t3 - t2,
    )
    return SegmentationRun(
        parts=parts, groups=groups, renders=renders, viewpoints=viewpoints,
        graph=graph, cloud=normalized, transform=transform,
    )


def label_parts(
    run: SegmentationRun,
    detector: DetectionBackend,
    prompt: TextPrompt,
    config: PipelineConfig | None = None,
):
    config = config or PipelineConfig()
    t0 = time.perf_counter()
    labeled, votes, decision, discarded = multi_model_labeling(
        run.parts,
        run.renders,
        detector,
        prompt,
        use_cnvp=config.use_cnvp,
        mode=config.vote_mode,
        skip_on_failure=config.skip_on_failure,
    )
    log.info("label: %d boxes discarded, done in %.2fs",
             discarded, time.perf_counter() - t0)
    return labeled, votes, decision, discarded


def run_pipeline(
    cloud: ColoredPointCloud,
    segmenter: SegmentationBackend,
    detector: DetectionBackend,
    prompt: TextPrompt,
    config: PipelineConfig | None = None,
) -> tuple[list[Part3D], SegmentationRun]:
    """Unlabeled segmentation followed by labeling; returns labeled parts."""
    config = config or PipelineConfig()
    run = segment_unlabeled(cloud, segmenter, config)
    if not run.parts:
        return [], run
    labeled, _, _, _ = label_parts(run, detector, prompt, config)
    return labeled, run
