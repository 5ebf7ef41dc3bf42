"""Growing 2D segments into 3D groups across a viewpoint sequence.

A run starts at one start viewpoint: key points sampled from the visible
surface guide the segmenter's automatic mode, and each returned mask is
back-projected into an initial 3D group. The run then walks the extension
sequence; at every later viewpoint the visible portion of each group is
re-prompted and the best-matching mask's back-projection is unioned in, so
groups only ever grow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .backends import BackendUnavailableError, SegmentationBackend
from .geometry import (
    ColoredPointCloud,
    PointIndexSet,
    closest_to_centroid,
    farthest_point_sample,
    set_iou,
)
from .multiview import RenderProduct, bip_backward, bip_forward, visible_subset

log = logging.getLogger(__name__)

DEFAULT_FPS_COUNT = 256
DEFAULT_SVE_FPS_COUNT = 8
MIN_GROUP_SIZE = 10
MIN_VISIBLE_POINTS = 3


@dataclass
class Group3D:
    """A growing set of 3D points with shared semantics, born from one mask."""

    points: PointIndexSet
    origin_start_viewpoint: int


def guided_auto_segment(
    cloud: ColoredPointCloud,
    rp: RenderProduct,
    backend: SegmentationBackend,
    fps_count: int = DEFAULT_FPS_COUNT,
    min_group_size: int = MIN_GROUP_SIZE,
) -> list[Group3D]:
    """Automatic segmentation of a start view, lifted to 3D groups.

    Key points are a farthest-point sample of the view's visible surface,
    forward-projected to pixels. Each mask the backend returns is
    back-projected; empty or tiny back-projections are dropped as raster
    noise.
    """
    vis = visible_subset(rp)
    if len(vis) == 0:
        log.info("view %d shows no points; no groups created", rp.viewpoint_id)
        return []
    keys = farthest_point_sample(cloud.positions, vis, fps_count)
    key_pixels = bip_forward(keys, rp)
    masks = backend.segment_auto(rp, key_pixels)
    groups = []
    for mask in masks:
        points = bip_backward(mask.pixels(), rp)
        if len(points) >= min_group_size:
            groups.append(Group3D(points, rp.viewpoint_id))
    return groups


def single_viewpoint_extension(
    cloud: ColoredPointCloud,
    group: Group3D,
    rp: RenderProduct,
    backend: SegmentationBackend,
    sve_fps_count: int = DEFAULT_SVE_FPS_COUNT,
    min_visible: int = MIN_VISIBLE_POINTS,
) -> Group3D:
    """Extend one group from one viewpoint; groups out of view are unchanged.

    The visible portion of the group supplies prompt points (a sparse
    farthest-point sample plus the centroid-closest point). Among the
    candidate masks, the one whose back-projection best overlaps the visible
    portion is unioned into the group.
    """
    vis = group.points.intersection(visible_subset(rp))
    if len(vis) < min_visible:
        return group
    prompts = farthest_point_sample(cloud.positions, vis, sve_fps_count).union(
        PointIndexSet([closest_to_centroid(cloud.positions, vis)])
    )
    prompt_pixels = bip_forward(prompts, rp)
    candidates = backend.segment_prompted(rp, prompt_pixels)
    if not candidates:
        return group
    best_points: PointIndexSet | None = None
    best_iou = -1.0
    for mask in candidates:
        back = bip_backward(mask.pixels(), rp)
        iou = set_iou(back, vis)
        if iou > best_iou:
            best_iou, best_points = iou, back
    merged = group.points.union(best_points)
    if len(merged) == len(group.points):
        return group
    return Group3D(merged, group.origin_start_viewpoint)


def self_extension(
    cloud: ColoredPointCloud,
    sequence: Sequence[int],
    renders: Mapping[int, RenderProduct],
    backend: SegmentationBackend,
    fps_count: int = DEFAULT_FPS_COUNT,
    sve_fps_count: int = DEFAULT_SVE_FPS_COUNT,
    extend: bool = True,
    min_group_size: int = MIN_GROUP_SIZE,
    min_visible: int = MIN_VISIBLE_POINTS,
    skip_on_failure: bool = False,
) -> list[Group3D]:
    """One full run: auto-segment the sequence head, then extend through the
    remaining viewpoints in order. With extend=False the groups stay
    single-view.

    Backend failures normally propagate; with skip_on_failure the failing
    viewpoint is skipped and its groups stay unextended (the start view is
    never skippable, since nothing exists without it).
    """
    if not sequence:
        raise ValueError("extension sequence is empty")
    groups = guided_auto_segment(
        cloud, renders[sequence[0]], backend, fps_count, min_group_size
    )
    if not extend:
        return groups
    extensions = 0
    for vp_id in sequence[1:]:
        rp = renders[vp_id]
        updated = []
        try:
            for group in groups:
                new_group = single_viewpoint_extension(
                    cloud, group, rp, backend, sve_fps_count, min_visible
                )
                if new_group is not group:
                    extensions += 1
                updated.append(new_group)
        except BackendUnavailableError:
            if not skip_on_failure:
                raise
            log.warning("segmenter unreachable for view %d; skipping", vp_id)
            continue
        groups = updated
    log.info(
        "run from view %d: %d groups, %d extensions applied",
        sequence[0], len(groups), extensions,
    )
    return groups
