"""Assigning instance labels to 3D parts from grounded 2D detections.

Detector boxes live in single-view pixel space while parts live in 3D, so
each box is matched twice: once against the 3D points visible inside it and
once against the projected 2D boxes of all parts. Only boxes whose two
matches agree cast a vote; the class-by-part vote counts are then refined
by penalizing every vote that falls short of its row maximum, and each part
takes the argmax of its column.
"""

from __future__ import annotations

import io
import logging
from dataclasses import replace
from typing import Mapping, Sequence

import numpy as np

from .backends import (
    BackendUnavailableError,
    DetectionBackend,
    DetectionBox,
    TextPrompt,
)
from .geometry import PointIndexSet, set_iou
from .merging import Part3D
from .multiview import EMPTY_INDEX, RenderProduct, bip_forward

log = logging.getLogger(__name__)

VOTE_MODES = ("both", "2d", "3d")


def box_visible_points(box: DetectionBox, rp: RenderProduct) -> PointIndexSet:
    """Distinct 3D points visible inside a box's inclusive pixel bounds."""
    if box.viewpoint_id != rp.viewpoint_id:
        raise ValueError("box and render come from different viewpoints")
    region = rp.index_map[box.y0: box.y1 + 1, box.x0: box.x1 + 1]
    vals = np.unique(region)
    vals = vals[vals != EMPTY_INDEX]
    return PointIndexSet._wrap(vals.astype(np.int64))


def part_box_2d(
    part_points: PointIndexSet, rp: RenderProduct
) -> tuple[int, int, int, int] | None:
    """Tight (x0, y0, x1, y1) around a part's visible pixels; None if unseen."""
    pixels = bip_forward(part_points, rp)
    if pixels.shape[0] == 0:
        return None
    return (
        int(pixels[:, 1].min()), int(pixels[:, 0].min()),
        int(pixels[:, 1].max()), int(pixels[:, 0].max()),
    )


def rect_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    """IoU between two inclusive-bound rectangles."""
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = ix1 - ix0 + 1, iy1 - iy0 + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return inter / (area_a + area_b - inter)


def tdcm_vote(
    boxes: Sequence[DetectionBox],
    parts: Sequence[Part3D],
    renders: Mapping[int, RenderProduct],
    num_classes: int,
    mode: str = "both",
) -> tuple[np.ndarray, int]:
    """Vote each box to its best-matched part, checking 2D and 3D agreement.

    Returns the (classes x parts) vote matrix and the number of discarded
    boxes. In "both" mode a box is accepted only when the argmax over
    point-set IoU (3D) and the argmax over projected-box IoU (2D) name the
    same part; "2d" and "3d" skip the cross-check and use a single space.
    Argmax ties break toward the lowest part id; a box scoring zero in every
    used space is discarded, as is any degenerate box.
    """
    if mode not in VOTE_MODES:
        raise ValueError(f"unknown vote mode {mode!r}")
    if not parts:
        raise ValueError("cannot vote with no parts")
    votes = np.zeros((num_classes, len(parts)), dtype=np.int64)
    discarded = 0

    part_boxes_by_view: dict[int, list[tuple[int, int, int, int] | None]] = {}

    def part_boxes(vp_id: int) -> list[tuple[int, int, int, int] | None]:
        got = part_boxes_by_view.get(vp_id)
        if got is None:
            got = [part_box_2d(p.points, renders[vp_id]) for p in parts]
            part_boxes_by_view[vp_id] = got
        return got

    for box in boxes:
        if box.is_degenerate or box.class_index >= num_classes:
            discarded += 1
            continue
        rp = renders[box.viewpoint_id]

        winner: int | None = None
        if mode in ("both", "3d"):
            inside = box_visible_points(box, rp)
            ious3d = np.array([set_iou(inside, p.points) for p in parts])
            s = int(np.argmax(ious3d)) if ious3d.max() > 0.0 else None
            winner = s
        if mode in ("both", "2d"):
            rects = part_boxes(box.viewpoint_id)
            bb = (box.x0, box.y0, box.x1, box.y1)
            ious2d = np.array(
                [rect_iou(bb, r) if r is not None else 0.0 for r in rects]
            )
            t = int(np.argmax(ious2d)) if ious2d.max() > 0.0 else None
            if mode == "2d":
                winner = t
            elif s is None or t is None or s != t:
                winner = None

        if winner is None:
            discarded += 1
            continue
        votes[box.class_index, winner] += 1
    return votes, discarded


def cnvp(votes: np.ndarray) -> np.ndarray:
    """Penalize every vote by its row maximum.

    A cell equal to its row maximum is kept; a cell at least half the row
    maximum is halved; anything below half is zeroed. All-zero rows stay
    zero.
    """
    v = np.asarray(votes, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("vote matrix must be 2-D")
    row_max = v.max(axis=1, keepdims=True)
    safe = np.where(row_max > 0, row_max, 1.0)
    ratio = v / safe
    out = np.where(ratio >= 1.0, v, np.where(ratio >= 0.5, v / 2.0, 0.0))
    return out


def assign_labels(
    decision: np.ndarray, parts: Sequence[Part3D]
) -> list[Part3D]:
    """Label each part with its column argmax; all-zero columns stay unlabeled.

    Confidence is the column maximum normalized by the global matrix
    maximum, giving a deterministic ranking for precision metrics.
    """
    decision = np.asarray(decision, dtype=np.float64)
    if decision.shape[1] != len(parts):
        raise ValueError("decision matrix columns must match part count")
    global_max = float(decision.max()) if decision.size else 0.0
    labeled = []
    for col, part in enumerate(parts):
        column = decision[:, col]
        peak = float(column.max()) if column.size else 0.0
        if peak <= 0.0:
            labeled.append(replace(part, label=None, confidence=0.0))
        else:
            labeled.append(
                replace(
                    part,
                    label=int(np.argmax(column)),
                    confidence=peak / global_max,
                )
            )
    return labeled


def multi_model_labeling(
    parts: Sequence[Part3D],
    renders: Mapping[int, RenderProduct],
    detector: DetectionBackend,
    prompt: TextPrompt,
    use_cnvp: bool = True,
    mode: str = "both",
    skip_on_failure: bool = False,
) -> tuple[list[Part3D], np.ndarray, np.ndarray, int]:
    """Detect over all views, vote, refine, and label every part.

    Returns (labeled parts, vote matrix, decision matrix, discarded count).
    """
    boxes: list[DetectionBox] = []
    for vp_id in sorted(renders):
        try:
            boxes.extend(detector.detect(renders[vp_id], prompt))
        except BackendUnavailableError:
            if not skip_on_failure:
                raise
            log.warning("detector unreachable for view %d; skipping", vp_id)
    if not parts:
        return [], np.zeros((len(prompt), 0), dtype=np.int64), np.zeros(
            (len(prompt), 0)
        ), len(boxes)
    votes, discarded = tdcm_vote(boxes, parts, renders, len(prompt), mode)
    decision = cnvp(votes) if use_cnvp else votes.astype(np.float64)
    labeled = assign_labels(decision, parts)
    log.info(
        "labeling: %d boxes, %d discarded, %d/%d parts labeled",
        len(boxes), discarded, sum(p.label is not None for p in labeled), len(parts),
    )
    return labeled, votes, decision, discarded


def matrix_to_csv(matrix: np.ndarray, class_names: Sequence[str]) -> str:
    """Render a vote or decision matrix as CSV with class-name row headers."""
    buf = io.StringIO()
    cols = matrix.shape[1] if matrix.ndim == 2 else 0
    buf.write("class," + ",".join(f"part_{i}" for i in range(cols)) + "\n")
    for name, row in zip(class_names, matrix):
        cells = ",".join(
            str(int(x)) if float(x).is_integer() else f"{float(x):g}" for x in row
        )
        buf.write(f"{name},{cells}\n")
    return buf.getvalue()
