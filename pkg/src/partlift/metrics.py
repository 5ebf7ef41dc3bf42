"""Evaluation: average IoU, AP at 50% overlap, and semantic mIoU.

Unannotated points are excluded from every IoU union. Average IoU scores
unlabeled segmentation (best overlap per ground-truth instance); AP50 scores
labeled parts ranked by confidence with greedy matching; semantic mIoU
scores the per-class unions after degrading instances to classes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backends import GroundTruth
from .geometry import PointIndexSet, set_iou
from .merging import Part3D

log = logging.getLogger(__name__)


def _annotated_points(part: Part3D, gt: GroundTruth) -> PointIndexSet:
    idx = part.points.indices
    return PointIndexSet._wrap(idx[gt.instance[idx] >= 0])


def average_iou(parts: Sequence[Part3D], gt: GroundTruth) -> float | None:
    """Mean over ground-truth instances of the best overlap with any part.

    Returns None (to be excluded from averages) when the object carries no
    annotated instances.
    """
    instance_ids = gt.instance_ids()
    if not instance_ids:
        log.warning("object has no annotated instances; excluded from averaging")
        return None
    pred_sets = [_annotated_points(p, gt) for p in parts]
    total = 0.0
    for iid in instance_ids:
        gt_points = gt.instance_points(iid)
        best = 0.0
        for pred in pred_sets:
            best = max(best, set_iou(pred, gt_points))
        total += best
    return total / len(instance_ids)


def ap50_by_class(
    samples: Sequence[tuple[Sequence[Part3D], GroundTruth]],
) -> dict[str, float]:
    """AP at 50% set-IoU per part class, pooled over the given objects.

    Predictions are ranked by confidence (ties by object order then part id)
    and greedily matched to unmatched ground-truth instances of the same
    class within their own object. Classes absent from both ground truth and
    predictions are excluded; a class with ground truth but no predictions
    scores 0.
    """
    class_names: list[str] = []
    for _, gt in samples:
        for name in gt.class_names:
            if name not in class_names:
                class_names.append(name)

    results: dict[str, float] = {}
    for class_name in class_names:
        gt_instances: list[tuple[int, PointIndexSet]] = []
        preds: list[tuple[float, int, int, PointIndexSet]] = []
        for sample_idx, (parts, gt) in enumerate(samples):
            if class_name in gt.class_names:
                class_idx = gt.class_names.index(class_name)
                for iid in gt.instance_ids():
                    if gt.instance_class(iid) == class_idx:
                        gt_instances.append((sample_idx, gt.instance_points(iid)))
                for part in parts:
                    if part.label is not None and part.label == class_idx:
                        preds.append(
                            (part.confidence, sample_idx, part.part_id,
                             _annotated_points(part, gt))
                        )
        if not gt_instances and not preds:
            continue
        if not gt_instances:
            results[class_name] = 0.0
            continue
        if not preds:
            results[class_name] = 0.0
            continue

        preds.sort(key=lambda p: (-p[0], p[1], p[2]))
        matched = [False] * len(gt_instances)
        tp = np.zeros(len(preds))
        for rank, (_, sample_idx, _, points) in enumerate(preds):
            best_iou, best_k = 0.0, -1
            for k, (gt_sample, gt_points) in enumerate(gt_instances):
                if matched[k] or gt_sample != sample_idx:
                    continue
                iou = set_iou(points, gt_points)
                if iou > best_iou:
                    best_iou, best_k = iou, k
            if best_iou >= 0.5:
                matched[best_k] = True
                tp[rank] = 1.0
        cum_tp = np.cumsum(tp)
        recalls = cum_tp / len(gt_instances)
        precisions = cum_tp / np.arange(1, len(preds) + 1)
        results[class_name] = _all_point_ap(recalls, precisions)
    return results


def _all_point_ap(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """Area under the monotone-decreasing precision envelope."""
    mrec = np.concatenate(([0.0], recalls))
    mpre = np.concatenate(([0.0], precisions))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    deltas = np.diff(mrec)
    return float(np.sum(deltas * mpre[1:]))


def map50(samples: Sequence[tuple[Sequence[Part3D], GroundTruth]]) -> float:
    per_class = ap50_by_class(samples)
    if not per_class:
        return 0.0
    return float(np.mean(list(per_class.values())))


def semantic_miou(parts: Sequence[Part3D], gt: GroundTruth) -> float:
    """Mean per-class IoU after merging parts and instances by class."""
    gt_classes = np.unique(gt.semantic[gt.semantic >= 0])
    if gt_classes.size == 0:
        return 0.0
    total = 0.0
    for class_idx in gt_classes.tolist():
        gt_points = PointIndexSet.from_mask(gt.semantic == class_idx)
        pred = PointIndexSet()
        for part in parts:
            if part.label == class_idx:
                pred = pred.union(_annotated_points(part, gt))
        total += set_iou(pred, gt_points)
    return total / gt_classes.size


@dataclass
class ObjectResult:
    """Per-object metric row feeding a report."""

    object_id: str
    category: str
    average_iou: float | None = None
    semantic_miou: float | None = None


@dataclass
class EvaluationReport:
    """Aggregated metrics: per-object rows plus category and overall means."""

    objects: list[ObjectResult] = field(default_factory=list)
    category_average_iou: dict[str, float] = field(default_factory=dict)
    category_map50: dict[str, float] = field(default_factory=dict)
    category_semantic_miou: dict[str, float] = field(default_factory=dict)
    ap50_per_class: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def overall_average_iou(self) -> float | None:
        vals = list(self.category_average_iou.values())
        return float(np.mean(vals)) if vals else None

    @property
    def overall_map50(self) -> float | None:
        vals = list(self.category_map50.values())
        return float(np.mean(vals)) if vals else None

    def to_json(self) -> str:
        payload = {
            "objects": [
                {
                    "object_id": o.object_id,
                    "category": o.category,
                    "average_iou": o.average_iou,
                    "semantic_miou": o.semantic_miou,
                }
                for o in self.objects
            ],
            "category_average_iou": self.category_average_iou,
            "category_map50": self.category_map50,
            "category_semantic_miou": self.category_semantic_miou,
            "ap50_per_class": self.ap50_per_class,
            "overall_average_iou": self.overall_average_iou,
            "overall_map50": self.overall_map50,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("category", "avg_iou", "mAP50", "sem_mIoU")]
        for cat in sorted(self.category_average_iou):
            rows.append(
                (
                    cat,
                    f"{self.category_average_iou[cat]:.4f}",
                    _fmt(self.category_map50.get(cat)),
                    _fmt(self.category_semantic_miou.get(cat)),
                )
            )
        overall = self.overall_average_iou
        if overall is not None:
            rows.append(
                ("overall", f"{overall:.4f}", _fmt(self.overall_map50), "")
            )
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = [
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
            for row in rows
        ]
        return "\n".join(lines)


def _fmt(value: float | None) -> str:
    return f"{value:.4f}" if value is not None else "-"


def build_report(
    entries: Sequence[tuple[str, str, Sequence[Part3D], GroundTruth]],
) -> EvaluationReport:
    """Aggregate (object_id, category, labeled parts, ground truth) tuples."""
    report = EvaluationReport()
    by_category: dict[str, list[tuple[Sequence[Part3D], GroundTruth]]] = {}
    for object_id, category, parts, gt in entries:
        row = ObjectResult(object_id=object_id, category=category)
        row.average_iou = average_iou(parts, gt)
        row.semantic_miou = semantic_miou(parts, gt)
        report.objects.append(row)
        by_category.setdefault(category, []).append((parts, gt))

    for category, samples in sorted(by_category.items()):
        ious = [
            o.average_iou
            for o in report.objects
            if o.category == category and o.average_iou is not None
        ]
        if ious:
            report.category_average_iou[category] = float(np.mean(ious))
        mious = [
            o.semantic_miou
            for o in report.objects
            if o.category == category and o.semantic_miou is not None
        ]
        if mious:
            report.category_semantic_miou[category] = float(np.mean(mious))
        per_class = ap50_by_class(samples)
        report.ap50_per_class[category] = per_class
        if per_class:
            report.category_map50[category] = float(
                np.mean(list(per_class.values()))
            )
    return report
