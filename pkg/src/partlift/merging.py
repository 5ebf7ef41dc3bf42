"""Merging 3D groups from all runs into disjoint unlabeled parts.

Two phases: greedily union groups that overlap an accumulated set beyond the
merge threshold (largest groups first, first match wins), then deduplicate
contested points by letting later, finer sets keep them. The procedure is
deliberately order-dependent, so it runs single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .extension import Group3D
from .geometry import PointIndexSet, set_iou


@dataclass
class Part3D:
    """A disjoint 3D point set produced by merging; labeled later."""

    points: PointIndexSet
    part_id: int
    label: int | None = None
    confidence: float = 0.0


def merge_groups(
    groups: Sequence[Group3D | PointIndexSet], threshold: float
) -> list[Part3D]:
    """Merge overlapping groups and emit pairwise-disjoint parts.

    Phase 1 scans groups by descending point count (ties keep input order)
    and unions each into the first accumulated set whose overlap exceeds the
    threshold, or appends it as a new set. Phase 2 walks the accumulated
    sets in order, appending each to the output and removing its points
    from every earlier output member; members emptied by that subtraction
    are dropped.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("merge threshold must lie in (0, 1)")
    sets = [g.points if isinstance(g, Group3D) else g for g in groups]
    if not sets:
        return []

    order = sorted(range(len(sets)), key=lambda i: -len(sets[i]))
    accumulated: list[PointIndexSet] = []
    for i in order:
        candidate = sets[i]
        for k, member in enumerate(accumulated):
            if set_iou(candidate, member) > threshold:
                accumulated[k] = member.union(candidate)
                break
        else:
            accumulated.append(candidate)

    output: list[PointIndexSet] = []
    for member in accumulated:
        output.append(member)
        for k in range(len(output) - 1):
            output[k] = output[k].difference(member)

    return [
        Part3D(points=s, part_id=pid)
        for pid, s in enumerate(s for s in output if len(s) > 0)
    ]
