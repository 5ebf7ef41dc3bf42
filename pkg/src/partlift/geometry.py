"""Core point-cloud types and deterministic geometric primitives.

Positions are kept as 64-bit floats, colors as 8-bit unsigned integers.
Index sets are sorted and duplicate-free so that every tie-break rule in
this package ("lowest index wins") falls out of plain array order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ColoredPointCloud:
    """An object point cloud: N positions (x, y, z) with RGB colors."""

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray     # (N, 3) uint8

    def __post_init__(self) -> None:
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        col = np.ascontiguousarray(np.asarray(self.colors, dtype=np.uint8))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (N, 3), got {pos.shape}")
        if col.shape != pos.shape:
            raise ValueError(
                f"colors shape {col.shape} does not match positions shape {pos.shape}"
            )
        if pos.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "colors", _readonly(col))

    def __len__(self) -> int:
        return self.positions.shape[0]


class PointIndexSet:
    """A sorted, duplicate-free set of point indices into a cloud."""

    __slots__ = ("indices",)

    def __init__(self, indices: Iterable[int] = ()):
        arr = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                         dtype=np.int64)
        arr = np.unique(arr)
        if arr.size and arr[0] < 0:
            raise ValueError("point indices must be non-negative")
        self.indices: np.ndarray = _readonly(arr)

    @classmethod
    def _wrap(cls, sorted_unique: np.ndarray) -> "PointIndexSet":
        """Fast path for arrays already sorted, unique, and non-negative."""
        obj = cls.__new__(cls)
        obj.indices = _readonly(np.ascontiguousarray(sorted_unique, dtype=np.int64))
        return obj

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "PointIndexSet":
        return cls._wrap(np.nonzero(mask)[0].astype(np.int64))

    def __len__(self) -> int:
        return int(self.indices.size)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices.tolist())

    def __contains__(self, idx: int) -> bool:
        pos = np.searchsorted(self.indices, idx)
        return bool(pos < self.indices.size and self.indices[pos] == idx)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointIndexSet):
            return NotImplemented
        return self.indices.shape == other.indices.shape and bool(
            np.array_equal(self.indices, other.indices)
        )

    def __hash__(self) -> int:
        return hash(self.indices.tobytes())

    def __repr__(self) -> str:
        return f"PointIndexSet(n={len(self)})"

    def union(self, other: "PointIndexSet") -> "PointIndexSet":
        return PointIndexSet._wrap(np.union1d(self.indices, other.indices))

    def intersection(self, other: "PointIndexSet") -> "PointIndexSet":
        return PointIndexSet._wrap(
            np.intersect1d(self.indices, other.indices, assume_unique=True)
        )

    def difference(self, other: "PointIndexSet") -> "PointIndexSet":
        return PointIndexSet._wrap(
            np.setdiff1d(self.indices, other.indices, assume_unique=True)
        )

    def validate_for(self, n_points: int) -> None:
        if self.indices.size and self.indices[-1] >= n_points:
            raise ValueError(
                f"index {int(self.indices[-1])} out of range for cloud of {n_points} points"
            )


def set_iou(a: PointIndexSet, b: PointIndexSet) -> float:
    """Intersection-over-union of two index sets. Defined as 0 when both empty."""
    if len(a) == 0 and len(b) == 0:
        return 0.0
    inter = np.intersect1d(a.indices, b.indices, assume_unique=True).size
    union = len(a) + len(b) - inter
    return inter / union


@dataclass(frozen=True)
class CloudTransform:
    """Record of a centering + uniform scaling, invertible to model coordinates."""

    centroid: np.ndarray  # (3,)
    scale: float

    def apply(self, positions: np.ndarray) -> np.ndarray:
        return (positions - self.centroid) / self.scale

    def invert(self, positions: np.ndarray) -> np.ndarray:
        return positions * self.scale + self.centroid

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and bool(np.all(self.centroid == 0.0))


def normalize_to_unit_sphere(
    cloud: ColoredPointCloud,
) -> tuple[ColoredPointCloud, CloudTransform]:
    """Center the cloud on its centroid and scale the farthest point to norm 1.

    A degenerate cloud (all points coincident) is centered with scale 1, so the
    output is all zeros and the transform still inverts exactly.
    """
    centroid = cloud.positions.mean(axis=0)
    centered = cloud.positions - centroid
    max_norm = float(np.linalg.norm(centered, axis=1).max())
    scale = max_norm if max_norm > 0.0 else 1.0
    transform = CloudTransform(centroid=_readonly(centroid.copy()), scale=scale)
    return ColoredPointCloud(centered / scale, cloud.colors), transform


def closest_to_centroid(positions: np.ndarray, subset: PointIndexSet) -> int:
    """Index of the subset point nearest the subset centroid; ties -> lowest index."""
    if len(subset) == 0:
        raise ValueError("empty sample domain")
    pts = positions[subset.indices]
    centroid = pts.mean(axis=0)
    d2 = np.einsum("ij,ij->i", pts - centroid, pts - centroid)
    return int(subset.indices[int(np.argmin(d2))])


def farthest_point_sample(
    positions: np.ndarray, subset: PointIndexSet, count: int
) -> PointIndexSet:
    """Greedy farthest-point sampling over a subset of a cloud.

    The first sample is the subset point closest to the subset centroid; each
    following sample maximizes its minimum distance to the points already
    selected. All ties break toward the lowest point index, so the result is
    fully deterministic. Returns min(count, |subset|) indices.
    """
    if len(subset) == 0:
        raise ValueError("empty sample domain")
    if count < 1:
        raise ValueError("sample count must be >= 1")
    if count >= len(subset):
        return PointIndexSet._wrap(subset.indices.copy())

    pts = positions[subset.indices]
    seed_global = closest_to_centroid(positions, subset)
    seed_local = int(np.searchsorted(subset.indices, seed_global))

    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = seed_local
    diff = pts - pts[seed_local]
    min_d2 = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, count):
        # argmax returns the first occurrence, i.e. the lowest subset index.
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        diff = pts - pts[nxt]
        d2 = np.einsum("ij,ij->i", diff, diff)
        np.minimum(min_d2, d2, out=min_d2)
    return PointIndexSet._wrap(np.sort(subset.indices[chosen]))
