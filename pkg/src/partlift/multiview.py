"""Viewpoint placement, point-splat rendering, and 2D/3D projection.

Each render produces an RGB raster plus an index map recording which 3D
point won the per-pixel depth test. The index map is the bridge for both
projection directions: a 3D subset forward-projects to the pixels its
visible members won, and a pixel set back-projects to the distinct point
indices stored there.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import ColoredPointCloud, PointIndexSet

EMPTY_INDEX = -1
BACKGROUND_COLOR = (255, 255, 255)

# 8 azimuths at 45 deg spacing for the top/bottom rings, 4 at 90 deg for the
# middle ring; the starred ids are the start viewpoints.
_RING_AZIMUTHS_8 = tuple(-35.0 + 45.0 * k for k in range(8))
_RING_AZIMUTHS_4 = tuple(-35.0 + 90.0 * k for k in range(4))
_START_IDS_20 = frozenset({1, 3, 5, 7, 13, 15, 17, 19})


@dataclass(frozen=True)
class Viewpoint:
    """A virtual camera pose: spherical position looking at the origin."""

    id: int
    elevation: float  # degrees above the xy-plane
    azimuth: float    # degrees around +z, from +x
    distance: float
    is_start: bool = False

    @property
    def position(self) -> np.ndarray:
        e = math.radians(self.elevation)
        a = math.radians(self.azimuth)
        return self.distance * np.array(
            [math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)]
        )


def place_viewpoints(count: int = 20, distance: float = 2.2) -> list[Viewpoint]:
    """Arrange `count` viewpoints around the origin.

    Counts 20, 8, and 4 reproduce the canonical ring layouts (elevations
    35 / -10 / -55 with fixed azimuths; 8 keeps only the start viewpoints,
    4 keeps elevations {35, -55} x azimuths {-35, 145}). Other counts fall
    back to a Fibonacci sphere with up to 8 evenly spaced start viewpoints.
    """
    if count < 1:
        raise ValueError("viewpoint count must be >= 1")
    if count == 20:
        rows = (
            [(35.0, az) for az in _RING_AZIMUTHS_8]
            + [(-10.0, az) for az in _RING_AZIMUTHS_4]
            + [(-55.0, az) for az in _RING_AZIMUTHS_8]
        )
        return [
            Viewpoint(i + 1, elev, az, distance, is_start=(i + 1) in _START_IDS_20)
            for i, (elev, az) in enumerate(rows)
        ]
    if count == 8:
        rows = [(35.0, az) for az in _RING_AZIMUTHS_4] + [
            (-55.0, az) for az in _RING_AZIMUTHS_4
        ]
        return [
            Viewpoint(i + 1, elev, az, distance, is_start=True)
            for i, (elev, az) in enumerate(rows)
        ]
    if count == 4:
        rows = [(35.0, -35.0), (35.0, 145.0), (-55.0, -35.0), (-55.0, 145.0)]
        return [
            Viewpoint(i + 1, elev, az, distance, is_start=True)
            for i, (elev, az) in enumerate(rows)
        ]

    golden = math.pi * (3.0 - math.sqrt(5.0))
    start_slots = {
        int(round(j * count / min(8, count))) for j in range(min(8, count))
    }
    views = []
    for i in range(count):
        z = 1.0 - 2.0 * (i + 0.5) / count
        elev = math.degrees(math.asin(z))
        azim = math.degrees((i * golden) % (2.0 * math.pi))
        views.append(Viewpoint(i + 1, elev, azim, distance, is_start=i in start_slots))
    return views


def camera_basis(vp: Viewpoint) -> tuple[np.ndarray, np.ndarray]:
    """Camera position and row-stacked (right, up, forward) rotation."""
    position = vp.position
    forward = -position / np.linalg.norm(position)
    up_world = np.array([0.0, 0.0, 1.0])
    if abs(float(forward @ up_world)) > 0.9999:
        up_world = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up_world)
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    return position, np.stack([right, up, forward])


class RenderProduct:
    """RGB raster + per-pixel point-index map from one viewpoint.

    Immutable after construction; lazily builds an index of pixels grouped
    by winning point so repeated forward projections stay cheap.
    """

    __slots__ = ("viewpoint_id", "image", "index_map", "_visible", "_csr",
                 "__weakref__")

    def __init__(self, viewpoint_id: int, image: np.ndarray, index_map: np.ndarray):
        if image.shape[:2] != index_map.shape:
            raise ValueError("image and index_map dimensions differ")
        self.viewpoint_id = viewpoint_id
        self.image = image
        self.index_map = index_map
        image.flags.writeable = False
        index_map.flags.writeable = False
        self._visible: np.ndarray | None = None
        self._csr: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def height(self) -> int:
        return self.index_map.shape[0]

    @property
    def width(self) -> int:
        return self.index_map.shape[1]

    def _point_pixel_index(self):
        if self._csr is None:
            flat = self.index_map.ravel()
            cells = np.nonzero(flat != EMPTY_INDEX)[0]
            pts = flat[cells].astype(np.int64)
            order = np.argsort(pts, kind="stable")
            pts_sorted = pts[order]
            cells_sorted = cells[order]
            uniq, starts = np.unique(pts_sorted, return_index=True)
            ends = np.append(starts[1:], pts_sorted.size)
            self._csr = (uniq, starts.astype(np.int64), ends.astype(np.int64), cells_sorted)
            self._visible = uniq
        return self._csr

    def visible_indices(self) -> np.ndarray:
        if self._visible is None:
            self._point_pixel_index()
        return self._visible


def _splat_offsets(radius: int) -> np.ndarray:
    """Pixel offsets covered by a point splat. Radius 1 yields the full 3x3 block."""
    r = int(radius)
    if r <= 0:
        return np.zeros((1, 2), dtype=np.int64)
    dr, dc = np.mgrid[-r: r + 1, -r: r + 1]
    keep = dr * dr + dc * dc <= r * (r + 1)
    return np.stack([dr[keep], dc[keep]], axis=1).astype(np.int64)


def render(
    cloud: ColoredPointCloud,
    vp: Viewpoint,
    resolution: int = 800,
    splat_radius: int = 1,
) -> RenderProduct:
    """Rasterize the cloud from a viewpoint with a per-pixel nearest-point test.

    Perspective camera at the viewpoint position looking at the origin,
    world +z up; the field of view is 2*atan(1/distance) so a unit ball
    spans the frame. Each point covers a small splat of pixels; the nearest
    point wins every contested pixel, ties broken by lower point index.
    """
    if resolution < 64:
        raise ValueError("resolution must be >= 64")
    h = w = int(resolution)
    position, basis = camera_basis(vp)
    cam = (cloud.positions - position) @ basis.T
    depth = cam[:, 2]
    tan_half = 1.0 / vp.distance

    in_front = depth > 1e-12
    safe_depth = np.where(in_front, depth, 1.0)
    ndc_x = cam[:, 0] / (safe_depth * tan_half)
    ndc_y = cam[:, 1] / (safe_depth * tan_half)
    col0 = np.floor((ndc_x + 1.0) * 0.5 * w).astype(np.int64)
    row0 = np.floor((1.0 - ndc_y) * 0.5 * h).astype(np.int64)

    offsets = _splat_offsets(splat_radius)
    point_ids = np.arange(len(cloud), dtype=np.int64)
    rows_parts, cols_parts, depth_parts, idx_parts = [], [], [], []
    for dr, dc in offsets:
        r = row0 + dr
        c = col0 + dc
        ok = in_front & (r >= 0) & (r < h) & (c >= 0) & (c < w)
        rows_parts.append(r[ok])
        cols_parts.append(c[ok])
        depth_parts.append(depth[ok])
        idx_parts.append(point_ids[ok])

    index_map = np.full((h, w), EMPTY_INDEX, dtype=np.int32)
    image = np.empty((h, w, 3), dtype=np.uint8)
    image[:] = BACKGROUND_COLOR

    if rows_parts:
        rows_all = np.concatenate(rows_parts)
        if rows_all.size:
            cols_all = np.concatenate(cols_parts)
            depth_all = np.concatenate(depth_parts)
            idx_all = np.concatenate(idx_parts)
            cell = rows_all * w + cols_all
            order = np.lexsort((idx_all, depth_all, cell))
            cell_sorted = cell[order]
            first = np.unique(cell_sorted, return_index=True)[1]
            win_cells = cell_sorted[first]
            win_idx = idx_all[order][first]
            index_map.ravel()[win_cells] = win_idx.astype(np.int32)
            image.reshape(-1, 3)[win_cells] = cloud.colors[win_idx]

    return RenderProduct(vp.id, image, index_map)


def visible_subset(rp: RenderProduct) -> PointIndexSet:
    """All distinct point indices appearing in the index map."""
    return PointIndexSet._wrap(rp.visible_indices().copy())


def bip_forward(x3d: PointIndexSet, rp: RenderProduct) -> np.ndarray:
    """Pixels won by the visible members of a 3D subset, as (row, col) pairs.

    Occluded members contribute nothing. Rows are sorted by flat pixel
    offset, so identical inputs always yield identical arrays.
    """
    uniq, starts, ends, cells_sorted = rp._point_pixel_index()
    pos = np.searchsorted(uniq, x3d.indices)
    pos_c = np.minimum(pos, max(uniq.size - 1, 0))
    hit = (pos < uniq.size) & (uniq.size > 0)
    if uniq.size:
        hit &= uniq[pos_c] == x3d.indices
    if not np.any(hit):
        return np.empty((0, 2), dtype=np.int64)
    s = starts[pos_c[hit]]
    lengths = ends[pos_c[hit]] - s
    total = int(lengths.sum())
    # Ragged gather: expand each [start, start+len) range into flat indices.
    base = np.repeat(s, lengths)
    within = np.arange(total, dtype=np.int64) - np.repeat(
        np.concatenate(([0], np.cumsum(lengths)[:-1])), lengths
    )
    flat = np.sort(cells_sorted[base + within])
    rows, cols = np.divmod(flat, rp.width)
    return np.stack([rows, cols], axis=1)


def bip_backward(pixels: np.ndarray, rp: RenderProduct) -> PointIndexSet:
    """Distinct point indices stored at the given (row, col) pixels.

    Empty cells are skipped; any coordinate outside the raster is an error.
    """
    px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if px.size == 0:
        return PointIndexSet()
    if (
        px[:, 0].min() < 0
        or px[:, 1].min() < 0
        or px[:, 0].max() >= rp.height
        or px[:, 1].max() >= rp.width
    ):
        raise ValueError("pixel outside raster")
    vals = rp.index_map[px[:, 0], px[:, 1]]
    vals = vals[vals != EMPTY_INDEX]
    return PointIndexSet._wrap(np.unique(vals).astype(np.int64))


@dataclass(frozen=True)
class ViewGraph:
    """Undirected, unweighted graph over viewpoint ids."""

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]

    def neighbors(self, node: int) -> list[int]:
        out = [b if a == node else a for a, b in self.edges if node in (a, b)]
        return sorted(out)

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        seen = {self.nodes[0]}
        stack = [self.nodes[0]]
        adj: dict[int, list[int]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.nodes)


def _circular_azimuth_gap(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def build_view_graph(viewpoints: list[Viewpoint]) -> ViewGraph:
    """Connect viewpoints by spatial adjacency.

    Ring layouts (at most 3 distinct elevations) link each viewpoint to its
    azimuth neighbors within the ring (wrapping) and to the nearest-azimuth
    viewpoint(s) in the adjacent elevation ring. Other layouts link each
    viewpoint to its 3 nearest neighbors, then bridge any remaining
    components through their shortest separating edge.
    """
    if len(viewpoints) < 2:
        raise ValueError("a view graph needs at least 2 viewpoints")
    edges: set[tuple[int, int]] = set()

    def add(a: int, b: int) -> None:
        if a != b:
            edges.add((min(a, b), max(a, b)))

    elevations = sorted({round(vp.elevation, 6) for vp in viewpoints}, reverse=True)
    if len(elevations) <= 3:
        rings = [
            sorted(
                (vp for vp in viewpoints if round(vp.elevation, 6) == e),
                key=lambda vp: vp.azimuth % 360.0,
            )
            for e in elevations
        ]
        for ring in rings:
            if len(ring) == 2:
                add(ring[0].id, ring[1].id)
            elif len(ring) > 2:
                for i, vp in enumerate(ring):
                    add(vp.id, ring[(i + 1) % len(ring)].id)
        for upper, lower in zip(rings, rings[1:]):
            for vp in upper:
                gaps = [_circular_azimuth_gap(vp.azimuth, o.azimuth) for o in lower]
                best = min(gaps)
                for o, g in zip(lower, gaps):
                    if g == best:
                        add(vp.id, o.id)
            for vp in lower:
                gaps = [_circular_azimuth_gap(vp.azimuth, o.azimuth) for o in upper]
                best = min(gaps)
                for o, g in zip(upper, gaps):
                    if g == best:
                        add(vp.id, o.id)
    else:
        pos = np.stack([vp.position for vp in viewpoints])
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        k = min(3, len(viewpoints) - 1)
        for i, vp in enumerate(viewpoints):
            for j in np.argsort(d[i], kind="stable")[:k]:
                add(vp.id, viewpoints[int(j)].id)
        # Bridge components until connected.
        ids = [vp.id for vp in viewpoints]
        id_to_row = {vp.id: i for i, vp in enumerate(viewpoints)}
        while True:
            graph = ViewGraph(tuple(ids), frozenset(edges))
            comp = _components(graph)
            if len(comp) == 1:
                break
            first, rest = comp[0], [n for c in comp[1:] for n in c]
            best_pair, best_d = None, np.inf
            for a in sorted(first):
                for b in sorted(rest):
                    dd = d[id_to_row[a], id_to_row[b]]
                    if dd < best_d:
                        best_d, best_pair = dd, (a, b)
            add(*best_pair)

    return ViewGraph(tuple(vp.id for vp in viewpoints), frozenset(edges))


def _components(graph: ViewGraph) -> list[set[int]]:
    remaining = set(graph.nodes)
    adj: dict[int, list[int]] = {n: [] for n in graph.nodes}
    for a, b in graph.edges:
        adj[a].append(b)
        adj[b].append(a)
    comps = []
    while remaining:
        seed = min(remaining)
        comp = {seed}
        stack = [seed]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in comp:
                    comp.add(nb)
                    stack.append(nb)
        comps.append(comp)
        remaining -= comp
    return comps


def extension_sequence(graph: ViewGraph, start: int) -> list[int]:
    """Breadth-first order of all viewpoints from a start viewpoint.

    Neighbor expansion proceeds in ascending id order, so the sequence is
    deterministic. Every element after the first is adjacent to an earlier
    element, which guarantees a shared co-viewed region at each step.
    """
    if start not in graph.nodes:
        raise ValueError(f"start viewpoint {start} not in graph")
    adj: dict[int, list[int]] = {n: [] for n in graph.nodes}
    for a, b in graph.edges:
        adj[a].append(b)
        adj[b].append(a)
    order = [start]
    seen = {start}
    queue = [start]
    while queue:
        node = queue.pop(0)
        for nb in sorted(adj[node]):
            if nb not in seen:
                seen.add(nb)
                order.append(nb)
                queue.append(nb)
    if len(order) != len(graph.nodes):
        raise ValueError("unreachable viewpoints")
    return order


def index_map_to_bytes(index_map: np.ndarray) -> bytes:
    """Serialize an index map: two little-endian int32 dims, then row-major
    int32 cells with -1 marking empty pixels."""
    h, w = index_map.shape
    header = struct.pack("<ii", h, w)
    return header + np.ascontiguousarray(index_map, dtype="<i4").tobytes()


def index_map_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise ValueError("index map blob too short")
    h, w = struct.unpack("<ii", data[:8])
    if h < 0 or w < 0 or len(data) != 8 + 4 * h * w:
        raise ValueError("index map blob has inconsistent dimensions")
    return np.frombuffer(data, dtype="<i4", offset=8).reshape(h, w).astype(np.int32)
