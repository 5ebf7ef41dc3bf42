"""Procedural multi-part objects with per-point ground truth.

Each template assembles geometric primitives (cylinders, discs, boxes, arcs,
spheres, cones) into a small household object whose every surface faces
outward, so nearly all points are observable from the canonical viewpoint
shell. Generation is a pure function of the spec: identical specs yield
bit-identical clouds and annotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .backends import GroundTruth
from .geometry import ColoredPointCloud

PALETTE = (
    (205, 92, 92),
    (70, 130, 180),
    (60, 179, 113),
    (218, 165, 32),
    (147, 112, 219),
    (244, 164, 96),
    (95, 158, 160),
    (120, 120, 200),
)

TEMPLATES = ("mug", "table", "kettle", "stapler", "lamp")


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic object."""

    template: str
    total_points: int = 20000
    point_counts: dict[str, int] | None = None  # per instance name
    color_scheme: str = "default"
    seed: int = 0
    rotation: tuple[float, float, float] | None = None  # Euler xyz, degrees

    def __post_init__(self) -> None:
        if self.template not in TEMPLATES:
            raise ValueError(
                f"unknown template {self.template!r}; choose from {TEMPLATES}"
            )
        if self.color_scheme != "default":
            raise ValueError(f"unknown color scheme {self.color_scheme!r}")
        if self.total_points < 1000:
            raise ValueError("scenes need at least 1000 points")


# ---------------------------------------------------------------------------
# Surface samplers. Each returns (n, 3) positions.

def _cylinder_side(rng, n, radius, z0, z1, center=(0.0, 0.0)):
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    z = rng.uniform(z0, z1, n)
    return np.stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta), z],
        axis=1,
    )


def _disc(rng, n, radius, z, center=(0.0, 0.0)):
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.stack(
        [center[0] + r * np.cos(theta), center[1] + r * np.sin(theta),
         np.full(n, float(z))],
        axis=1,
    )


def _annulus(rng, n, r_inner, r_outer, z, center=(0.0, 0.0)):
    r = np.sqrt(rng.uniform(r_inner ** 2, r_outer ** 2, n))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.stack(
        [center[0] + r * np.cos(theta), center[1] + r * np.sin(theta),
         np.full(n, float(z))],
        axis=1,
    )


def _sphere(rng, n, radius, center):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return center + radius * v


def _box_faces(rng, n, sizes, center, faces=("x-", "x+", "y-", "y+", "z-", "z+")):
    """Sample the outer faces of an axis-aligned box, weighted by face area."""
    sx, sy, sz = sizes
    areas = {
        "x-": sy * sz, "x+": sy * sz,
        "y-": sx * sz, "y+": sx * sz,
        "z-": sx * sy, "z+": sx * sy,
    }
    weights = np.array([areas[f] for f in faces], dtype=np.float64)
    weights /= weights.sum()
    counts = np.floor(weights * n).astype(int)
    counts[: n - counts.sum()] += 1
    pts = []
    for face, cnt in zip(faces, counts):
        if cnt == 0:
            continue
        u = rng.uniform(-0.5, 0.5, cnt)
        v = rng.uniform(-0.5, 0.5, cnt)
        if face[0] == "x":
            local = np.stack([np.full(cnt, 0.5 if face[1] == "+" else -0.5),
                              u, v], axis=1)
        elif face[0] == "y":
            local = np.stack([u, np.full(cnt, 0.5 if face[1] == "+" else -0.5),
                              v], axis=1)
        else:
            local = np.stack([u, v,
                              np.full(cnt, 0.5 if face[1] == "+" else -0.5)], axis=1)
        pts.append(local * np.array(sizes))
    return np.concatenate(pts) + np.asarray(center)


def _arc_ribbon(rng, n, radius, width, center, angle0, angle1):
    """Flat ribbon along a circular arc in the xz-plane, extended in y."""
    u = np.radians(rng.uniform(angle0, angle1, n))
    y = rng.uniform(-width / 2.0, width / 2.0, n)
    return np.stack(
        [center[0] + radius * np.cos(u), center[1] + y,
         center[2] + radius * np.sin(u)],
        axis=1,
    )


def _cone_side(rng, n, r0, z0, r1, z1):
    """Lateral surface of a truncated cone, uniform by area."""
    # area density along the slant grows linearly with local radius
    u = rng.uniform(0.0, 1.0, n)
    t = (np.sqrt(r0 ** 2 + u * (r1 ** 2 - r0 ** 2)) - r0) / (r1 - r0) \
        if r1 != r0 else u
    r = r0 + t * (r1 - r0)
    z = z0 + t * (z1 - z0)
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _tilted_cylinder(rng, n, radius, length, origin, direction):
    axis = np.asarray(direction, dtype=np.float64)
    axis /= np.linalg.norm(axis)
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    t = rng.uniform(0.0, length, n)
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return (
        np.asarray(origin)
        + t[:, None] * axis
        + radius * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)
    )


# ---------------------------------------------------------------------------
# Templates: ordered (instance name, class name, weight, sampler) rows.

_Sampler = Callable[[np.random.Generator, int], np.ndarray]


def _mug() -> list[tuple[str, str, float, _Sampler]]:
    body_r, body_h = 1.0, 1.6

    def body(rng, n):
        side = int(round(n * 0.78))
        return np.concatenate([
            _cylinder_side(rng, side, body_r, 0.0, body_h),
            _disc(rng, n - side, body_r, 0.0),
        ])

    def handle(rng, n):
        return _arc_ribbon(rng, n, 0.52, 0.22, (1.12, 0.0, 0.8), -75.0, 75.0)

    def lid(rng, n):
        return _disc(rng, n, body_r * 1.04, body_h + 0.02)

    return [
        ("body", "body", 0.62, body),
        ("handle", "handle", 0.16, handle),
        ("lid", "lid", 0.22, lid),
    ]


def _table() -> list[tuple[str, str, float, _Sampler]]:
    top_sizes = (3.0, 2.0, 0.18)
    top_z = 1.5
    leg_sizes = (0.18, 0.18, 1.41)
    leg_xy = [(1.2, 0.75), (-1.2, 0.75), (1.2, -0.75), (-1.2, -0.75)]

    def top(rng, n):
        return _box_faces(rng, n, top_sizes, (0.0, 0.0, top_z))

    rows: list[tuple[str, str, float, _Sampler]] = [
        ("tabletop", "tabletop", 0.52, top)
    ]
    for k, (lx, ly) in enumerate(leg_xy):
        def leg(rng, n, lx=lx, ly=ly):
            return _box_faces(
                rng, n, leg_sizes, (lx, ly, leg_sizes[2] / 2.0),
                faces=("x-", "x+", "y-", "y+", "z-"),
            )
        rows.append((f"leg_{k}", "leg", 0.12, leg))
    return rows


def _kettle() -> list[tuple[str, str, float, _Sampler]]:
    body_r = 1.0
    body_c = np.array([0.0, 0.0, 1.0])
    lid_plane = 1.94

    def body(rng, n):
        pts = np.empty((0, 3))
        while pts.shape[0] < n:
            batch = _sphere(rng, n, body_r, body_c)
            batch = batch[batch[:, 2] <= lid_plane]
            pts = np.concatenate([pts, batch])
        return pts[:n]

    def lid(rng, n):
        cap_r = math.sqrt(max(body_r ** 2 - (lid_plane - body_c[2]) ** 2, 0.0)) + 0.06
        knob = int(round(n * 0.25))
        return np.concatenate([
            _disc(rng, n - knob, cap_r, lid_plane),
            _cylinder_side(rng, knob, 0.09, lid_plane, lid_plane + 0.16),
        ])

    def spout(rng, n):
        return _tilted_cylinder(
            rng, n, 0.13, 0.85, (0.80, 0.0, 1.35), (0.83, 0.0, 0.56)
        )

    def handle(rng, n):
        return _arc_ribbon(rng, n, 0.62, 0.20, (0.0, 0.0, 2.02), 15.0, 165.0)

    return [
        ("body", "body", 0.62, body),
        ("lid", "lid", 0.12, lid),
        ("spout", "spout", 0.12, spout),
        ("handle", "handle", 0.14, handle),
    ]


def _stapler() -> list[tuple[str, str, float, _Sampler]]:
    base_sizes = (2.4, 0.7, 0.22)
    lid_sizes = (2.4, 0.6, 0.2)
    hinge_x = -1.2
    tilt = math.radians(22.0)

    def base(rng, n):
        return _box_faces(rng, n, base_sizes, (0.0, 0.0, base_sizes[2] / 2.0))

    def lid(rng, n):
        local = _box_faces(rng, n, lid_sizes, (lid_sizes[0] / 2.0, 0.0,
                                               lid_sizes[2] / 2.0))
        c, s = math.cos(tilt), math.sin(tilt)
        rot = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
        return local @ rot.T + np.array([hinge_x, 0.0, base_sizes[2] + 0.03])

    def button(rng, n):
        lift = base_sizes[2] + 0.03 + 2.28 * math.sin(tilt)
        return _box_faces(
            rng, n, (0.42, 0.5, 0.16),
            (hinge_x + 2.28 * math.cos(tilt), 0.0, lift + lid_sizes[2] + 0.08),
        )

    return [
        ("base", "base", 0.44, base),
        ("lid", "lid", 0.42, lid),
        ("button", "button", 0.14, button),
    ]


def _lamp() -> list[tuple[str, str, float, _Sampler]]:
    shade_z0, shade_z1 = 1.15, 1.7

    def base(rng, n):
        side = int(round(n * 0.3))
        bottom = int(round(n * 0.3))
        return np.concatenate([
            _cylinder_side(rng, side, 0.8, 0.0, 0.12),
            _disc(rng, bottom, 0.8, 0.0),
            _annulus(rng, n - side - bottom, 0.08, 0.8, 0.12),
        ])

    def pole(rng, n):
        return _cylinder_side(rng, n, 0.07, 0.12, shade_z0)

    def shade(rng, n):
        return _cone_side(rng, n, 0.75, shade_z0, 0.28, shade_z1)

    def bulb(rng, n):
        return _sphere(rng, n, 0.17, np.array([0.0, 0.0, 1.04]))

    return [
        ("base", "base", 0.34, base),
        ("pole", "pole", 0.18, pole),
        ("shade", "shade", 0.36, shade),
        ("bulb", "bulb", 0.12, bulb),
    ]


_TEMPLATE_BUILDERS = {
    "mug": _mug,
    "table": _table,
    "kettle": _kettle,
    "stapler": _stapler,
    "lamp": _lamp,
}


def template_classes(template: str) -> list[str]:
    """Ordered part-class names of a template, for building text prompts."""
    rows = _TEMPLATE_BUILDERS[template]()
    classes: list[str] = []
    for _, class_name, _, _ in rows:
        if class_name not in classes:
            classes.append(class_name)
    return classes


def _rotation_matrix(angles_deg: Sequence[float]) -> np.ndarray:
    ax, ay, az = (math.radians(a) for a in angles_deg)
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def generate_scene(spec: SceneSpec) -> tuple[ColoredPointCloud, GroundTruth]:
    """Build the template's point cloud and matching ground truth."""
    rows = _TEMPLATE_BUILDERS[spec.template]()
    classes = template_classes(spec.template)

    weights = np.array([w for _, _, w, _ in rows], dtype=np.float64)
    weights /= weights.sum()
    counts = np.floor(weights * spec.total_points).astype(int)
    counts[: spec.total_points - counts.sum()] += 1
    if spec.point_counts is not None:
        for k, (name, _, _, _) in enumerate(rows):
            if name in spec.point_counts:
                counts[k] = spec.point_counts[name]
    if min(counts) < 50:
        raise ValueError("every instance needs at least 50 points")

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    positions, colors, semantic, instance = [], [], [], []
    for iid, ((name, class_name, _, sampler), count) in enumerate(zip(rows, counts)):
        pts = sampler(rng, int(count))
        if pts.shape[0] != count:
            raise AssertionError(f"sampler for {name} returned {pts.shape[0]} points")
        positions.append(pts)
        colors.append(np.tile(PALETTE[iid % len(PALETTE)], (count, 1)))
        semantic.append(np.full(count, classes.index(class_name), dtype=np.int64))
        instance.append(np.full(count, iid, dtype=np.int64))

    pos = np.concatenate(positions)
    if spec.rotation is not None:
        center = pos.mean(axis=0)
        pos = (pos - center) @ _rotation_matrix(spec.rotation).T + center
    cloud = ColoredPointCloud(pos, np.concatenate(colors).astype(np.uint8))
    gt = GroundTruth(classes, np.concatenate(semantic), np.concatenate(instance))
    return cloud, gt


def check_instance_visibility(
    cloud: ColoredPointCloud,
    gt: GroundTruth,
    resolution: int = 400,
    min_points: int = 50,
) -> dict[int, int]:
    """Count, per instance, the canonical views showing at least min_points.

    Used to validate that templates keep every instance observable from a
    healthy share of the viewpoint shell.
    """
    from .geometry import normalize_to_unit_sphere
    from .multiview import place_viewpoints, render, EMPTY_INDEX

    normalized, _ = normalize_to_unit_sphere(cloud)
    seen: dict[int, int] = {iid: 0 for iid in gt.instance_ids()}
    for vp in place_viewpoints(20):
        rp = render(normalized, vp, resolution=resolution)
        flat = rp.index_map.ravel()
        pts = flat[flat != EMPTY_INDEX].astype(np.int64)
        ids, counts = np.unique(gt.instance[pts], return_counts=True)
        for iid, cnt in zip(ids.tolist(), counts.tolist()):
            if iid >= 0 and cnt >= min_points:
                seen[iid] += 1
    return seen
