"""Shared fixtures: small deterministic scenes and cached renders."""

from __future__ import annotations

import numpy as np
import pytest

from partlift.backends import GroundTruth
from partlift.geometry import ColoredPointCloud, normalize_to_unit_sphere
from partlift.multiview import place_viewpoints, render
from partlift.scenes import SceneSpec, generate_scene


@pytest.fixture(scope="session")
def mug_scene():
    cloud, gt = generate_scene(SceneSpec("mug", total_points=3000, seed=3))
    normalized, _ = normalize_to_unit_sphere(cloud)
    return normalized, gt


@pytest.fixture(scope="session")
def mug_renders(mug_scene):
    cloud, _ = mug_scene
    viewpoints = place_viewpoints(8)
    return viewpoints, {
        vp.id: render(cloud, vp, resolution=160) for vp in viewpoints
    }


@pytest.fixture(scope="session")
def three_spheres():
    """Three separated spheres; every instance is visible from every view."""
    rng = np.random.default_rng(11)
    centers = np.array([[-1.6, 0.0, 0.0], [1.6, 0.0, 0.0], [0.0, 1.8, 0.0]])
    positions, colors, semantic, instance = [], [], [], []
    palette = [(220, 60, 60), (60, 130, 220), (70, 180, 90)]
    for k, center in enumerate(centers):
        v = rng.normal(size=(700, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        positions.append(center + 0.55 * v)
        colors.append(np.tile(palette[k], (700, 1)))
        semantic.append(np.full(700, k))
        instance.append(np.full(700, k))
    cloud = ColoredPointCloud(
        np.concatenate(positions), np.concatenate(colors).astype(np.uint8)
    )
    gt = GroundTruth(
        ("orb_a", "orb_b", "orb_c"),
        np.concatenate(semantic),
        np.concatenate(instance),
    )
    normalized, _ = normalize_to_unit_sphere(cloud)
    return normalized, gt
