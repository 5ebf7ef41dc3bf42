"""Round-trip tests for the file formats."""

import numpy as np
import pytest

from partlift import io as plio
from partlift.backends import GroundTruth
from partlift.geometry import ColoredPointCloud, PointIndexSet
from partlift.merging import Part3D


@pytest.fixture()
def cloud():
    rng = np.random.default_rng(3)
    return ColoredPointCloud(
        rng.normal(size=(40, 3)), rng.integers(0, 256, (40, 3)).astype(np.uint8)
    )


class TestPly:
    @pytest.mark.parametrize("binary", [True, False])
    def test_roundtrip(self, tmp_path, cloud, binary):
        path = tmp_path / "cloud.ply"
        plio.write_ply(path, cloud, binary=binary)
        back = plio.read_ply(path)
        np.testing.assert_allclose(back.positions, cloud.positions, atol=1e-4)
        np.testing.assert_array_equal(back.colors, cloud.colors)

    def test_rejects_non_ply(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("not a ply")
        with pytest.raises(plio.FileFormatError):
            plio.read_ply(path)

    def test_rejects_missing_color_property(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nproperty float z\n"
            "end_header\n0 0 0\n"
        )
        with pytest.raises(plio.FileFormatError):
            plio.read_ply(path)


class TestGroundTruthJson:
    def test_roundtrip(self, tmp_path):
        gt = GroundTruth(("a", "b"), np.array([0, 1, -1]), np.array([0, 1, -1]))
        path = tmp_path / "gt.json"
        plio.write_ground_truth(path, gt)
        back = plio.read_ground_truth(path)
        assert back.class_names == gt.class_names
        np.testing.assert_array_equal(back.semantic, gt.semantic)
        np.testing.assert_array_equal(back.instance, gt.instance)

    def test_rejects_malformed(self, tmp_path):
        path = tmp_path / "gt.json"
        path.write_text('{"classes": ["a"], "semantic": [0]}')
        with pytest.raises(plio.FileFormatError):
            plio.read_ground_truth(path)


class TestPartsJson:
    def test_unlabeled_roundtrip(self, tmp_path):
        parts = [
            Part3D(PointIndexSet([0, 4, 7]), 0),
            Part3D(PointIndexSet([1, 2]), 1),
        ]
        path = tmp_path / "parts.json"
        plio.write_parts(path, parts, num_points=10)
        back, n = plio.read_parts(path)
        assert n == 10
        assert [p.points.indices.tolist() for p in back] == [[0, 4, 7], [1, 2]]
        assert all(p.label is None for p in back)

    def test_labeled_roundtrip(self, tmp_path):
        parts = [
            Part3D(PointIndexSet([0, 4]), 0, label=1, confidence=0.5),
            Part3D(PointIndexSet([1]), 1, label=None),
        ]
        path = tmp_path / "parts.json"
        plio.write_parts(path, parts, num_points=9, class_names=("lid", "handle"))
        back, n = plio.read_parts(path, ("lid", "handle"))
        assert back[0].label == 1 and back[0].confidence == 0.5
        assert back[1].label is None
        parts2, n2, names = plio.read_labeled_parts_with_names(path)
        assert names == ["handle"]
        assert parts2[0].label == 0  # index into the rebuilt table

    def test_rejects_out_of_range_indices(self, tmp_path):
        path = tmp_path / "parts.json"
        path.write_text('{"num_points": 3, "parts": [{"part_id": 0, "indices": [5]}]}')
        with pytest.raises(plio.FileFormatError):
            plio.read_parts(path)


def test_render_debug_export(tmp_path, mug_scene):
    from partlift.multiview import (
        index_map_from_bytes,
        place_viewpoints,
        render,
    )

    cloud, _ = mug_scene
    rp = render(cloud, place_viewpoints(20)[0], resolution=96)
    png = tmp_path / "v.png"
    idx = tmp_path / "v.idx"
    plio.write_render_debug(rp, png, idx)
    assert png.stat().st_size > 0
    back = index_map_from_bytes(idx.read_bytes())
    np.testing.assert_array_equal(back, rp.index_map)

    from PIL import Image

    im = np.asarray(Image.open(png))
    np.testing.assert_array_equal(im, rp.image)
