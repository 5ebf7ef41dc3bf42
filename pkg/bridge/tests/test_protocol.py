"""Schema validation of golden fixtures and the RLE codec."""

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import load_golden
from fm_bridge.protocol import (
    DetectRequest,
    DetectResponse,
    MaskPayload,
    SegmentRequest,
    SegmentResponse,
    rle_decode,
    rle_encode,
)


class TestGoldenFixtures:
    def test_segment_request_validates(self):
        req = SegmentRequest.model_validate(load_golden("segment_request.json"))
        assert req.mode == "prompt"
        assert len(req.points) == 3

    def test_segment_response_validates(self):
        resp = SegmentResponse.model_validate(load_golden("segment_response.json"))
        assert len(resp.masks) == 3
        assert all(m.width == 64 and m.height == 64 for m in resp.masks)
        scores = [m.score for m in resp.masks]
        assert scores == sorted(scores, reverse=True)

    def test_detect_request_validates(self):
        req = DetectRequest.model_validate(load_golden("detect_request.json"))
        assert req.classes == ["lid", "handle"]

    def test_detect_response_validates(self):
        resp = DetectResponse.model_validate(load_golden("detect_response.json"))
        assert len(resp.boxes) == 2
        for box in resp.boxes:
            assert box.x0 <= box.x1 and box.y0 <= box.y1
            assert box.class_index < 2

    def test_golden_masks_decode_within_raster(self):
        resp = SegmentResponse.model_validate(load_golden("segment_response.json"))
        for mask in resp.masks:
            raster = rle_decode(mask.rle, mask.width, mask.height)
            assert raster.shape == (64, 64)
            assert raster.sum() == sum(mask.rle[1::2])


class TestSchemas:
    def test_rejects_odd_rle(self):
        with pytest.raises(ValidationError):
            MaskPayload(rle=[0, 3, 7], width=8, height=8, score=0.5)

    def test_rejects_empty_class_list(self):
        with pytest.raises(ValidationError):
            DetectRequest(image_png_b64="aGk=", classes=[])

    def test_rejects_blank_class_name(self):
        with pytest.raises(ValidationError):
            DetectRequest(image_png_b64="aGk=", classes=["lid", "  "])

    def test_rejects_bad_mode(self):
        with pytest.raises(ValidationError):
            SegmentRequest(image_png_b64="aGk=", mode="magic")


class TestRleCodec:
    @pytest.mark.parametrize("seed", range(10))
    def test_roundtrip_random_rasters(self, seed):
        rng = np.random.default_rng(seed)
        raster = rng.random((13, 17)) < 0.3
        rle = rle_encode(raster)
        assert np.array_equal(rle_decode(rle, 17, 13), raster)

    def test_empty_raster(self):
        assert rle_encode(np.zeros((4, 4), dtype=bool)) == []
        assert rle_decode([], 4, 4).sum() == 0

    def test_full_raster_is_single_run(self):
        assert rle_encode(np.ones((4, 4), dtype=bool)) == [0, 16]

    def test_decode_rejects_overflow(self):
        with pytest.raises(ValueError):
            rle_decode([10, 200], 8, 8)
