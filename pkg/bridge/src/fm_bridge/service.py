"""FastAPI application: decode, resize, run the model, map back, respond.

Whatever resolution the model actually sees, every mask and box in a
response lives in the coordinate frame of the submitted image. Model
forward passes are serialized behind a lock, one per device.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image

from .models import BridgeConfig, load_models
from .protocol import (
    BoxPayload,
    DetectRequest,
    DetectResponse,
    HealthResponse,
    MaskPayload,
    SegmentRequest,
    SegmentResponse,
    rle_encode,
)


def _decode_image(payload_b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload_b64, validate=True)
        image = Image.open(io.BytesIO(raw)).convert("RGB")
    except (binascii.Error, ValueError, OSError) as exc:
        raise HTTPException(status_code=422, detail=f"undecodable image: {exc}")
    return np.asarray(image)


def _downscale(image: np.ndarray, max_side: int):
    """Shrink so max(h, w) <= max_side; returns (image, sx, sy) scale-back factors."""
    h, w = image.shape[:2]
    longest = max(h, w)
    if longest <= max_side:
        return image, 1.0, 1.0
    scale = max_side / longest
    new_w = max(int(round(w * scale)), 1)
    new_h = max(int(round(h * scale)), 1)
    resized = Image.fromarray(image).resize((new_w, new_h), Image.NEAREST)
    return np.asarray(resized), w / new_w, h / new_h


def _upscale_mask(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    if mask.shape == (height, width):
        return mask
    big = Image.fromarray(mask.astype(np.uint8) * 255).resize(
        (width, height), Image.NEAREST
    )
    return np.asarray(big) > 0


def _upscale_box(box, sx: float, sy: float, width: int, height: int):
    class_index, x0, y0, x1, y1, score = box
    # scale inclusive bounds as a half-open region, then clamp
    gx0 = int(round(x0 * sx))
    gy0 = int(round(y0 * sy))
    gx1 = int(round((x1 + 1) * sx)) - 1
    gy1 = int(round((y1 + 1) * sy)) - 1
    gx0, gx1 = max(gx0, 0), min(gx1, width - 1)
    gy0, gy1 = max(gy0, 0), min(gy1, height - 1)
    return class_index, gx0, gy0, gx1, gy1, score


def create_app(config: BridgeConfig | None = None) -> FastAPI:
    config = config or BridgeConfig()
    segmenter, detector = load_models(config)
    inference_lock = threading.Lock()
    app = FastAPI(title="fm-bridge")

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            segmenter=segmenter is not None, detector=detector is not None
        )

    @app.post("/v1/segment", response_model=SegmentResponse)
    def segment(request: SegmentRequest) -> SegmentResponse:
        if segmenter is None:
            raise HTTPException(status_code=503, detail="segmenter not loaded")
        image = _decode_image(request.image_png_b64)
        height, width = image.shape[:2]
        small, sx, sy = _downscale(image, config.max_image_side)
        points = [
            (int(round(x / sx)), int(round(y / sy))) for x, y in request.points
        ]
        with inference_lock:
            if request.mode == "prompt":
                candidates = segmenter.segment_prompt(small, points)
            else:
                candidates = segmenter.segment_auto(small, points)
        masks = []
        for raster, score in candidates:
            full = _upscale_mask(np.asarray(raster, dtype=bool), width, height)
            masks.append(
                MaskPayload(
                    rle=rle_encode(full), width=width, height=height,
                    score=float(score),
                )
            )
        return SegmentResponse(masks=masks)

    @app.post("/v1/detect", response_model=DetectResponse)
    def detect(request: DetectRequest) -> DetectResponse:
        if detector is None:
            raise HTTPException(status_code=503, detail="detector not loaded")
        image = _decode_image(request.image_png_b64)
        height, width = image.shape[:2]
        small, sx, sy = _downscale(image, config.max_image_side)
        with inference_lock:
            raw_boxes = detector.detect(small, list(request.classes))
        boxes = []
        for box in raw_boxes:
            class_index, x0, y0, x1, y1, score = _upscale_box(
                box, sx, sy, width, height
            )
            boxes.append(
                BoxPayload(
                    class_index=class_index, x0=x0, y0=y0, x1=x1, y1=y1,
                    score=float(score),
                )
            )
        return DetectResponse(boxes=boxes)

    return app
