"""Wire protocol schemas and the run-length mask codec.

Masks travel as flat lists of (start offset, run length) pairs over
row-major foreground cells; width and height always describe the image the
client submitted, never any internal working resolution.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator


class SegmentRequest(BaseModel):
    image_png_b64: str
    points: list[tuple[int, int]] = Field(default_factory=list)  # [x, y]
    mode: Literal["auto", "prompt"] = "auto"


class MaskPayload(BaseModel):
    rle: list[int]
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    score: float = Field(ge=0.0, le=1.0)

    @field_validator("rle")
    @classmethod
    def _pairs(cls, v: list[int]) -> list[int]:
        if len(v) % 2:
            raise ValueError("rle must hold (start, length) pairs")
        return v


class SegmentResponse(BaseModel):
    masks: list[MaskPayload]


class DetectRequest(BaseModel):
    image_png_b64: str
    classes: list[str] = Field(min_length=1)

    @field_validator("classes")
    @classmethod
    def _nonempty_names(cls, v: list[str]) -> list[str]:
        if any(not name.strip() for name in v):
            raise ValueError("class names must be non-empty")
        return v


class BoxPayload(BaseModel):
    class_index: int = Field(ge=0)
    x0: int
    y0: int
    x1: int
    y1: int
    score: float = Field(ge=0.0, le=1.0)


class DetectResponse(BaseModel):
    boxes: list[BoxPayload]


class HealthResponse(BaseModel):
    segmenter: bool
    detector: bool


def rle_encode(raster: np.ndarray) -> list[int]:
    """Flatten a boolean raster into (start, length) pairs, row-major."""
    offs = np.nonzero(raster.ravel())[0]
    if offs.size == 0:
        return []
    breaks = np.nonzero(np.diff(offs) != 1)[0]
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [offs.size - 1]))
    out = np.empty((starts.size, 2), dtype=np.int64)
    out[:, 0] = offs[starts]
    out[:, 1] = offs[ends] - offs[starts] + 1
    return out.reshape(-1).tolist()


def rle_decode(rle: list[int], width: int, height: int) -> np.ndarray:
    """Expand (start, length) pairs back into a boolean raster."""
    raster = np.zeros(width * height, dtype=bool)
    pairs = np.asarray(rle, dtype=np.int64).reshape(-1, 2)
    for start, length in pairs:
        if start < 0 or length < 1 or start + length > width * height:
            raise ValueError("rle run outside raster")
        raster[start: start + length] = True
    return raster.reshape(height, width)
