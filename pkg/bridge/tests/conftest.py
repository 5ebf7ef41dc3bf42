"""Bridge test fixtures: a client over the stub models and image helpers."""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from fm_bridge.models import BridgeConfig
from fm_bridge.service import create_app

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture()
def client():
    return TestClient(create_app(BridgeConfig()))


def image_to_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def two_rectangles_image(size: int = 64) -> np.ndarray:
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    img[10:30, 8:28] = (200, 40, 40)
    img[40:60, 30:62] = (40, 40, 200)
    return img


def load_golden(name: str) -> dict:
    return json.loads((GOLDEN / name).read_text())
