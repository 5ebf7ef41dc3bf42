"""Model adapters behind the bridge.

An adapter works in the coordinate frame of the image it receives (the
service handles any resizing). Segmenter adapters return (bool raster,
score) candidates; detector adapters return (class_index, x0, y0, x1, y1,
score) tuples with inclusive pixel bounds.

Loadable model ids:
  "stub"                    deterministic color-threshold models (no GPU)
  "import:<module>:<name>"  any factory callable(checkpoint, device) that
                            returns an object with the adapter methods
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass

import numpy as np


class ModelLoadError(RuntimeError):
    pass


@dataclass(frozen=True)
class BridgeConfig:
    segmenter: str | None = "stub"
    detector: str | None = "stub"
    segmenter_checkpoint: str | None = None
    detector_checkpoint: str | None = None
    device: str = "cpu"
    max_image_side: int = 1024
    port: int = 8191


def _background_color(image: np.ndarray) -> tuple[int, int, int]:
    """The dominant corner color; the renderer paints background uniformly."""
    corners = np.stack(
        [image[0, 0], image[0, -1], image[-1, 0], image[-1, -1]]
    )
    colors, counts = np.unique(corners, axis=0, return_counts=True)
    return tuple(int(c) for c in colors[int(np.argmax(counts))])


def _color_regions(image: np.ndarray) -> list[tuple[tuple[int, int, int], np.ndarray]]:
    """Foreground masks per distinct color, largest first (ties by color)."""
    bg = _background_color(image)
    flat = image.reshape(-1, 3)
    foreground = np.any(flat != np.asarray(bg), axis=1)
    if not np.any(foreground):
        return []
    fg_colors = flat[foreground]
    colors, counts = np.unique(fg_colors, axis=0, return_counts=True)
    order = np.lexsort((colors[:, 2], colors[:, 1], colors[:, 0], -counts))
    out = []
    h, w = image.shape[:2]
    for k in order:
        color = tuple(int(c) for c in colors[k])
        mask = np.all(flat == colors[k], axis=1).reshape(h, w)
        out.append((color, mask))
    return out


class StubSegmenter:
    """Identity-threshold segmenter: segments are exact-color regions.

    Prompt mode reports three granularities around the majority prompt
    color: the exact color region, a tolerance-widened region, and the
    whole foreground.
    """

    color_tolerance = 40

    def segment_auto(self, image: np.ndarray, points) -> list[tuple[np.ndarray, float]]:
        return [(mask, 0.8) for _, mask in _color_regions(image)]

    def segment_prompt(self, image: np.ndarray, points) -> list[tuple[np.ndarray, float]]:
        if not points:
            return []
        h, w = image.shape[:2]
        bg = np.asarray(_background_color(image))
        votes: dict[tuple[int, int, int], int] = {}
        for x, y in points:
            if not (0 <= x < w and 0 <= y < h):
                continue
            color = image[y, x]
            if np.array_equal(color, bg):
                continue
            key = tuple(int(c) for c in color)
            votes[key] = votes.get(key, 0) + 1
        if not votes:
            return []
        winner = np.asarray(max(votes.items(), key=lambda kv: (kv[1], kv[0]))[0])
        exact = np.all(image == winner, axis=2)
        near = (
            np.abs(image.astype(np.int64) - winner).max(axis=2)
            <= self.color_tolerance
        ) & np.any(image != bg, axis=2)
        whole = np.any(image != bg, axis=2)
        return [(exact, 0.9), (near, 0.6), (whole, 0.3)]


class StubDetector:
    """One tight box per exact-color region; classes assigned round-robin."""

    def detect(self, image: np.ndarray, classes: list[str]):
        boxes = []
        for rank, (_, mask) in enumerate(_color_regions(image)):
            rows, cols = np.nonzero(mask)
            boxes.append(
                (
                    rank % len(classes),
                    int(cols.min()), int(rows.min()),
                    int(cols.max()), int(rows.max()),
                    0.5,
                )
            )
        return boxes


def _load(model_id: str | None, checkpoint: str | None, device: str, kind: str):
    if model_id in (None, "", "none"):
        return None
    if model_id == "stub":
        return StubSegmenter() if kind == "segmenter" else StubDetector()
    if model_id.startswith("import:"):
        try:
            _, module_name, factory_name = model_id.split(":", 2)
        except ValueError as exc:
            raise ModelLoadError(
                f"bad model id {model_id!r}; expected import:<module>:<factory>"
            ) from exc
        try:
            module = importlib.import_module(module_name)
            factory = getattr(module, factory_name)
        except (ImportError, AttributeError) as exc:
            raise ModelLoadError(f"cannot load {model_id!r}: {exc}") from exc
        return factory(checkpoint, device)
    raise ModelLoadError(f"unknown {kind} model id {model_id!r}")


def load_models(config: BridgeConfig):
    """Load both models; at least one must come up or the service refuses."""
    segmenter = _load(config.segmenter, config.segmenter_checkpoint,
                      config.device, "segmenter")
    detector = _load(config.detector, config.detector_checkpoint,
                     config.device, "detector")
    if segmenter is None and detector is None:
        raise ModelLoadError("neither a segmenter nor a detector could be loaded")
    return segmenter, detector
