"""Promptable-segmenter and grounded-detector interfaces with mock backends.

Three families sit behind the same two interfaces: oracle mocks that compute
ideal answers from ground truth, noisy mocks that corrupt the oracle with
seeded, reproducible noise, and a remote client speaking the HTTP protocol
of the model bridge. Pipeline code never branches on which family it holds.
"""

from __future__ import annotations

import abc
import base64
import io
import time
import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .geometry import PointIndexSet
from .multiview import EMPTY_INDEX, RenderProduct


class BackendError(RuntimeError):
    """Base class for backend failures."""


class BackendUnavailableError(BackendError):
    """Raised after retryable transport failures are exhausted."""


class ProtocolError(BackendError):
    """Raised when a remote response violates the wire protocol."""


# ---------------------------------------------------------------------------
# RLE codec: row-major (start offset, run length) pairs over foreground cells.

def rle_encode(offsets: np.ndarray) -> np.ndarray:
    """Encode sorted, unique flat cell offsets as (start, length) runs."""
    offs = np.asarray(offsets, dtype=np.int64)
    if offs.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    breaks = np.nonzero(np.diff(offs) != 1)[0]
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [offs.size - 1]))
    return np.stack([offs[starts], offs[ends] - offs[starts] + 1], axis=1)


def rle_decode(runs: np.ndarray) -> np.ndarray:
    """Expand (start, length) runs back into sorted flat cell offsets."""
    runs = np.asarray(runs, dtype=np.int64).reshape(-1, 2)
    if runs.size == 0:
        return np.empty(0, dtype=np.int64)
    lengths = runs[:, 1]
    total = int(lengths.sum())
    base = np.repeat(runs[:, 0], lengths)
    within = np.arange(total, dtype=np.int64) - np.repeat(
        np.concatenate(([0], np.cumsum(lengths)[:-1])), lengths
    )
    return base + within


class Mask2D:
    """A 2D segment mask for one viewpoint, stored run-length encoded."""

    __slots__ = ("viewpoint_id", "rle", "width", "height", "score", "_offsets")

    def __init__(
        self,
        viewpoint_id: int,
        rle: np.ndarray,
        width: int,
        height: int,
        score: float = 1.0,
    ):
        runs = np.asarray(rle, dtype=np.int64).reshape(-1, 2)
        if runs.size:
            if runs[:, 1].min() < 1:
                raise ValueError("run lengths must be positive")
            if runs[:, 0].min() < 0 or (runs[:, 0] + runs[:, 1]).max() > width * height:
                raise ValueError("mask runs outside raster bounds")
        if not 0.0 <= score <= 1.0:
            raise ValueError("score must lie in [0, 1]")
        self.viewpoint_id = viewpoint_id
        self.rle = runs
        self.width = int(width)
        self.height = int(height)
        self.score = float(score)
        self._offsets: np.ndarray | None = None

    @classmethod
    def from_offsets(
        cls, viewpoint_id: int, offsets: np.ndarray, width: int, height: int,
        score: float = 1.0,
    ) -> "Mask2D":
        offs = np.unique(np.asarray(offsets, dtype=np.int64))
        mask = cls(viewpoint_id, rle_encode(offs), width, height, score)
        mask._offsets = offs
        return mask

    @classmethod
    def from_pixels(
        cls, viewpoint_id: int, pixels: np.ndarray, width: int, height: int,
        score: float = 1.0,
    ) -> "Mask2D":
        px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        return cls.from_offsets(viewpoint_id, px[:, 0] * width + px[:, 1],
                                width, height, score)

    def offsets(self) -> np.ndarray:
        if self._offsets is None:
            self._offsets = rle_decode(self.rle)
        return self._offsets

    def pixels(self) -> np.ndarray:
        offs = self.offsets()
        rows, cols = np.divmod(offs, self.width)
        return np.stack([rows, cols], axis=1)

    def to_raster(self) -> np.ndarray:
        raster = np.zeros(self.height * self.width, dtype=bool)
        raster[self.offsets()] = True
        return raster.reshape(self.height, self.width)

    def wire_rle(self) -> list[int]:
        return self.rle.reshape(-1).tolist()

    def __len__(self) -> int:
        return int(self.rle[:, 1].sum()) if self.rle.size else 0


@dataclass(frozen=True)
class DetectionBox:
    """A detector box with inclusive pixel bounds and a prompt class index."""

    viewpoint_id: int
    class_index: int
    x0: int
    y0: int
    x1: int
    y1: int
    score: float = 1.0

    @property
    def is_degenerate(self) -> bool:
        return self.x1 < self.x0 or self.y1 < self.y0

    def validate_within(self, width: int, height: int) -> None:
        if self.is_degenerate:
            raise ValueError("box bounds are reversed")
        if self.x0 < 0 or self.y0 < 0 or self.x1 >= width or self.y1 >= height:
            raise ValueError("box outside raster bounds")


@dataclass(frozen=True)
class TextPrompt:
    """Ordered part-class names. Holds part names only, never an object name."""

    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(self.class_names)
        if not names or any(not n.strip() for n in names):
            raise ValueError("prompt needs at least one non-empty part name")
        object.__setattr__(self, "class_names", names)

    def __len__(self) -> int:
        return len(self.class_names)

    @classmethod
    def from_string(cls, text: str) -> "TextPrompt":
        return cls(tuple(n.strip() for n in text.split(",") if n.strip()))


class GroundTruth:
    """Per-point class and instance annotation used by mocks and metrics."""

    __slots__ = ("class_names", "semantic", "instance", "_instance_cache")

    def __init__(
        self,
        class_names: Sequence[str],
        semantic: np.ndarray,
        instance: np.ndarray,
    ):
        sem = np.asarray(semantic, dtype=np.int64)
        inst = np.asarray(instance, dtype=np.int64)
        if sem.shape != inst.shape or sem.ndim != 1:
            raise ValueError("semantic and instance arrays must be 1-D and equal length")
        if np.any((sem < 0) != (inst < 0)):
            raise ValueError("points must be annotated in both arrays or neither")
        if sem.size and sem.max() >= len(class_names):
            raise ValueError("semantic index beyond class table")
        for iid in np.unique(inst[inst >= 0]):
            classes = np.unique(sem[inst == iid])
            if classes.size != 1:
                raise ValueError(f"instance {int(iid)} spans multiple classes")
        self.class_names = tuple(class_names)
        self.semantic = sem
        self.instance = inst
        sem.flags.writeable = False
        inst.flags.writeable = False
        self._instance_cache: dict[int, PointIndexSet] = {}

    def __len__(self) -> int:
        return int(self.semantic.size)

    def instance_ids(self) -> list[int]:
        return np.unique(self.instance[self.instance >= 0]).tolist()

    def instance_points(self, instance_id: int) -> PointIndexSet:
        cached = self._instance_cache.get(instance_id)
        if cached is None:
            cached = PointIndexSet.from_mask(self.instance == instance_id)
            self._instance_cache[instance_id] = cached
        return cached

    def instance_class(self, instance_id: int) -> int:
        members = np.nonzero(self.instance == instance_id)[0]
        if members.size == 0:
            raise ValueError(f"unknown instance id {instance_id}")
        return int(self.semantic[members[0]])


# ---------------------------------------------------------------------------
# Backend interfaces.

class SegmentationBackend(abc.ABC):
    """Promptable 2D segmenter."""

    @abc.abstractmethod
    def segment_auto(self, rp: RenderProduct, seed_pixels: np.ndarray) -> list[Mask2D]:
        """Segment the whole view into candidate masks, seeded by key points."""

    @abc.abstractmethod
    def segment_prompted(
        self, rp: RenderProduct, prompt_pixels: np.ndarray
    ) -> list[Mask2D]:
        """Candidate masks for the prompted region, best-scoring first."""

    def scoped(self, run_key: int) -> "SegmentationBackend":
        """A per-run view of this backend; stateless backends return self."""
        return self


class DetectionBackend(abc.ABC):
    """Grounded 2D detector prompted with part-class names."""

    @abc.abstractmethod
    def detect(self, rp: RenderProduct, prompt: TextPrompt) -> list[DetectionBox]:
        ...

    def scoped(self, run_key: int) -> "DetectionBackend":
        return self


def _visible_instance_cells(
    rp: RenderProduct, gt: GroundTruth,
    cache: "weakref.WeakKeyDictionary",
) -> dict[int, np.ndarray]:
    """Flat raster cells grouped by the ground-truth instance that won them."""
    got = cache.get(rp)
    if got is not None:
        return got
    flat = rp.index_map.ravel()
    cells = np.nonzero(flat != EMPTY_INDEX)[0]
    pts = flat[cells].astype(np.int64)
    inst = gt.instance[pts]
    keep = inst >= 0
    cells, inst = cells[keep], inst[keep]
    order = np.argsort(inst, kind="stable")
    cells, inst = cells[order], inst[order]
    ids, starts = np.unique(inst, return_index=True)
    bounds = np.append(starts, inst.size)
    grouped = {
        int(iid): cells[bounds[k]: bounds[k + 1]] for k, iid in enumerate(ids)
    }
    cache[rp] = grouped
    return grouped


class OracleSegmenter(SegmentationBackend):
    """Ideal segmenter: every mask is the exact visible pixel set of one
    ground-truth instance."""

    def __init__(self, gt: GroundTruth):
        self.gt = gt
        self._cells_cache: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def _cells(self, rp: RenderProduct) -> dict[int, np.ndarray]:
        return _visible_instance_cells(rp, self.gt, self._cells_cache)

    def segment_auto(self, rp: RenderProduct, seed_pixels: np.ndarray) -> list[Mask2D]:
        grouped = self._cells(rp)
        return [
            Mask2D.from_offsets(rp.viewpoint_id, grouped[iid], rp.width, rp.height, 1.0)
            for iid in sorted(grouped)
        ]

    def segment_prompted(
        self, rp: RenderProduct, prompt_pixels: np.ndarray
    ) -> list[Mask2D]:
        px = np.asarray(prompt_pixels, dtype=np.int64).reshape(-1, 2)
        if px.size == 0:
            return []
        vals = rp.index_map[px[:, 0], px[:, 1]]
        vals = vals[vals != EMPTY_INDEX]
        if vals.size == 0:
            return []
        inst = self.gt.instance[vals.astype(np.int64)]
        inst = inst[inst >= 0]
        if inst.size == 0:
            return []
        ids, counts = np.unique(inst, return_counts=True)
        winner = int(ids[int(np.argmax(counts))])  # ties -> lowest instance id
        grouped = self._cells(rp)
        return [
            Mask2D.from_offsets(rp.viewpoint_id, grouped[winner], rp.width,
                                rp.height, 1.0)
        ]


class OracleDetector(DetectionBackend):
    """Ideal detector: one tight box per visible instance whose class name is
    in the prompt, with the correct class index and score 1."""

    def __init__(self, gt: GroundTruth):
        self.gt = gt
        self._cells_cache: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def detect(self, rp: RenderProduct, prompt: TextPrompt) -> list[DetectionBox]:
        grouped = _visible_instance_cells(rp, self.gt, self._cells_cache)
        boxes = []
        for iid in sorted(grouped):
            name = self.gt.class_names[self.gt.instance_class(iid)]
            if name not in prompt.class_names:
                continue
            cells = grouped[iid]
            rows, cols = np.divmod(cells, rp.width)
            boxes.append(
                DetectionBox(
                    viewpoint_id=rp.viewpoint_id,
                    class_index=prompt.class_names.index(name),
                    x0=int(cols.min()), y0=int(rows.min()),
                    x1=int(cols.max()), y1=int(rows.max()),
                    score=1.0,
                )
            )
        return boxes


def _call_rng(seed: int, run_key: int, viewpoint_id: int, ordinal: int,
              channel: int) -> np.random.Generator:
    """Per-call RNG keyed on (seed, run, viewpoint, call ordinal, channel)."""
    ss = np.random.SeedSequence(
        entropy=seed, spawn_key=(run_key & 0xFFFFFFFF, viewpoint_id, ordinal, channel)
    )
    return np.random.default_rng(ss)


def _morph_mask(mask: Mask2D, erosion: int, dilation: int) -> Mask2D | None:
    """Erode then dilate a mask within a padded crop of its bounding box."""
    if (erosion <= 0 and dilation <= 0) or len(mask) == 0:
        return mask
    px = mask.pixels()
    pad = max(erosion, dilation) + 1
    r0 = max(int(px[:, 0].min()) - pad, 0)
    r1 = min(int(px[:, 0].max()) + pad, mask.height - 1)
    c0 = max(int(px[:, 1].min()) - pad, 0)
    c1 = min(int(px[:, 1].max()) + pad, mask.width - 1)
    crop = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    crop[px[:, 0] - r0, px[:, 1] - c0] = True
    if erosion > 0:
        crop = ndimage.binary_erosion(crop, iterations=erosion)
    if dilation > 0:
        crop = ndimage.binary_dilation(crop, iterations=dilation)
    rows, cols = np.nonzero(crop)
    if rows.size == 0:
        return None
    return Mask2D.from_pixels(
        mask.viewpoint_id,
        np.stack([rows + r0, cols + c0], axis=1),
        mask.width, mask.height, mask.score,
    )


@dataclass
class NoiseParams:
    """Knobs for the configurable noisy mocks."""

    erosion: int = 0
    dilation: int = 0
    drop_rate: float = 0.0
    merge_rate: float = 0.0
    mislabel_rate: float = 0.0
    jitter: int = 0


class NoisySegmenter(SegmentationBackend):
    """Oracle segmenter corrupted by seeded boundary, drop, and merge noise.

    Every call draws from an RNG derived from (seed, run key, viewpoint id,
    per-viewpoint call ordinal), so results do not depend on scheduling.
    """

    def __init__(self, gt: GroundTruth, params: NoiseParams | None = None,
                 seed: int = 0, run_key: int = 0):
        self.oracle = OracleSegmenter(gt)
        self.params = params or NoiseParams()
        self.seed = seed
        self.run_key = run_key
        self._ordinals: dict[tuple[int, int], int] = {}

    def scoped(self, run_key: int) -> "NoisySegmenter":
        return NoisySegmenter(self.oracle.gt, self.params, self.seed, run_key)

    def _next_rng(self, channel: int, viewpoint_id: int) -> np.random.Generator:
        key = (channel, viewpoint_id)
        ordinal = self._ordinals.get(key, 0)
        self._ordinals[key] = ordinal + 1
        return _call_rng(self.seed, self.run_key, viewpoint_id, ordinal, channel)

    def _corrupt(self, masks: list[Mask2D], rng: np.random.Generator,
                 allow_merge: bool) -> list[Mask2D]:
        p = self.params
        out: list[Mask2D] = []
        for mask in masks:
            morphed = _morph_mask(mask, p.erosion, p.dilation)
            if morphed is not None and len(morphed) > 0:
                out.append(morphed)
        if allow_merge and len(out) >= 2 and rng.random() < p.merge_rate:
            i, j = sorted(rng.choice(len(out), size=2, replace=False).tolist())
            merged_offs = np.union1d(out[i].offsets(), out[j].offsets())
            out[i] = Mask2D.from_offsets(out[i].viewpoint_id, merged_offs,
                                         out[i].width, out[i].height, out[i].score)
            del out[j]
        if p.drop_rate > 0.0:
            out = [m for m in out if rng.random() >= p.drop_rate]
        return out

    def segment_auto(self, rp: RenderProduct, seed_pixels: np.ndarray) -> list[Mask2D]:
        rng = self._next_rng(0, rp.viewpoint_id)
        return self._corrupt(self.oracle.segment_auto(rp, seed_pixels), rng,
                             allow_merge=True)

    def segment_prompted(
        self, rp: RenderProduct, prompt_pixels: np.ndarray
    ) -> list[Mask2D]:
        rng = self._next_rng(1, rp.viewpoint_id)
        return self._corrupt(self.oracle.segment_prompted(rp, prompt_pixels), rng,
                             allow_merge=False)


class NoisyDetector(DetectionBackend):
    """Oracle detector with seeded class mislabeling and box jitter."""

    def __init__(self, gt: GroundTruth, params: NoiseParams | None = None,
                 seed: int = 0, run_key: int = 0):
        self.oracle = OracleDetector(gt)
        self.params = params or NoiseParams()
        self.seed = seed
        self.run_key = run_key
        self._ordinals: dict[int, int] = {}

    def scoped(self, run_key: int) -> "NoisyDetector":
        return NoisyDetector(self.oracle.gt, self.params, self.seed, run_key)

    def detect(self, rp: RenderProduct, prompt: TextPrompt) -> list[DetectionBox]:
        ordinal = self._ordinals.get(rp.viewpoint_id, 0)
        self._ordinals[rp.viewpoint_id] = ordinal + 1
        rng = _call_rng(self.seed, self.run_key, rp.viewpoint_id, ordinal, 2)
        p = self.params
        boxes = []
        for box in self.oracle.detect(rp, prompt):
            class_index = box.class_index
            if len(prompt) > 1 and rng.random() < p.mislabel_rate:
                others = [c for c in range(len(prompt)) if c != class_index]
                class_index = int(rng.choice(others))
            x0, y0, x1, y1 = box.x0, box.y0, box.x1, box.y1
            if p.jitter > 0:
                dx0, dy0, dx1, dy1 = rng.integers(-p.jitter, p.jitter + 1, 4).tolist()
                x0, x1 = sorted((x0 + dx0, x1 + dx1))
                y0, y1 = sorted((y0 + dy0, y1 + dy1))
                x0 = int(np.clip(x0, 0, rp.width - 1))
                x1 = int(np.clip(x1, 0, rp.width - 1))
                y0 = int(np.clip(y0, 0, rp.height - 1))
                y1 = int(np.clip(y1, 0, rp.height - 1))
            boxes.append(DetectionBox(box.viewpoint_id, class_index,
                                      x0, y0, x1, y1, box.score))
        return boxes


# ---------------------------------------------------------------------------
# Remote protocol client.

def encode_image_png_b64(image: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class _RemoteTransport:
    """POST with bounded retries and exponential backoff on 503/transport errors."""

    def __init__(self, base_url: str, retries: int = 3, backoff: float = 0.2,
                 timeout: float = 60.0, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.session = session or requests.Session()
        self._requests = requests

    def post(self, path: str, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(
                    self.base_url + path, json=payload, timeout=self.timeout
                )
            except self._requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code == 503:
                    last_error = BackendUnavailableError("model unavailable (503)")
                else:
                    raise ProtocolError(
                        f"{path} returned HTTP {resp.status_code}: {resp.text[:200]}"
                    )
            if attempt < self.retries:
                time.sleep(self.backoff * (2 ** attempt))
        raise BackendUnavailableError(
            f"{path} unreachable after {self.retries + 1} attempts: {last_error}"
        )


def _pixels_to_wire(pixels: np.ndarray) -> list[list[int]]:
    px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    # wire points are [x, y] = [col, row]
    return [[int(c), int(r)] for r, c in px]


def _parse_masks(body: dict, rp: RenderProduct) -> list[Mask2D]:
    masks = body.get("masks")
    if not isinstance(masks, list):
        raise ProtocolError("segment response missing 'masks' list")
    out = []
    for m in masks:
        try:
            if int(m["width"]) != rp.width or int(m["height"]) != rp.height:
                raise ProtocolError("mask dimensions do not match submitted image")
            flat = np.asarray(m["rle"], dtype=np.int64)
            if flat.size % 2:
                raise ProtocolError("rle must hold (start, length) pairs")
            out.append(
                Mask2D(rp.viewpoint_id, flat.reshape(-1, 2), rp.width, rp.height,
                       float(m.get("score", 1.0)))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed mask payload: {exc}") from exc
    return out


class RemoteSegmenter(SegmentationBackend):
    """Client for the segment endpoint of a model bridge."""

    def __init__(self, base_url: str, retries: int = 3, backoff: float = 0.2,
                 timeout: float = 60.0, session=None):
        self.transport = _RemoteTransport(base_url, retries, backoff, timeout, session)

    def _call(self, rp: RenderProduct, points: np.ndarray, mode: str) -> list[Mask2D]:
        body = self.transport.post(
            "/v1/segment",
            {
                "image_png_b64": encode_image_png_b64(rp.image),
                "points": _pixels_to_wire(points),
                "mode": mode,
            },
        )
        return _parse_masks(body, rp)

    def segment_auto(self, rp: RenderProduct, seed_pixels: np.ndarray) -> list[Mask2D]:
        return self._call(rp, seed_pixels, "auto")

    def segment_prompted(
        self, rp: RenderProduct, prompt_pixels: np.ndarray
    ) -> list[Mask2D]:
        masks = self._call(rp, prompt_pixels, "prompt")
        return sorted(masks, key=lambda m: -m.score)


class RemoteDetector(DetectionBackend):
    """Client for the detect endpoint of a model bridge."""

    def __init__(self, base_url: str, retries: int = 3, backoff: float = 0.2,
                 timeout: float = 60.0, session=None):
        self.transport = _RemoteTransport(base_url, retries, backoff, timeout, session)

    def detect(self, rp: RenderProduct, prompt: TextPrompt) -> list[DetectionBox]:
        body = self.transport.post(
            "/v1/detect",
            {
                "image_png_b64": encode_image_png_b64(rp.image),
                "classes": list(prompt.class_names),
            },
        )
        raw = body.get("boxes")
        if not isinstance(raw, list):
            raise ProtocolError("detect response missing 'boxes' list")
        boxes = []
        for b in raw:
            try:
                box = DetectionBox(
                    viewpoint_id=rp.viewpoint_id,
                    class_index=int(b["class_index"]),
                    x0=int(b["x0"]), y0=int(b["y0"]),
                    x1=int(b["x1"]), y1=int(b["y1"]),
                    score=float(b.get("score", 1.0)),
                )
                box.validate_within(rp.width, rp.height)
                if box.class_index >= len(prompt):
                    raise ValueError("class index beyond prompt")
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"malformed box payload: {exc}") from exc
            boxes.append(box)
        return boxes
