"""File formats: PLY clouds, ground-truth and parts JSON, debug exports.

PLY supports ascii and binary little-endian with x, y, z floats and
red/green/blue uchars. Parts files record the owning cloud size plus each
part's sorted indices; the labeled variant adds a class-name label (or
null) and a confidence per part.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import GroundTruth
from .geometry import ColoredPointCloud, PointIndexSet
from .merging import Part3D
from .multiview import RenderProduct, index_map_to_bytes


class FileFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PLY

def write_ply(path: str | Path, cloud: ColoredPointCloud, binary: bool = True) -> None:
    n = len(cloud)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {n}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    path = Path(path)
    if binary:
        rec = np.empty(
            n,
            dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                   ("red", "u1"), ("green", "u1"), ("blue", "u1")],
        )
        pos = cloud.positions.astype("<f4")
        rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
        rec["red"], rec["green"], rec["blue"] = (
            cloud.colors[:, 0], cloud.colors[:, 1], cloud.colors[:, 2]
        )
        path.write_bytes(header.encode("ascii") + rec.tobytes())
    else:
        lines = [header.rstrip("\n")]
        pos = cloud.positions.astype(np.float32)
        for (x, y, z), (r, g, b) in zip(pos, cloud.colors):
            lines.append(f"{x:.9g} {y:.9g} {z:.9g} {int(r)} {int(g)} {int(b)}")
        path.write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ply(path: str | Path) -> ColoredPointCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise FileFormatError(f"{path}: not a PLY file")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    fmt = None
    n = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header_lines[1:]:
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                n = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            props.append((tokens[1], tokens[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FileFormatError(f"{path}: unsupported PLY format {fmt!r}")
    if n is None:
        raise FileFormatError(f"{path}: missing vertex element")
    names = [p[1] for p in props]
    for needed in ("x", "y", "z", "red", "green", "blue"):
        if needed not in names:
            raise FileFormatError(f"{path}: missing property {needed!r}")

    type_map = {
        "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
        "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
        "short": "<i2", "ushort": "<u2", "int": "<i4", "int32": "<i4",
        "uint": "<u4", "uint32": "<u4",
    }
    if fmt == "binary_little_endian":
        dtype = np.dtype([(name, type_map[t]) for t, name in props])
        rec = np.frombuffer(body, dtype=dtype, count=n)
    else:
        text = body.decode("ascii")
        rows = [line.split() for line in text.splitlines() if line.strip()][:n]
        if len(rows) < n:
            raise FileFormatError(f"{path}: expected {n} vertices")
        arr = np.array(rows, dtype=np.float64)
        rec = {name: arr[:, i] for i, name in enumerate(names)}
    pos = np.stack(
        [np.asarray(rec["x"], np.float64), np.asarray(rec["y"], np.float64),
         np.asarray(rec["z"], np.float64)], axis=1,
    )
    col = np.stack(
        [np.asarray(rec["red"]), np.asarray(rec["green"]),
         np.asarray(rec["blue"])], axis=1,
    ).astype(np.uint8)
    return ColoredPointCloud(pos, col)


# ---------------------------------------------------------------------------
# Ground truth JSON: {classes, semantic, instance} with -1 = unannotated.

def write_ground_truth(path: str | Path, gt: GroundTruth) -> None:
    payload = {
        "classes": list(gt.class_names),
        "semantic": gt.semantic.tolist(),
        "instance": gt.instance.tolist(),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def read_ground_truth(path: str | Path) -> GroundTruth:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return GroundTruth(
            payload["classes"],
            np.asarray(payload["semantic"], dtype=np.int64),
            np.asarray(payload["instance"], dtype=np.int64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: invalid ground-truth file: {exc}") from exc


# ---------------------------------------------------------------------------
# Parts JSON

def parts_payload(
    parts: Sequence[Part3D],
    num_points: int,
    class_names: Sequence[str] | None = None,
) -> dict:
    out = {"num_points": num_points, "parts": []}
    for part in parts:
        entry: dict = {
            "part_id": part.part_id,
            "indices": part.points.indices.tolist(),
        }
        if class_names is not None:
            entry["label"] = (
                class_names[part.label] if part.label is not None else None
            )
            entry["confidence"] = part.confidence
        out["parts"].append(entry)
    return out


def write_parts(
    path: str | Path,
    parts: Sequence[Part3D],
    num_points: int,
    class_names: Sequence[str] | None = None,
) -> None:
    Path(path).write_text(
        json.dumps(parts_payload(parts, num_points, class_names)), encoding="utf-8"
    )


def read_parts(
    path: str | Path, class_names: Sequence[str] | None = None
) -> tuple[list[Part3D], int]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        num_points = int(payload["num_points"])
        parts = []
        for entry in payload["parts"]:
            label = None
            confidence = 0.0
            if "label" in entry and entry["label"] is not None:
                if class_names is None:
                    raise ValueError("labeled parts file needs a class table")
                label = list(class_names).index(entry["label"])
                confidence = float(entry.get("confidence", 0.0))
            points = PointIndexSet(np.asarray(entry["indices"], dtype=np.int64))
            points.validate_for(num_points)
            parts.append(
                Part3D(points=points, part_id=int(entry["part_id"]),
                       label=label, confidence=confidence)
            )
        return parts, num_points
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: invalid parts file: {exc}") from exc


def read_labeled_parts_with_names(path: str | Path) -> tuple[list[Part3D], int, list[str]]:
    """Read a labeled parts file, rebuilding the class table from the labels."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    names: list[str] = []
    for entry in payload.get("parts", []):
        label = entry.get("label")
        if label is not None and label not in names:
            names.append(label)
    parts, num_points = read_parts(path, names)
    return parts, num_points, names


# ---------------------------------------------------------------------------
# Debug exports

def write_render_debug(rp: RenderProduct, png_path: str | Path,
                       index_path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(rp.image).save(str(png_path))
    Path(index_path).write_bytes(index_map_to_bytes(rp.index_map))
