"""Serialization: JSON schemas for poses/elements and a flat binary raster format.

Raster binary layout (all little-endian)::

    magic   4 bytes  b"BEVR"
    version uint32   1
    H, W, C uint32 x3
    x_min, x_max, y_min, y_max, resolution  float64 x5
    data    float32[H*W*C], row-major (row, col, channel)

A JSON sidecar ``<path>.json`` repeats the header and lists channel names.

Parameter bundles use ``<path>`` for a concatenation of little-endian float32
arrays and ``<path>.json`` as the manifest of names, shapes and offsets.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geom import BevGridSpec, BevRaster, MapElement, Pose2

_MAGIC = b"BEVR"
_HEADER = struct.Struct("<4sIIII5d")


def pose_to_dict(p: Pose2) -> dict:
    return {"x": p.x, "y": p.y, "yaw": p.yaw, "t": p.t}


def pose_from_dict(d: dict) -> Pose2:
    return Pose2(d["x"], d["y"], d["yaw"], d.get("t", 0.0))


def element_to_dict(e: MapElement) -> dict:
    return {"class": e.cls, "points": e.points.tolist(), "confidence": e.confidence}


def element_from_dict(d: dict) -> MapElement:
    return MapElement(d["class"], np.asarray(d["points"], dtype=np.float64),
                      d.get("confidence", 1.0))


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation)."""
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(obj))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def save_elements(path, elements) -> Path:
    return write_json(path, {"elements": [element_to_dict(e) for e in elements]})


def load_elements(path) -> list[MapElement]:
    return [element_from_dict(d) for d in read_json(path)["elements"]]


def raster_to_bytes(r: BevRaster) -> bytes:
    s = r.spec
    H, W, C = r.data.shape
    head = _HEADER.pack(_MAGIC, 1, H, W, C, s.x_range[0], s.x_range[1],
                        s.y_range[0], s.y_range[1], s.resolution)
    return head + r.data.astype("<f4").tobytes(order="C")


def raster_from_bytes(buf: bytes, channel_names=()) -> BevRaster:
    magic, version, H, W, C, x0, x1, y0, y1, res = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a BEVR v1 raster")
    data = np.frombuffer(buf, dtype="<f4", count=H * W * C, offset=_HEADER.size)
    spec = BevGridSpec((x0, x1), (y0, y1), res)
    return BevRaster(spec, data.reshape(H, W, C).astype(np.float64), tuple(channel_names))


def save_raster(path, r: BevRaster) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(raster_to_bytes(r))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    H, W, C = r.data.shape
    write_json(str(path) + ".json", {"format": "BEVR", "version": 1, "H": H, "W": W, "C": C,
                                     "spec": r.spec.to_dict(),
                                     "channels": list(r.channel_names),
                                     "dtype": "float32-le", "order": "row-major"})
    return path


def load_raster(path) -> BevRaster:
    path = Path(path)
    side = Path(str(path) + ".json")
    names = read_json(side).get("channels", []) if side.exists() else []
    return raster_from_bytes(path.read_bytes(), names)


def save_arrays(path, arrays: dict, meta: dict | None = None) -> Path:
    """Write named arrays as float32 LE blobs plus a JSON manifest of shapes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest, blobs, offset = [], [], 0
    for name in arrays:
        a = np.asarray(arrays[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        b = a.tobytes(order="C")
        blobs.append(b)
        offset += len(b)
    path.write_bytes(b"".join(blobs))
    write_json(str(path) + ".json", {"arrays": manifest, "meta": meta or {}})
    return path


def load_arrays(path) -> tuple[dict, dict]:
    path = Path(path)
    man = read_json(str(path) + ".json")
    buf = path.read_bytes()
    out = {}
    for entry in man["arrays"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        a = np.frombuffer(buf, dtype="<f4", count=n, offset=entry["offset"])
        out[entry["name"]] = a.reshape(entry["shape"]).astype(np.float64)
    return out, man.get("meta", {})
