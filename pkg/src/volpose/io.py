"""File formats shared by the command-line tools.

All binary files are little-endian with IEEE-754 float32 payloads.

``depth_<sensor>.f32``
    header ``<2I`` (height, width), then ``height * width`` float32 ranges
    in row-major order; ``inf`` marks pixels without a return.
``heatmap_<sensor>_p<person>.f32``
    header ``<3I`` (channels, image width, image height), then per channel a
    ``<4i`` sub-window (x0, y0, w, h) followed by ``h * w`` float32 values.
    An empty channel has ``w = h = 0``.
``cloud_<sensor>.bin``
    header ``<I`` (point count), then ``count * 3`` float32 coordinates.
``*.ply``
    ASCII PLY with float ``x y z`` vertices and an int ``sensor`` property.

JSON files are written with sorted keys, two-space indentation and a
trailing newline; NaN is stored as ``null``.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geom import CameraModel, SkeletonPose
from .lidar import PointCloud, ScanPatternParams
from .synth import HeatmapWindow, Sensor

_DEPTH_HEADER = struct.Struct("<2I")
_HEATMAP_HEADER = struct.Struct("<3I")
_CHANNEL_HEADER = struct.Struct("<4i")
_CLOUD_HEADER = struct.Struct("<I")


def frame_dir(root, index: int) -> Path:
    return Path(root) / f"frame_{index:06d}"


# ---------------------------------------------------------------------------
# JSON


def _clean(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def nan_array(values, shape=None) -> np.ndarray:
    """Array from nested lists where ``None`` means NaN."""
    arr = np.array(values, dtype=object)
    arr = np.where(arr == None, np.nan, arr).astype(float)  # noqa: E711
    return arr.reshape(shape) if shape is not None else arr


# ---------------------------------------------------------------------------
# calibration


def camera_to_json(cam: CameraModel, scan: ScanPatternParams | None = None) -> dict:
    return {
        "id": cam.id,
        "K": cam.intrinsics.ravel().tolist(),
        "R": cam.rotation.ravel().tolist(),
        "t": cam.translation.tolist(),
        "width": cam.width,
        "height": cam.height,
        "lidar": scan.to_json() if scan is not None else None,
    }


def camera_from_json(d: dict) -> tuple[CameraModel, ScanPatternParams | None]:
    cam = CameraModel(np.reshape(d["K"], (3, 3)), np.reshape(d["R"], (3, 3)),
                      np.asarray(d["t"]), d["width"], d["height"], d["id"])
    scan = ScanPatternParams.from_json(d["lidar"]) if d.get("lidar") else None
    return cam, scan


def write_calibration(path, sensors: Sequence[Sensor]) -> None:
    write_json(path, [camera_to_json(s.camera, s.scan) for s in sensors])


def read_calibration(path) -> list[Sensor]:
    return [Sensor(*camera_from_json(d)) for d in read_json(path)]


# ---------------------------------------------------------------------------
# poses and estimates


def pose_to_json(pose: SkeletonPose) -> dict:
    return {"joints": pose.joints.tolist(), "validity": [bool(v) for v in pose.validity]}


def pose_from_json(d: dict) -> SkeletonPose:
    return SkeletonPose(np.asarray(d["joints"], dtype=float), d.get("validity"))


def write_estimates(path, frames: Sequence[tuple[int, Sequence[dict]]]) -> None:
    """``frames`` holds ``(frame index, [estimate dicts])`` pairs."""
    write_json(path, {"frames": [{"frame": int(i), "estimates": list(est)}
                                 for i, est in frames]})


def read_estimates(path) -> list[tuple[int, list[dict]]]:
    """Read an estimates file; a bare list counts as frame 0."""
    data = read_json(path)
    if isinstance(data, list):
        return [(0, data)]
    return [(int(f["frame"]), list(f["estimates"])) for f in data["frames"]]


# ---------------------------------------------------------------------------
# binary arrays


def write_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(_DEPTH_HEADER.pack(h, w))
        fh.write(np.ascontiguousarray(depth).tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    h, w = _DEPTH_HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f4", offset=_DEPTH_HEADER.size, count=h * w)
    return data.reshape(h, w).astype(float)


def write_heatmaps(path, window: HeatmapWindow) -> None:
    """Store each channel cropped to its own nonzero support."""
    data = window.data
    K = data.shape[0]
    parts = [_HEATMAP_HEADER.pack(K, window.width, window.height)]
    for k in range(K):
        ch = data[k] if data.size else np.zeros((0, 0), dtype=np.float32)
        nz = np.argwhere(ch != 0)
        if len(nz) == 0:
            parts.append(_CHANNEL_HEADER.pack(0, 0, 0, 0))
            continue
        (r0, c0), (r1, c1) = nz.min(axis=0), nz.max(axis=0)
        sub = np.ascontiguousarray(ch[r0:r1 + 1, c0:c1 + 1], dtype="<f4")
        parts.append(_CHANNEL_HEADER.pack(window.x0 + int(c0), window.y0 + int(r0),
                                          sub.shape[1], sub.shape[0]))
        parts.append(sub.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_heatmaps(path) -> HeatmapWindow:
    raw = Path(path).read_bytes()
    K, width, height = _HEATMAP_HEADER.unpack_from(raw)
    off = _HEATMAP_HEADER.size
    chans = []
    for _ in range(K):
        x0, y0, w, h = _CHANNEL_HEADER.unpack_from(raw, off)
        off += _CHANNEL_HEADER.size
        sub = np.frombuffer(raw, dtype="<f4", offset=off, count=w * h).reshape(h, w)
        off += 4 * w * h
        chans.append((x0, y0, sub))
    boxes = [(x0, y0, s.shape[1], s.shape[0]) for x0, y0, s in chans if s.size]
    if not boxes:
        return HeatmapWindow(np.zeros((K, 0, 0), dtype=np.float32), 0, 0, width, height)
    X0 = min(b[0] for b in boxes)
    Y0 = min(b[1] for b in boxes)
    X1 = max(b[0] + b[2] for b in boxes)
    Y1 = max(b[1] + b[3] for b in boxes)
    data = np.zeros((K, Y1 - Y0, X1 - X0), dtype=np.float32)
    for k, (x0, y0, s) in enumerate(chans):
        if s.size:
            data[k, y0 - Y0:y0 - Y0 + s.shape[0], x0 - X0:x0 - X0 + s.shape[1]] = s
    return HeatmapWindow(data, X0, Y0, width, height)


def write_cloud_bin(path, cloud: PointCloud) -> None:
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    Path(path).write_bytes(_CLOUD_HEADER.pack(len(pts)) + pts.tobytes())


def read_cloud_bin(path, sensor_id: str | None = None) -> PointCloud:
    raw = Path(path).read_bytes()
    (n,) = _CLOUD_HEADER.unpack_from(raw)
    pts = np.frombuffer(raw, dtype="<f4", offset=_CLOUD_HEADER.size, count=3 * n)
    pts = pts.reshape(n, 3).astype(float)
    return PointCloud(pts, (sensor_id,) * n if sensor_id is not None else None)


def write_ply(path, cloud: PointCloud, sensor_index: Sequence[int] | None = None) -> None:
    pts = cloud.points
    idx = np.zeros(len(pts), dtype=int) if sensor_index is None else np.asarray(sensor_index)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z",
             "property int sensor", "end_header"]
    lines += [f"{x:.6f} {y:.6f} {z:.6f} {int(s)}" for (x, y, z), s in zip(pts, idx)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> tuple[PointCloud, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "ply":
        raise ValueError(f"{path} is not a PLY file")
    end = lines.index("end_header")
    n = 0
    for ln in lines[:end]:
        if ln.startswith("element vertex"):
            n = int(ln.split()[2])
    rows = [ln.split() for ln in lines[end + 1:end + 1 + n]]
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} vertices")
    arr = np.array(rows, dtype=float).reshape(n, -1)
    ids = arr[:, 3].astype(int) if arr.shape[1] > 3 else np.zeros(n, dtype=int)
    return PointCloud(arr[:, :3]), ids


# ---------------------------------------------------------------------------
# reports


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else repr(float(v))
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
