"""Volumetric representation around one person.

A :class:`VoxelGridSpec` is a metric cube split into ``X x Y x Z`` voxels.
Point clouds fill a binary :class:`OccupancyGrid`; multi-view 2D heatmaps are
back-projected into a K-channel :class:`VoxelHeatmap` which, once
normalized, yields joint positions (soft-argmax) and per-joint entropies.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import EmptyCloud, NotNormalized
from .geom import CameraModel, SkeletonPose
from .lidar import PointCloud

NORM_TOL = 1e-6
DEFAULT_EPS = 1e-12


@dataclass(frozen=True)
class VoxelGridSpec:
    center: tuple = (0.0, 0.0, 0.0)
    side: float = 2.0
    resolution: tuple = (64, 64, 64)

    def __post_init__(self):
        center = tuple(float(c) for c in np.asarray(self.center, dtype=float).reshape(3))
        res = self.resolution
        if isinstance(res, (int, np.integer)):
            res = (int(res),) * 3
        res = tuple(int(r) for r in res)
        if len(res) != 3 or min(res) < 2:
            raise ValueError("resolution must be three counts >= 2")
        if not self.side > 0:
            raise ValueError("side length must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "side", float(self.side))

    @property
    def pitch(self) -> np.ndarray:
        return self.side / np.asarray(self.resolution, dtype=float)

    @property
    def origin(self) -> np.ndarray:
        """World position of the cube's minimum corner."""
        return np.asarray(self.center) - self.side / 2.0

    @property
    def num_voxels(self) -> int:
        X, Y, Z = self.resolution
        return X * Y * Z

    def axis_offsets(self) -> list[np.ndarray]:
        """Voxel-center coordinates along each axis relative to ``center``."""
        return [(np.arange(n) + 0.5) * p - self.side / 2.0
                for n, p in zip(self.resolution, self.pitch)]

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel center, ``(X*Y*Z, 3)`` in C order."""
        return _centers(self.center, self.side, self.resolution)

    def index_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer voxel indices ``(N, 3)`` and an inside-the-cube mask."""
        rel = (np.asarray(points, dtype=float) - self.origin) / self.pitch
        idx = np.floor(rel).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.resolution)), axis=-1)
        return idx, inside

    def translated(self, delta) -> "VoxelGridSpec":
        return VoxelGridSpec(tuple(np.asarray(self.center) + np.asarray(delta, dtype=float)),
                             self.side, self.resolution)


@lru_cache(maxsize=8)
def _centers(center, side, resolution) -> np.ndarray:
    spec = VoxelGridSpec(center, side, resolution)
    ox, oy, oz = spec.axis_offsets()
    gx, gy, gz = np.meshgrid(ox, oy, oz, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1) + np.asarray(center)
    pts.setflags(write=False)
    return pts


@dataclass(frozen=True)
class OccupancyGrid:
    spec: VoxelGridSpec
    values: np.ndarray  # (X, Y, Z) uint8 in {0, 1}

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != self.spec.resolution:
            raise ValueError("occupancy shape does not match the grid")
        if not np.isin(vals, (0, 1)).all():
            raise ValueError("occupancy must be binary")
        object.__setattr__(self, "values", vals.astype(np.uint8))

    @property
    def count(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True)
class VoxelHeatmap:
    spec: VoxelGridSpec
    channels: np.ndarray  # (K, X, Y, Z)
    normalized: bool = False

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=float)
        if ch.ndim != 4 or ch.shape[1:] != self.spec.resolution:
            raise ValueError("channels must be (K, X, Y, Z) matching the grid")
        object.__setattr__(self, "channels", ch)

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]


def grid_from_cloud(cloud: PointCloud, side: float = 2.0, resolution=64,
                    center=None) -> tuple[VoxelGridSpec, OccupancyGrid]:
    """Cube of the given side centered on the cloud's centroid, with voxels
    containing at least one point set to 1.  Points outside are ignored.

    ``center`` overrides the centroid (the cloud may then be empty).
    """
    pts = cloud.points if cloud is not None else np.zeros((0, 3))
    if center is None:
        if len(pts) == 0:
            raise EmptyCloud("cannot center a grid on an empty cloud")
        center = pts.mean(axis=0)
    spec = VoxelGridSpec(tuple(center), side, resolution)
    values = np.zeros(spec.resolution, dtype=np.uint8)
    if len(pts):
        idx, inside = spec.index_of(pts)
        idx = idx[inside]
        values[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return spec, OccupancyGrid(spec, values)


# ---------------------------------------------------------------------------
# back-projection


def _view_arrays(view):
    """Return ``(data (K, h, w), x0, y0, width, height)`` for a dense array
    or a heatmap window."""
    if hasattr(view, "x0"):
        return view.data, view.x0, view.y0, view.width, view.height
    data = np.asarray(view)
    return data, 0, 0, data.shape[2], data.shape[1]


def _bilinear_setup(uv: np.ndarray, ok: np.ndarray, x0w: int, y0w: int, w: int, h: int,
                    width: int, height: int):
    """Flat gather indices into a zero-padded ``(h+2, w+2)`` window and the
    four bilinear weights for the points in ``ok``."""
    u = np.clip(uv[ok, 0], 0.0, width - 1.0)
    v = np.clip(uv[ok, 1], 0.0, height - 1.0)
    xa = np.minimum(np.floor(u), max(width - 2, 0))
    ya = np.minimum(np.floor(v), max(height - 2, 0))
    fx = u - xa
    fy = v - ya
    xa = xa.astype(np.int64)
    ya = ya.astype(np.int64)
    pw = w + 2

    def flat(xx, yy):
        cx = np.clip(xx - x0w + 1, 0, w + 1)
        cy = np.clip(yy - y0w + 1, 0, h + 1)
        return cy * pw + cx

    xb = np.minimum(xa + 1, width - 1)
    yb = np.minimum(ya + 1, height - 1)
    idx = (flat(xa, ya), flat(xb, ya), flat(xa, yb), flat(xb, yb))
    wts = ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
    return idx, wts


def backproject(heatmaps2d: Sequence, cameras: Sequence[CameraModel],
                spec: VoxelGridSpec) -> VoxelHeatmap:
    """Fuse per-view 2D heatmaps into an unnormalized voxel volume.

    Each voxel center is projected into every view and the view's heatmap is
    sampled bilinearly there (zero outside the image or behind the camera).
    The voxel value is the mean over views.

    ``heatmaps2d`` holds one entry per camera: a ``(K, H, W)`` array or a
    :class:`~volpose.synth.HeatmapWindow`.
    """
    if len(heatmaps2d) != len(cameras) or not cameras:
        raise ValueError("need one heatmap stack per camera and at least one view")
    centers = spec.voxel_centers()
    K = _view_arrays(heatmaps2d[0])[0].shape[0]
    acc = np.zeros((len(centers), K), dtype=np.float32)
    for view, cam in zip(heatmaps2d, cameras):
        data, x0w, y0w, width, height = _view_arrays(view)
        if data.shape[0] != K:
            raise ValueError("all views must have the same channel count")
        if (width, height) != (cam.width, cam.height):
            raise ValueError("heatmap size must equal the image size")
        _, h, w = data.shape
        if h == 0 or w == 0:
            continue
        uv, z = cam.project_points(centers)
        with np.errstate(invalid="ignore"):
            # only voxels whose bilinear support touches the window matter
            near = ((uv[:, 0] > x0w - 1) & (uv[:, 0] < x0w + w)
                    & (uv[:, 1] > y0w - 1) & (uv[:, 1] < y0w + h))
        ok = (z > 1e-9) & cam.in_image(uv) & near
        if not ok.any():
            continue
        padded = np.zeros((h + 2, w + 2, K), dtype=np.float32)
        padded[1:-1, 1:-1, :] = np.moveaxis(data, 0, -1)
        flat = padded.reshape(-1, K)
        idx, wts = _bilinear_setup(uv, ok, x0w, y0w, w, h, width, height)
        sample = np.zeros((int(ok.sum()), K), dtype=np.float32)
        for i, wt in zip(idx, wts):
            sample += flat[i] * wt[:, None].astype(np.float32)
        acc[ok] += sample
    out = acc.T.astype(np.float64)
    out /= len(cameras)
    return VoxelHeatmap(spec, out.reshape((K,) + spec.resolution), normalized=False)


def sharpen(vh: VoxelHeatmap, threshold: float = 0.6, power: float = 2.0) -> VoxelHeatmap:
    """Keep the part of each channel close to its peak.

    Values are divided by the channel peak; whatever lies below
    ``threshold`` is cut to zero, the remainder is rescaled to [0, 1] and
    raised to ``power``.  A back-projected view leaves a ray-shaped trail at a
    fraction of the peak wherever the other views disagree, so only the
    region where most views overlap survives.  All-zero channels stay zero.
    ``threshold=0, power=1`` returns the input unchanged.
    """
    if not 0.0 <= threshold < 1.0 or not power > 0:
        raise ValueError("need 0 <= threshold < 1 and power > 0")
    if threshold == 0.0 and power == 1.0:
        return vh
    ch = vh.channels
    peak = ch.max(axis=(1, 2, 3), keepdims=True)
    out = np.divide(ch, peak, out=np.zeros_like(ch), where=peak > 0)
    out -= threshold
    np.maximum(out, 0.0, out=out)
    out /= 1.0 - threshold
    if power != 1.0:
        np.power(out, power, out=out)
    return VoxelHeatmap(vh.spec, out, normalized=False)


def normalize(vh: VoxelHeatmap, eps: float = DEFAULT_EPS) -> VoxelHeatmap:
    """Add ``eps`` to every voxel and rescale each channel to sum to one."""
    ch = vh.channels
    if np.any(ch < 0) or not np.all(np.isfinite(ch)):
        raise ValueError("heatmap entries must be finite and nonnegative")
    out = ch + eps
    out /= out.sum(axis=(1, 2, 3), keepdims=True)
    return VoxelHeatmap(vh.spec, out, normalized=True)


def _require_normalized(vh: VoxelHeatmap):
    if not vh.normalized:
        raise NotNormalized("heatmap must be normalized first")


def soft_argmax(vh: VoxelHeatmap) -> SkeletonPose:
    """Expected voxel-center coordinate of each channel."""
    _require_normalized(vh)
    pts = soft_argmax_points(vh)
    if pts.shape[0] != 17:
        raise ValueError("a skeleton needs exactly 17 channels")
    return SkeletonPose(pts)


def soft_argmax_points(vh: VoxelHeatmap) -> np.ndarray:
    """``(K, 3)`` expected coordinates for any channel count."""
    _require_normalized(vh)
    ch = vh.channels
    ox, oy, oz = vh.spec.axis_offsets()
    mx = ch.sum(axis=(2, 3)) @ ox
    my = ch.sum(axis=(1, 3)) @ oy
    mz = ch.sum(axis=(1, 2)) @ oz
    return np.column_stack([mx, my, mz]) + np.asarray(vh.spec.center)


def _check_distribution(p: np.ndarray):
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > NORM_TOL:
        raise NotNormalized("channel is not a probability distribution")


def entropy(channel) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = np.asarray(channel, dtype=float).ravel()
    _check_distribution(p)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def channel_entropies(vh: VoxelHeatmap) -> np.ndarray:
    _require_normalized(vh)
    return np.array([entropy(c) for c in vh.channels])


def person_uncertainty(vh: VoxelHeatmap) -> float:
    """Largest per-joint entropy of a person's volume."""
    return float(channel_entropies(vh).max())


# ---------------------------------------------------------------------------
# volume dump: little-endian header <4I4d> (K, X, Y, Z, cx, cy, cz, side)
# followed by K*X*Y*Z float32 values in C order

_VOLUME_HEADER = struct.Struct("<4I4d")


def dump_volume(vh: VoxelHeatmap, path) -> None:
    K = vh.num_channels
    X, Y, Z = vh.spec.resolution
    with open(path, "wb") as fh:
        fh.write(_VOLUME_HEADER.pack(K, X, Y, Z, *vh.spec.center, vh.spec.side))
        fh.write(np.ascontiguousarray(vh.channels, dtype="<f4").tobytes())


def load_volume(path, normalized: bool = False) -> VoxelHeatmap:
    with open(path, "rb") as fh:
        raw = fh.read()
    K, X, Y, Z, cx, cy, cz, side = _VOLUME_HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f4", offset=_VOLUME_HEADER.size)
    spec = VoxelGridSpec((cx, cy, cz), side, (X, Y, Z))
    return VoxelHeatmap(spec, data.reshape(K, X, Y, Z).astype(float), normalized)
