"""LiDAR scan simulation over rendered depth maps.

A scan pattern is a list of pixel positions; :func:`scan` looks each one up
in a range image and back-projects the hits into world-frame points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownKind
from .geom import CameraModel, cast_ray

# angular increment per sample and petal frequency of the Livox rose curve
ROSE_STEP = 0.0017
ROSE_K = 3.825
SAMPLES_PER_SECOND = 1e5

KINDS = ("rose", "rose-trisection", "horizontal-lines", "random")


@dataclass(frozen=True)
class ScanPatternParams:
    """Parameters of one simulated scanning pattern.

    ``radius`` and ``centers`` are in pixels, ``theta0`` in radians and
    ``duration`` in seconds.  ``centers`` defaults to the image center for
    ``rose`` and to the trisection layout for ``rose-trisection``.
    ``lines`` and ``samples`` only apply to the non-rose kinds; ``samples``
    is the total sample count (0 means the rose-equivalent count
    ``floor(duration * 1e5) + 1``).
    """

    kind: str = "rose"
    radius: float = 100.0
    theta0: float = 0.0
    duration: float = 0.1
    width: int = 640
    height: int = 480
    centers: tuple = ()
    lines: int = 16
    samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown scan kind {self.kind!r}; expected one of {KINDS}")
        if not self.radius > 0:
            raise ValueError("scan radius must be positive")
        if not self.duration > 0:
            raise ValueError("scan duration must be positive")
        centers = tuple(tuple(float(c) for c in ctr) for ctr in self.centers)
        for cx, cy in centers:
            if not (0 <= cx <= self.width - 1 and 0 <= cy <= self.height - 1):
                raise ValueError(f"scan center ({cx}, {cy}) outside the image")
        object.__setattr__(self, "centers", centers)

    @property
    def sample_count(self) -> int:
        return int(math.floor(self.duration * SAMPLES_PER_SECOND + 1e-9)) + 1

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "radius": self.radius, "theta0": self.theta0,
            "duration": self.duration, "width": self.width, "height": self.height,
            "centers": [list(c) for c in self.centers], "lines": self.lines,
            "samples": self.samples, "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ScanPatternParams":
        d = dict(d)
        d["centers"] = tuple(tuple(c) for c in d.get("centers", ()))
        return cls(**d)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    sensor_ids: tuple = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.sensor_ids is not None:
            ids = tuple(self.sensor_ids)
            if len(ids) != len(pts):
                raise ValueError("one sensor id per point")
            object.__setattr__(self, "sensor_ids", ids)

    def __len__(self) -> int:
        return len(self.points)

    @staticmethod
    def merge(clouds) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        pts = np.vstack([c.points for c in clouds])
        if all(c.sensor_ids is not None for c in clouds):
            ids = tuple(i for c in clouds for i in c.sensor_ids)
        else:
            ids = None
        return PointCloud(pts, ids)


def _image_center(params: ScanPatternParams) -> tuple[float, float]:
    return ((params.width - 1) / 2.0, (params.height - 1) / 2.0)


def rose_pattern(params: ScanPatternParams, center=None) -> np.ndarray:
    """Sample the rose curve ``r = radius * cos(3.825 * theta)``.

    ``theta_n = theta0 + 0.0017 * n`` for every integer ``0 <= n <=
    duration * 1e5``; negative radii reflect through the center.  Returns an
    ``(N, 2)`` array of pixel positions.
    """
    if center is None:
        center = params.centers[0] if params.centers else _image_center(params)
    n = np.arange(params.sample_count, dtype=float)
    theta = params.theta0 + ROSE_STEP * n
    r = params.radius * np.cos(ROSE_K * theta)
    return np.column_stack([center[0] + r * np.cos(theta), center[1] + r * np.sin(theta)])


def trisection_centers(width: int, height: int) -> tuple:
    """Centers at one third, one half and two thirds of the width, all on the
    middle row."""
    cy = height / 2.0
    return ((width / 3.0, cy), (width / 2.0, cy), (2.0 * width / 3.0, cy))


def _requested(params: ScanPatternParams) -> int:
    return params.samples if params.samples > 0 else params.sample_count


def horizontal_line_rows(height: int, lines: int) -> np.ndarray:
    """Row coordinates ``(i + 1) * height / (lines + 1) - 0.5``, i < lines.

    The rows split the image extent ``[-0.5, height - 0.5]`` into
    ``lines + 1`` equal gaps.
    """
    return np.arange(1, lines + 1) * height / (lines + 1.0) - 0.5


def pattern(params: ScanPatternParams) -> np.ndarray:
    """Pixel positions sampled by a scan of the given kind."""
    if params.kind == "rose":
        return rose_pattern(params)
    if params.kind == "rose-trisection":
        centers = params.centers or trisection_centers(params.width, params.height)
        return np.vstack([rose_pattern(params, c) for c in centers])
    if params.kind == "horizontal-lines":
        if params.lines < 1:
            raise ValueError("need at least one scan line")
        total = _requested(params)
        rows = horizontal_line_rows(params.height, params.lines)
        per_line = int(math.ceil(total / params.lines))
        cols = np.linspace(0.0, params.width - 1.0, per_line)
        uv = np.column_stack([np.tile(cols, params.lines), np.repeat(rows, per_line)])
        return uv[:total]
    if params.kind == "random":
        rng = np.random.default_rng(params.seed)
        total = _requested(params)
        return np.column_stack([rng.uniform(-0.5, params.width - 0.5, total),
                                rng.uniform(-0.5, params.height - 0.5, total)])
    raise UnknownKind(params.kind)


@dataclass
class ScanStats:
    sampled: int = 0
    out_of_bounds: int = 0
    no_hit: int = 0


def scan(depth: np.ndarray, camera: CameraModel, points2d: np.ndarray,
         stats: ScanStats | None = None, sensor_id: str | None = None) -> PointCloud:
    """Back-project the pattern pixels that hit a surface.

    Depth is read at the nearest pixel.  Out-of-bounds pattern pixels are
    skipped and counted in ``stats``; infinite depth means no return.
    """
    depth = np.asarray(depth)
    h, w = depth.shape
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    cols = np.rint(uv[:, 0]).astype(np.int64)
    rows = np.rint(uv[:, 1]).astype(np.int64)
    inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    d = np.full(len(uv), np.inf)
    d[inside] = depth[rows[inside], cols[inside]]
    hit = inside & np.isfinite(d)
    if stats is not None:
        stats.sampled += len(uv)
        stats.out_of_bounds += int((~inside).sum())
        stats.no_hit += int((inside & ~np.isfinite(d)).sum())
    if not hit.any():
        return PointCloud(np.zeros((0, 3)), () if sensor_id is not None else None)
    pix = np.column_stack([cols[hit], rows[hit]]).astype(float)
    origin, dirs = cast_ray(camera, pix)
    pts = origin + d[hit, None] * dirs
    ids = (sensor_id,) * len(pts) if sensor_id is not None else None
    return PointCloud(pts, ids)
