"""Glue between the simulator and the estimators, shared by the CLI and the
experiments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import estimate, lidar, synth
from .geom import CameraModel, SkeletonPose
from .lidar import PointCloud

SEGMENT_RADIUS = 1.0


@dataclass
class PersonSample:
    """Everything the estimators see of one simulated person."""

    pose: SkeletonPose
    heatmaps: list          # one HeatmapWindow per sensor
    joints2d: np.ndarray    # (V, 17, 2)
    visible: np.ndarray     # (V, 17)
    cloud: PointCloud | None


def simulate_person(pose: SkeletonPose, sensors: Sequence[synth.Sensor], sigma: float = 3.0,
                    noise: synth.HeatmapNoise = synth.HeatmapNoise(), seed=0,
                    with_cloud: bool = True,
                    visibility_threshold: float = 0.15) -> PersonSample:
    """Render one person alone in the rig and scan it with every sensor.

    ``seed`` may be an int or a sequence; view ``i`` draws its noise from
    ``default_rng([*seed, i])``.
    """
    base = list(np.atleast_1d(seed).tolist())
    body = [synth.AvatarBody(pose)]
    maps, uvs, viss, clouds = [], [], [], []
    for i, s in enumerate(sensors):
        depth = synth.render_depth(body, s.camera)
        uv, vis = synth.joint_visibility(pose, s.camera, depth, visibility_threshold)
        rng = np.random.default_rng(base + [i])
        maps.append(synth.synth_heatmaps(uv, vis, s.camera, sigma, noise, rng))
        uvs.append(uv)
        viss.append(vis)
        if with_cloud and s.scan is not None:
            clouds.append(lidar.scan(depth, s.camera, lidar.pattern(s.scan), sensor_id=s.id))
    cloud = PointCloud.merge(clouds) if with_cloud else None
    return PersonSample(pose, maps, np.array(uvs), np.array(viss), cloud)


def peaks_from_heatmaps(windows: Sequence, min_confidence: float = 0.1
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Refined 2D peaks ``(V, 17, 2)`` and confidences ``(V, 17)``.

    Peaks whose confidence does not exceed ``min_confidence`` are NaN.
    """
    peaks, conf = [], []
    for w in windows:
        p, c = estimate.heatmap_peaks(w)
        p = np.where((c > min_confidence)[:, None], p, np.nan)
        peaks.append(p)
        conf.append(c)
    return np.array(peaks), np.array(conf)


def person_center(windows: Sequence, cameras: Sequence[CameraModel],
                  min_confidence: float = 0.1) -> np.ndarray | None:
    """Mean of the DLT-triangulated joints, or ``None`` if no joint has two
    views."""
    peaks, conf = peaks_from_heatmaps(windows, min_confidence)
    pose = estimate.dlt_triangulate(peaks, cameras)
    if not pose.validity.any():
        return None
    return pose.joints[pose.validity].mean(axis=0)


def segment_cloud(cloud: PointCloud, centers: Sequence[np.ndarray | None],
                  radius: float = SEGMENT_RADIUS) -> list[PointCloud]:
    """Split a scene cloud among persons.

    A point goes to the person whose center is nearest in the ground plane,
    provided it lies within ``radius``.  Persons without a center get an
    empty cloud.
    """
    pts = cloud.points
    known = [i for i, c in enumerate(centers) if c is not None]
    out = [PointCloud(np.zeros((0, 3))) for _ in centers]
    if not known or len(pts) == 0:
        return out
    C = np.array([centers[i][:2] for i in known])
    d = np.linalg.norm(pts[:, None, :2] - C[None], axis=2)
    nearest = d.argmin(axis=1)
    close = d[np.arange(len(pts)), nearest] <= radius
    for j, i in enumerate(known):
        out[i] = PointCloud(pts[close & (nearest == j)])
    return out


def estimate_person(windows: Sequence, cameras: Sequence[CameraModel], cloud: PointCloud | None,
                    params: estimate.FuseParams = estimate.FuseParams(), person_id: int = 0,
                    center=None) -> estimate.PersonEstimate:
    """Fusion estimate falling back to a triangulated grid center when the
    cloud is empty."""
    if center is None and (cloud is None or len(cloud) == 0):
        center = person_center(windows, cameras)
        if center is None:
            center = np.zeros(3)
    return estimate.fuse_estimate(windows, cameras, cloud, params, person_id, center)
