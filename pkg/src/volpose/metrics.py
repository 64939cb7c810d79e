"""Pose and detection metrics.

Pose errors are reported in millimeters.  PA-MPJPE aligns the prediction
with a full similarity transform (rotation, translation, uniform scale).
Detection AP integrates the all-point interpolated precision-recall curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from shapely.geometry import Polygon

from .errors import DegenerateConfiguration, NoValidJoints
from .geom import SimilarityTransform, SkeletonPose

MPJPE_CUTOFF_MM = 500.0
DEFAULT_BOX_SIZE = (0.8, 0.8, 1.9)
BOX_PADDING = 0.1


def _joint_pairs(pred: SkeletonPose, gt: SkeletonPose) -> tuple[np.ndarray, np.ndarray]:
    m = pred.validity & gt.validity
    if not m.any():
        raise NoValidJoints("no joint is valid in both poses")
    return pred.joints[m], gt.joints[m]


def joint_errors(pred: SkeletonPose, gt: SkeletonPose) -> np.ndarray:
    """Per-joint Euclidean errors in mm over mutually valid joints."""
    p, g = _joint_pairs(pred, gt)
    return 1000.0 * np.linalg.norm(p - g, axis=1)


def mpjpe(pred: SkeletonPose, gt: SkeletonPose, cutoff_mm: float | None = None) -> float:
    """Mean per-joint position error in millimeters.

    With ``cutoff_mm`` set, joints whose error exceeds it are left out of the
    mean (``MPJPE@500`` uses 500).  Returns NaN when the cutoff removes every
    joint.
    """
    e = joint_errors(pred, gt)
    if cutoff_mm is not None:
        e = e[e <= cutoff_mm]
        if len(e) == 0:
            return math.nan
    return float(e.mean())


def umeyama(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity transform mapping ``src`` points onto ``dst``.

    Closed form from the SVD of the cross-covariance; a reflection is
    excluded by flipping the sign of the smallest singular direction.

    Raises
    ------
    DegenerateConfiguration
        If either point set is coincident or collinear.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 3:
        raise DegenerateConfiguration("need at least three joints")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - mu_s, dst - mu_d
    var_s = (a * a).sum() / len(src)
    scale_ref = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    for pts in (a, b):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[0] <= 1e-12 * scale_ref or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateConfiguration("joints are coincident or collinear")
    cov = b.T @ a / len(src)
    U, S, Vt = np.linalg.svd(cov)
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2] = -1.0
    R = U @ np.diag(D) @ Vt
    s = float((S * D).sum() / var_s)
    return SimilarityTransform(s, R, mu_d - s * R @ mu_s)


def pa_mpjpe(pred: SkeletonPose, gt: SkeletonPose) -> float:
    """MPJPE in mm after aligning ``pred`` to ``gt`` with :func:`umeyama`."""
    p, g = _joint_pairs(pred, gt)
    t = umeyama(p, g)
    return float(1000.0 * np.linalg.norm(t.apply(p) - g, axis=1).mean())


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True)
class Box3D:
    """Upright box: ``size = (w, l, h)`` along the yawed x, y and world z.

    ``center`` is the box centroid; yaw is wrapped to ``[-pi, pi)``.
    """

    center: tuple
    size: tuple = DEFAULT_BOX_SIZE
    yaw: float = 0.0
    score: float = 1.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("center and size need three components")
        if not all(v > 0 for v in s):
            raise ValueError("box sizes must be positive")
        yaw = float((self.yaw + math.pi) % (2 * math.pi) - math.pi)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", yaw)
        object.__setattr__(self, "score", float(self.score))

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    def corners2d(self) -> np.ndarray:
        """Footprint corners, counter-clockwise, ``(4, 2)``."""
        hw, hl = self.size[0] / 2, self.size[1] / 2
        local = np.array([[-hw, -hl], [hw, -hl], [hw, hl], [-hw, hl]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return local @ np.array([[c, s], [-s, c]]) + np.array(self.center[:2])

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float) - np.array(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * p[:, 0] + s * p[:, 1]
        y = -s * p[:, 0] + c * p[:, 1]
        return ((np.abs(x) <= self.size[0] / 2) & (np.abs(y) <= self.size[1] / 2)
                & (np.abs(p[:, 2]) <= self.size[2] / 2))

    def to_json(self) -> dict:
        return {"center": list(self.center), "size": list(self.size), "yaw": self.yaw,
                "score": self.score}

    @classmethod
    def from_json(cls, d: dict) -> "Box3D":
        return cls(tuple(d["center"]), tuple(d["size"]), d.get("yaw", 0.0), d.get("score", 1.0))


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volume intersection over union of two upright yawed boxes."""
    zlo = max(a.center[2] - a.size[2] / 2, b.center[2] - b.size[2] / 2)
    zhi = min(a.center[2] + a.size[2] / 2, b.center[2] + b.size[2] / 2)
    dz = max(zhi - zlo, 0.0)
    if dz == 0.0:
        return 0.0
    area = Polygon(a.corners2d()).intersection(Polygon(b.corners2d())).area
    inter = area * dz
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))


def box_from_pose(pose: SkeletonPose, padding: float = BOX_PADDING, constant_size=None,
                  score: float = 1.0) -> Box3D:
    """Axis-aligned box around the valid joints, padded on every side.

    With ``constant_size`` the box keeps that size, centered on the footprint
    center of the joints and resting on the lowest joint minus the padding.
    """
    j = pose.joints[pose.validity]
    if len(j) == 0:
        raise NoValidJoints("pose has no valid joint")
    lo, hi = j.min(axis=0) - padding, j.max(axis=0) + padding
    if constant_size is None:
        return Box3D(tuple((lo + hi) / 2), tuple(hi - lo), 0.0, score)
    size = tuple(float(v) for v in constant_size)
    center = ((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, lo[2] + size[2] / 2)
    return Box3D(center, size, 0.0, score)


# ---------------------------------------------------------------------------
# average precision


def match_detections(detections: Sequence[Box3D], gts: Sequence[Box3D],
                     iou_threshold: float) -> np.ndarray:
    """Greedy matching in descending score order.

    Each detection takes the unmatched ground truth of highest IoU if that
    IoU reaches the threshold.  Returns the true-positive flags in the sorted
    order (ties in score keep input order).
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    taken = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    for r, i in enumerate(order):
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou3d(detections[i], g)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= iou_threshold:
            taken[best_j] = True
            tp[r] = True
    return tp


def ap_from_flags(tp: np.ndarray, scores: np.ndarray, num_gt: int) -> float:
    """All-point interpolated AP from true-positive flags.

    ``tp`` and ``scores`` may come from several frames; they are sorted here
    by descending score (stable).
    """
    if num_gt == 0 or len(tp) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    tp = np.asarray(tp, dtype=float)[order]
    ctp = np.cumsum(tp)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[0.0], precision])
    # precision envelope: best precision at any recall to the right
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def average_precision(detections: Sequence[Box3D], gts: Sequence[Box3D],
                      iou_threshold: float = 0.5) -> float:
    """All-point interpolated average precision of one frame."""
    tp = match_detections(detections, gts, iou_threshold)
    scores = sorted((d.score for d in detections), reverse=True)
    return ap_from_flags(tp, np.array(scores), len(gts))


def average_precision_frames(frames: Sequence[tuple[Sequence[Box3D], Sequence[Box3D]]],
                             iou_threshold: float = 0.5) -> float:
    """AP pooled over frames: matching per frame, one PR curve overall."""
    flags, scores, num_gt = [], [], 0
    for dets, gts in frames:
        tp = match_detections(dets, gts, iou_threshold)
        flags.extend(tp)
        scores.extend(sorted((d.score for d in dets), reverse=True))
        num_gt += len(gts)
    return ap_from_flags(np.array(flags, dtype=bool), np.array(scores), num_gt)
