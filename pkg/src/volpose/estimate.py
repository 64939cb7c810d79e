"""Non-learned single-person 3D pose estimators.

* :func:`fuse_estimate` back-projects per-view 2D heatmaps into a voxel
  volume, optionally gated by LiDAR occupancy, and reads the pose off with a
  soft-argmax.
* :func:`dlt_triangulate` is the linear multi-view baseline working on 2D
  heatmap peaks.
* :func:`filter_pseudo_labels` keeps the estimates confident enough to act
  as pseudo labels.
* :func:`refine_pose` descends the reprojection plus prior energy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import losses, voxel
from .errors import EmptyCloud, NonFiniteObjective, NoViews
from .geom import NUM_JOINTS, CameraModel, SkeletonPose
from .lidar import PointCloud
from .losses import BoneSpec, LossContext, LossWeights


class UnderconstrainedWarning(UserWarning):
    """The refinement energy does not pin down every degree of freedom."""


@dataclass(frozen=True)
class PersonEstimate:
    """One person's fused prediction.

    ``heatmap`` is the normalized volume the pose was read from; it is
    ``None`` for estimates loaded back from JSON.
    """

    pose: SkeletonPose
    uncertainty: float
    person_id: int = 0
    heatmap: voxel.VoxelHeatmap | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_heatmap(cls, heatmap: voxel.VoxelHeatmap, person_id: int = 0) -> "PersonEstimate":
        return cls(voxel.soft_argmax(heatmap), voxel.person_uncertainty(heatmap),
                   person_id, heatmap)

    def to_json(self) -> dict:
        return {
            "person_id": int(self.person_id),
            "joints": self.pose.joints.tolist(),
            "validity": [bool(v) for v in self.pose.validity],
            "uncertainty_nats": float(self.uncertainty),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PersonEstimate":
        pose = SkeletonPose(np.asarray(d["joints"], dtype=float), d.get("validity"))
        return cls(pose, float(d["uncertainty_nats"]), int(d["person_id"]))


# ---------------------------------------------------------------------------
# volumetric fusion


@dataclass(frozen=True)
class FuseParams:
    """Settings of the fusion estimator.

    Attributes
    ----------
    side, resolution : grid cube side in meters and voxels per axis.
    gate : blend ``g`` of the occupancy gate; 0 disables it.
    dilation : radius in voxels of the ball dilating the occupancy.
    threshold, power : arguments of :func:`volpose.voxel.sharpen`.
    eps : floor added before normalization.
    fit_margin : when not ``None``, the centroid-centered grid is shifted
        along any axis where the cloud would otherwise stick out, so that
        the cloud plus this margin (meters) lies inside whenever it fits.
    """

    side: float = 2.0
    resolution: int = 64
    gate: float = 0.8
    dilation: int = 3
    threshold: float = 0.6
    power: float = 2.0
    eps: float = voxel.DEFAULT_EPS
    fit_margin: float | None = 0.1

    def __post_init__(self):
        if not 0.0 <= self.gate <= 1.0:
            raise ValueError("gate must lie in [0, 1]")
        if self.dilation < 0:
            raise ValueError("dilation radius must be nonnegative")

    def to_json(self) -> dict:
        return dict(self.__dict__)


def ball(radius: int) -> np.ndarray:
    """Boolean ball structuring element of the given voxel radius."""
    r = int(radius)
    g = np.arange(-r, r + 1)
    xx, yy, zz = np.meshgrid(g, g, g, indexing="ij")
    return xx**2 + yy**2 + zz**2 <= r * r


def dilate(occ: voxel.OccupancyGrid, radius: int) -> np.ndarray:
    """Occupancy grown by a ball of ``radius`` voxels, as a bool array."""
    vals = occ.values.astype(bool)
    if radius == 0 or not vals.any():
        return vals
    return ndimage.binary_dilation(vals, structure=ball(radius))


def grid_center(points: np.ndarray, side: float, margin: float | None) -> np.ndarray:
    """Cloud centroid, moved just enough to keep the padded cloud inside a
    cube of the given side where possible."""
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    if margin is None:
        return c
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    half = side / 2.0
    fits = hi - lo <= side
    shifted = np.clip(c, hi - half, lo + half)
    return np.where(fits, shifted, c)


def raw_volume(heatmaps2d: Sequence, cameras: Sequence[CameraModel],
               spec: voxel.VoxelGridSpec, params: FuseParams = FuseParams()) -> voxel.VoxelHeatmap:
    """Back-projected and sharpened, not yet normalized."""
    if not cameras:
        raise NoViews("no camera views given")
    raw = voxel.backproject(heatmaps2d, cameras, spec)
    return voxel.sharpen(raw, params.threshold, params.power)


def rgb_path(heatmaps2d: Sequence, cameras: Sequence[CameraModel], spec: voxel.VoxelGridSpec,
             params: FuseParams = FuseParams(), person_id: int = 0) -> PersonEstimate:
    """Heatmap-only estimate: back-project, sharpen, normalize, soft-argmax."""
    vol = voxel.normalize(raw_volume(heatmaps2d, cameras, spec, params), params.eps)
    return PersonEstimate.from_heatmap(vol, person_id)


def fuse_estimate(heatmaps2d: Sequence, cameras: Sequence[CameraModel],
                  cloud: PointCloud | None, params: FuseParams = FuseParams(),
                  person_id: int = 0, fallback_center=None) -> PersonEstimate:
    """Estimate one person from 2D heatmaps and the person's point cloud.

    The grid is centered on the cloud centroid, nudged by
    :func:`grid_center` so the whole cloud fits, or on ``fallback_center``
    when the cloud is empty.  Each sharpened channel is multiplied by
    ``g * occupancy + (1 - g)`` where the occupancy is dilated by
    ``params.dilation`` voxels.  With ``g = 0`` the result equals
    :func:`rgb_path` bit for bit.

    Raises
    ------
    NoViews
        If no view is given, or only one view without a cloud.
    EmptyCloud
        If the cloud is empty and no fallback center is given.
    """
    n_views = len(cameras)
    has_cloud = cloud is not None and len(cloud) > 0
    if n_views == 0 or (n_views == 1 and not has_cloud):
        raise NoViews("need two views, or one view and a nonempty cloud")
    if not has_cloud and fallback_center is None:
        raise EmptyCloud("empty cloud and no fallback center")
    if has_cloud:
        center = grid_center(cloud.points, params.side, params.fit_margin)
    else:
        center = fallback_center
    spec, occ = voxel.grid_from_cloud(cloud if has_cloud else None, params.side,
                                      params.resolution, center)
    if params.gate == 0.0:
        return rgb_path(heatmaps2d, cameras, spec, params, person_id)
    vol = raw_volume(heatmaps2d, cameras, spec, params)
    weight = np.where(dilate(occ, params.dilation), 1.0, 1.0 - params.gate)
    gated = voxel.VoxelHeatmap(spec, vol.channels * weight[None])
    return PersonEstimate.from_heatmap(voxel.normalize(gated, params.eps), person_id)


# ---------------------------------------------------------------------------
# 2D peaks and DLT


def _refine_1d(lm: float, l0: float, lp: float) -> float:
    den = lm - 2.0 * l0 + lp
    if not den < 0:
        return 0.0
    return float(np.clip(0.5 * (lm - lp) / den, -0.5, 0.5))


def heatmap_peaks(view) -> tuple[np.ndarray, np.ndarray]:
    """Argmax of every channel refined by a 3x3 quadratic fit.

    The parabola is fitted to the log of the values around the maximum, which
    is exact for a Gaussian blob; it falls back to the raw values when a
    neighbor is zero.  ``view`` is a ``(K, H, W)`` array or a heatmap window.

    Returns
    -------
    peaks : (K, 2) array
        Pixel positions, NaN for empty channels.
    conf : (K,) array
        Heatmap value at the integer maximum.
    """
    data, x0, y0, _, _ = voxel._view_arrays(view)
    K = data.shape[0]
    peaks = np.full((K, 2), np.nan)
    conf = np.zeros(K)
    if data.size == 0:
        return peaks, conf
    h, w = data.shape[1:]
    for k in range(K):
        ch = data[k]
        i = int(np.argmax(ch))
        r, c = divmod(i, w)
        top = float(ch[r, c])
        if not top > 0:
            continue
        conf[k] = top
        offs = []
        for lo, mid, hi in (
            (ch[r, c - 1] if c > 0 else 0.0, top, ch[r, c + 1] if c < w - 1 else 0.0),
            (ch[r - 1, c] if r > 0 else 0.0, top, ch[r + 1, c] if r < h - 1 else 0.0),
        ):
            if lo > 0 and hi > 0:
                offs.append(_refine_1d(math.log(lo), math.log(mid), math.log(hi)))
            else:
                offs.append(_refine_1d(float(lo), float(mid), float(hi)))
        peaks[k] = (x0 + c + offs[0], y0 + r + offs[1])
    return peaks, conf


def triangulate_point(points2d: np.ndarray, cameras: Sequence[CameraModel]) -> np.ndarray:
    """Linear triangulation of one point seen in two or more views.

    Each view contributes the rows ``u P[2] - P[0]`` and ``v P[2] - P[1]``,
    scaled to unit norm; the point is the right singular vector of the
    smallest singular value.
    """
    rows = []
    for (u, v), cam in zip(points2d, cameras):
        P = cam.projection_matrix
        for r in (u * P[2] - P[0], v * P[2] - P[1]):
            rows.append(r / np.linalg.norm(r))
    A = np.asarray(rows)
    _, _, Vt = np.linalg.svd(A)
    X = Vt[-1]
    return X[:3] / X[3]


def dlt_triangulate(peaks2d, cameras: Sequence[CameraModel], confidences=None,
                    min_confidence: float = 0.0) -> SkeletonPose:
    """Triangulate every joint independently.

    Parameters
    ----------
    peaks2d : (V, 17, 2) array
        Pixel positions per view; NaN marks a missing observation.
    confidences : (V, 17) array, optional
        A view only counts for a joint when its confidence exceeds
        ``min_confidence``.

    Joints with fewer than two usable views are returned at the origin and
    flagged invalid.
    """
    peaks2d = np.asarray(peaks2d, dtype=float)
    if peaks2d.ndim != 3 or peaks2d.shape[1:] != (NUM_JOINTS, 2) or len(cameras) != len(peaks2d):
        raise ValueError("peaks2d must be (V, 17, 2) with one camera per view")
    use = np.all(np.isfinite(peaks2d), axis=-1)
    if confidences is not None:
        use &= np.asarray(confidences, dtype=float) > min_confidence
    joints = np.zeros((NUM_JOINTS, 3))
    valid = np.zeros(NUM_JOINTS, dtype=bool)
    for k in range(NUM_JOINTS):
        views = np.flatnonzero(use[:, k])
        if len(views) < 2:
            continue
        X = triangulate_point(peaks2d[views, k], [cameras[v] for v in views])
        if np.all(np.isfinite(X)):
            joints[k] = X
            valid[k] = True
    return SkeletonPose(joints, valid)


# ---------------------------------------------------------------------------
# pseudo-label filter


def filter_pseudo_labels(estimates: Sequence[PersonEstimate], lam: float) -> list[PersonEstimate]:
    """Keep the estimates whose uncertainty is strictly below ``lam``."""
    return [e for e in estimates if e.uncertainty < lam]


# ---------------------------------------------------------------------------
# refinement


@dataclass(frozen=True)
class RefineSettings:
    """Descent constants.

    ``max_step`` caps the first trial move of any joint (meters); the step
    shrinks by ``shrink`` until the Armijo condition with ``armijo`` holds,
    at most ``max_backtracks`` times.  ``damping`` regularizes the
    reweighted curvature and ``irls_floor`` bounds its weights.
    """

    iterations: int = 50
    max_step: float = 0.1
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40
    damping: float = 1e-6
    irls_floor: float = 1e-9
    tol: float = 1e-15


@dataclass(frozen=True)
class RefineResult:
    pose: SkeletonPose
    objective: float
    initial_objective: float
    history: tuple
    iterations: int


def _objective(X, mask, ctx):
    return losses._core("unsup", X, mask, ctx)[0]


def _curvature(X: np.ndarray, mask: np.ndarray, ctx: LossContext,
               s: RefineSettings) -> np.ndarray:
    """Reweighted Gauss-Newton matrix of the energy (51 x 51).

    Every norm ``|r|`` is treated as ``|r|^2 / (2 |r_0|)`` around the current
    point, which turns the L1 and pixel-distance terms into least squares.
    """
    w = ctx.weights
    H = np.zeros((NUM_JOINTS * 3, NUM_JOINTS * 3))
    if w.w2d > 0 and ctx.pseudo2d is not None:
        p2d, vis = losses._as_views(ctx.pseudo2d, ctx.cameras, ctx.visibility)
        for v, cam in enumerate(ctx.cameras):
            K, R = cam.intrinsics, cam.rotation
            pc = X @ R.T + cam.translation
            for k in np.flatnonzero(vis[v] & mask):
                den = K[2] @ pc[k]
                if den <= 1e-9 or pc[k, 2] <= 1e-9:
                    continue
                uv = (K @ pc[k])[:2] / den
                J = (K[:2] - np.outer(uv, K[2])) / den @ R
                n = max(float(np.linalg.norm(uv - p2d[v, k])), s.irls_floor)
                H[3 * k:3 * k + 3, 3 * k:3 * k + 3] += w.w2d * (J.T @ J) / n
    if w.wprior > 0 and w.gamma[1] > 0:
        E = losses._extend(X)
        m = losses._extend_mask(mask)
        bones = {i: (a, b, v, n) for i, a, b, v, n in losses._bone_vectors(E, ctx.bones, m)}
        for i, j in ctx.bones.symmetric_pairs:
            if i not in bones or j not in bones:
                continue
            ai, bi, vi, ni = bones[i]
            aj, bj, vj, nj = bones[j]
            if ni < 1e-12 or nj < 1e-12:
                continue
            g = np.zeros_like(E)
            g[bi] += vi / ni
            g[ai] -= vi / ni
            g[bj] -= vj / nj
            g[aj] += vj / nj
            g = losses._fold_extended(g).ravel()
            H += w.wprior * w.gamma[1] * np.outer(g, g) / max(abs(ni - nj), s.irls_floor)
    if ctx.target is not None and w.w3d > 0 and ctx.uncertainty < w.lam:
        d = np.abs(X - ctx.target.joints).ravel()
        on = np.repeat(mask & ctx.target.validity, 3)
        H[np.diag_indices_from(H)] += np.where(on, w.w3d / np.maximum(d, s.irls_floor), 0.0)
    return H


def refine(init: SkeletonPose, pseudo2d, cameras: Sequence[CameraModel],
           weights: LossWeights = LossWeights(), settings: RefineSettings = RefineSettings(),
           visibility=None, pseudo3d: SkeletonPose | None = None, uncertainty: float = 0.0,
           bones: BoneSpec = BoneSpec(), angle_mode: str = "corrected") -> RefineResult:
    """Minimize ``w2d * L_2D + wprior * L_prior`` (plus the gated 3D term when
    ``pseudo3d`` is given) starting from ``init``.

    Each iteration solves the damped reweighted Gauss-Newton system for a
    direction, scales it so no joint moves more than ``max_step`` and
    backtracks until the Armijo condition holds.  The best pose seen is
    returned, so the objective never exceeds the initial one.

    Raises
    ------
    NonFiniteObjective
        If the objective at ``init`` is NaN or infinite.
    """
    ctx = LossContext(pseudo2d, cameras, visibility, pseudo3d, uncertainty, weights, bones,
                      angle_mode)
    if weights.wprior == 0 and len(cameras) == 1:
        warnings.warn("one view and no prior: depth along the rays is unconstrained",
                      UnderconstrainedWarning, stacklevel=2)
    mask = init.validity
    X = init.joints.copy()
    f = _objective(X, mask, ctx)
    if not math.isfinite(f):
        raise NonFiniteObjective(f"objective at the initial pose is {f}")
    f0 = f
    history = [f]
    it = 0
    for it in range(1, settings.iterations + 1):
        if f <= settings.tol:
            break
        # a zero subgradient at exact kinks keeps every iteration cheap
        _, g, _ = losses._core("unsup", X, mask, ctx)
        g = np.where(mask[:, None], g, 0.0)
        H = _curvature(X, mask, ctx, settings)
        H[np.diag_indices_from(H)] += settings.damping
        try:
            d = -np.linalg.solve(H, g.ravel()).reshape(X.shape)
        except np.linalg.LinAlgError:
            d = -g
        slope = float((g * d).sum())
        if not slope < 0:
            d, slope = -g, -float((g * g).sum())
        if slope == 0:
            break
        longest = float(np.linalg.norm(d, axis=1).max())
        alpha = min(1.0, settings.max_step / longest) if longest > 0 else 1.0
        accepted = False
        for _ in range(settings.max_backtracks):
            Y = X + alpha * d
            fy = _objective(Y, mask, ctx)
            if math.isfinite(fy) and fy <= f + settings.armijo * alpha * slope:
                accepted = True
                break
            alpha *= settings.shrink
        if not accepted:
            break
        X, f = Y, fy
        history.append(f)
    pose = init.with_joints(X)
    return RefineResult(pose, f, f0, tuple(history), it)


def refine_pose(init: SkeletonPose, pseudo2d, cameras: Sequence[CameraModel],
                weights: LossWeights = LossWeights(), iterations: int = 50,
                settings: RefineSettings | None = None, **kwargs) -> SkeletonPose:
    """Pose-only wrapper of :func:`refine`."""
    settings = settings or RefineSettings(iterations=iterations)
    return refine(init, pseudo2d, cameras, weights, settings, **kwargs).pose
