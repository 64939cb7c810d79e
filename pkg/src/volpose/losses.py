"""Supervised, pseudo-label and human-prior losses with gradients.

Every loss is a pure function of a :class:`~volpose.geom.SkeletonPose`.
Gradients are taken with respect to the 17 stored joints (shape ``(17, 3)``);
the derived neck and midhip joints pass their gradient back to the shoulders
and hips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateFrame, NoValidJoints, NoVisibleJoints
from .geom import DEPTH_EPS, JOINT_INDEX, MIDHIP, NECK, NUM_JOINTS, CameraModel, SkeletonPose

FD_STEP = 1e-5
KINK_TOL = 1e-7

_J = JOINT_INDEX

# (parent, child) pairs over the 19-joint extended skeleton
DEFAULT_BONES = (
    (_J["nose"], _J["left_eye"]),
    (_J["nose"], _J["right_eye"]),
    (_J["left_eye"], _J["left_ear"]),
    (_J["right_eye"], _J["right_ear"]),
    (NECK, _J["left_shoulder"]),
    (NECK, _J["right_shoulder"]),
    (_J["left_shoulder"], _J["left_elbow"]),
    (_J["right_shoulder"], _J["right_elbow"]),
    (_J["left_elbow"], _J["left_wrist"]),
    (_J["right_elbow"], _J["right_wrist"]),
    (MIDHIP, _J["left_hip"]),
    (MIDHIP, _J["right_hip"]),
    (_J["left_hip"], _J["left_knee"]),
    (_J["right_hip"], _J["right_knee"]),
    (_J["left_knee"], _J["left_ankle"]),
    (_J["right_knee"], _J["right_ankle"]),
    (NECK, _J["nose"]),
    (NECK, MIDHIP),
)
# indices into DEFAULT_BONES: eyes, ears, shoulders, upper arms, forearms,
# hips, thighs, shins
DEFAULT_SYMMETRIC_PAIRS = tuple((2 * i, 2 * i + 1) for i in range(8))


@dataclass(frozen=True)
class BoneSpec:
    bones: tuple = DEFAULT_BONES
    symmetric_pairs: tuple = DEFAULT_SYMMETRIC_PAIRS
    l_min: float = 0.05
    l_max: float = 0.7

    def __post_init__(self):
        n_ext = NUM_JOINTS + 2
        for a, b in self.bones:
            if not (0 <= a < n_ext and 0 <= b < n_ext) or a == b:
                raise ValueError(f"invalid bone ({a}, {b})")
        for i, j in self.symmetric_pairs:
            if not (0 <= i < len(self.bones) and 0 <= j < len(self.bones)):
                raise ValueError(f"symmetric pair ({i}, {j}) references a missing bone")
        if not 0 < self.l_min < self.l_max:
            raise ValueError("need 0 < l_min < l_max")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the unsupervised objective and the prior sub-terms.

    Defaults: w2d=0.02, w3d=1, wprior=10, entropy threshold 6 nats and unit
    prior sub-weights.
    """

    w2d: float = 0.02
    w3d: float = 1.0
    wprior: float = 10.0
    lam: float = 6.0
    gamma: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        vals = (self.w2d, self.w3d, self.wprior, self.lam, *self.gamma)
        if len(self.gamma) != 3 or any(not v >= 0 for v in vals):
            raise ValueError("loss weights must be nonnegative")


@dataclass
class ProjectionDiagnostics:
    """Bookkeeping filled in by :func:`l_2d`."""

    used: int = 0
    skipped_behind: int = 0
    skipped_missing: int = 0


# ---------------------------------------------------------------------------
# helpers


def _fold_extended(g19: np.ndarray) -> np.ndarray:
    """Map a gradient over the 19 extended joints back onto the 17 stored."""
    g = g19[:NUM_JOINTS].copy()
    g[5] += 0.5 * g19[NECK]
    g[6] += 0.5 * g19[NECK]
    g[11] += 0.5 * g19[MIDHIP]
    g[12] += 0.5 * g19[MIDHIP]
    return g


def _extend(X: np.ndarray) -> np.ndarray:
    return np.vstack([X, 0.5 * (X[5] + X[6]), 0.5 * (X[11] + X[12])])


def _extend_mask(m: np.ndarray) -> np.ndarray:
    return np.concatenate([m, [m[5] and m[6], m[11] and m[12]]])


def _unit_backward(u: np.ndarray, norm: float, du: np.ndarray) -> np.ndarray:
    return (du - u * (u @ du)) / norm


def _clip01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def _dclip01(x: float) -> float:
    return 1.0 if 0.0 < x < 1.0 else 0.0


def _central_difference(fn: Callable[[np.ndarray], float], X: np.ndarray,
                        h: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        xp = X.copy()
        xm = X.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2.0 * h)
    return g


# ---------------------------------------------------------------------------
# L1 pose losses


def _l1_core(X, target, mask):
    diff = X - target
    value = float(np.abs(diff[mask]).sum())
    g = np.zeros_like(X)
    g[mask] = np.sign(diff[mask])
    return value, g, False


def _joint_mask(a: SkeletonPose, b: SkeletonPose) -> np.ndarray:
    mask = a.validity & b.validity
    if not mask.any():
        raise NoValidJoints("no joint is valid in both poses")
    return mask


def l_pose(pred: SkeletonPose, gt: SkeletonPose) -> float:
    """Sum over mutually valid joints of the per-joint L1 distance."""
    return _l1_core(pred.joints, gt.joints, _joint_mask(pred, gt))[0]


def l_3d(pred: SkeletonPose, pseudo3d: SkeletonPose) -> float:
    """L1 loss against a pseudo 3D label; invalid label joints are skipped."""
    return l_pose(pred, pseudo3d)


# ---------------------------------------------------------------------------
# reprojection loss


def _as_views(pseudo2d, cameras, visibility):
    pseudo2d = np.asarray(pseudo2d, dtype=float)
    if pseudo2d.ndim == 2:
        pseudo2d = pseudo2d[None]
    if pseudo2d.shape[1:] != (NUM_JOINTS, 2) or len(cameras) != pseudo2d.shape[0]:
        raise ValueError("pseudo2d must be (V, 17, 2) with one camera per view")
    if visibility is None:
        visibility = np.ones(pseudo2d.shape[:2], dtype=bool)
    visibility = np.asarray(visibility, dtype=bool) & np.all(np.isfinite(pseudo2d), axis=-1)
    return pseudo2d, visibility


def _l2d_core(X, pseudo2d, cameras, visibility, joint_mask, diagnostics=None):
    value = 0.0
    g = np.zeros_like(X)
    kink = False
    used = 0
    behind = 0
    for v, cam in enumerate(cameras):
        K, R = cam.intrinsics, cam.rotation
        pc = X @ R.T + cam.translation
        for k in range(NUM_JOINTS):
            if not (visibility[v, k] and joint_mask[k]):
                continue
            w = K[2] @ pc[k]
            if pc[k, 2] <= DEPTH_EPS or w <= DEPTH_EPS:
                behind += 1
                continue
            uvw = K @ pc[k]
            uv = uvw[:2] / w
            r = uv - pseudo2d[v, k]
            n = math.hypot(r[0], r[1])
            value += n
            used += 1
            if n < KINK_TOL:
                kink = True
                continue
            J = (K[:2] - np.outer(uv, K[2])) / w  # d uv / d pc
            g[k] += (r / n) @ J @ R
    if diagnostics is not None:
        diagnostics.used += used
        diagnostics.skipped_behind += behind
        diagnostics.skipped_missing += int((~visibility).sum())
    return value, g, kink, used


def l_2d(pred: SkeletonPose, pseudo2d, cameras: Sequence[CameraModel], visibility=None,
         diagnostics: ProjectionDiagnostics | None = None) -> float:
    """Sum over visible (view, joint) pairs of the pixel distance between the
    projected joint and its pseudo 2D label.

    ``pseudo2d`` is ``(V, 17, 2)``; NaN entries count as not visible.  Pairs
    whose joint lies behind the camera are skipped and counted in
    ``diagnostics``.
    """
    pseudo2d, visibility = _as_views(pseudo2d, cameras, visibility)
    value, _, _, used = _l2d_core(pred.joints, pseudo2d, cameras, visibility,
                                  pred.validity, diagnostics)
    if used == 0:
        raise NoVisibleJoints("no visible joint in front of any camera")
    return value


# ---------------------------------------------------------------------------
# human prior


def _bone_vectors(E, spec, mask_ext):
    out = []
    for i, (a, b) in enumerate(spec.bones):
        if mask_ext[a] and mask_ext[b]:
            v = E[b] - E[a]
            out.append((i, a, b, v, float(np.linalg.norm(v))))
    return out


def _length_core(X, spec, mask):
    E = _extend(X)
    m = _extend_mask(mask)
    value = 0.0
    g = np.zeros_like(E)
    kink = False
    for _, a, b, v, n in _bone_vectors(E, spec, m):
        over = n - spec.l_max
        under = spec.l_min - n
        value += max(over, 0.0) + max(under, 0.0)
        if abs(over) < KINK_TOL or abs(under) < KINK_TOL or n < KINK_TOL:
            kink = True
            continue
        d = 1.0 if over > 0 else (-1.0 if under > 0 else 0.0)
        if d:
            u = v / n
            g[b] += d * u
            g[a] -= d * u
    return value, _fold_extended(g), kink


def _symm_core(X, spec, mask):
    E = _extend(X)
    m = _extend_mask(mask)
    bones = {i: (a, b, v, n) for i, a, b, v, n in _bone_vectors(E, spec, m)}
    value = 0.0
    g = np.zeros_like(E)
    for i, j in spec.symmetric_pairs:
        if i not in bones or j not in bones:
            continue
        ai, bi, vi, ni = bones[i]
        aj, bj, vj, nj = bones[j]
        diff = ni - nj
        value += abs(diff)
        s = np.sign(diff)
        if s == 0 or ni < KINK_TOL or nj < KINK_TOL:
            continue
        ui, uj = vi / ni, vj / nj
        g[bi] += s * ui
        g[ai] -= s * ui
        g[bj] -= s * uj
        g[aj] += s * uj
    return value, _fold_extended(g), False


ANGLE_MODES = ("corrected", "literal")


def _angle_core(X, mask, mode="corrected"):
    if mode not in ANGLE_MODES:
        raise ValueError(f"unknown angle mode {mode!r}")
    if not (mask[5] and mask[6] and mask[11] and mask[12]):
        raise DegenerateFrame("shoulders and hips must be valid to derive neck and midhip")
    E = _extend(X)
    g = np.zeros_like(E)
    kink = False

    va = E[MIDHIP] - E[NECK]
    vb = E[_J["left_shoulder"]] - E[NECK]
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateFrame("coincident torso joints")
    a, b = va / na, vb / nb
    f = np.cross(a, b)
    if np.linalg.norm(f) < 1e-9:
        raise DegenerateFrame("neck-midhip and neck-shoulder vectors are collinear")
    gf = np.zeros(3)

    # The printed head term penalises a nose in front of the body; the
    # corrected mode flips it.  Legs keep the printed sign in both modes.
    head_sign = -1.0 if mode == "corrected" else 1.0
    terms = [(head_sign, E[_J["nose"]] - E[NECK], _J["nose"], NECK, None)]
    for side in ("left", "right"):
        hip, knee, ankle = _J[f"{side}_hip"], _J[f"{side}_knee"], _J[f"{side}_ankle"]
        if mask[hip] and mask[knee] and mask[ankle]:
            mid = 0.5 * (E[hip] + E[ankle])
            terms.append((1.0, mid - E[knee], (hip, ankle), knee, "leg"))

    head = 0.0
    leg = 0.0
    for sign, vec, tip, base, kind in terms:
        n = np.linalg.norm(vec)
        if n < 1e-12:
            # zero-length direction (e.g. knee on the hip-ankle midpoint)
            continue
        u = vec / n
        s = sign * float(f @ u)
        c = _clip01(s)
        if kind == "leg":
            leg += c
        else:
            head += c
        if abs(s) < KINK_TOL or abs(s - 1.0) < KINK_TOL:
            kink = True
            continue
        ds = _dclip01(s) * sign
        if ds == 0.0:
            continue
        gf += ds * u
        gvec = _unit_backward(u, n, ds * f)
        if kind == "leg":
            g[tip[0]] += 0.5 * gvec
            g[tip[1]] += 0.5 * gvec
        else:
            g[tip] += gvec
        g[base] -= gvec

    ga = np.cross(b, gf)
    gb = np.cross(gf, a)
    gva = _unit_backward(a, na, ga)
    gvb = _unit_backward(b, nb, gb)
    g[MIDHIP] += gva
    g[NECK] -= gva
    g[_J["left_shoulder"]] += gvb
    g[NECK] -= gvb
    return head + leg, _fold_extended(g), kink, (head, leg)


def l_length(pose: SkeletonPose, spec: BoneSpec = BoneSpec()) -> float:
    """Penalty for bones shorter than ``l_min`` or longer than ``l_max``."""
    return _length_core(pose.joints, spec, pose.validity)[0]


def l_symm(pose: SkeletonPose, spec: BoneSpec = BoneSpec()) -> float:
    """Sum over symmetric bone pairs of the absolute length difference."""
    return _symm_core(pose.joints, spec, pose.validity)[0]


def l_angle(pose: SkeletonPose, mode: str = "corrected") -> float:
    """Head and knee bending-direction penalty.

    The body's forward direction is ``unit(neck->midhip) x
    unit(neck->left_shoulder)``.  The head term clips the dot product of the
    forward direction with ``unit(neck->nose)`` into [0, 1]; each leg term
    clips its dot product with ``unit(knee->midpoint(hip, ankle))``.

    In ``"corrected"`` mode the head dot product is negated so that a nose in
    front of the body costs nothing.  ``"literal"`` keeps the printed signs.
    """
    return _angle_core(pose.joints, pose.validity, mode)[0]


def angle_terms(pose: SkeletonPose, mode: str = "corrected") -> tuple[float, float]:
    """Return the ``(head, leg)`` parts of :func:`l_angle`."""
    return _angle_core(pose.joints, pose.validity, mode)[3]


@dataclass(frozen=True)
class PriorComponents:
    length: float
    symm: float
    angle: float


def l_prior(pose: SkeletonPose, spec: BoneSpec = BoneSpec(), gamma=(1.0, 1.0, 1.0),
            mode: str = "corrected") -> tuple[float, PriorComponents]:
    comps = PriorComponents(l_length(pose, spec), l_symm(pose, spec), l_angle(pose, mode))
    return combine_prior(comps, gamma), comps


def combine_prior(comps: PriorComponents, gamma=(1.0, 1.0, 1.0)) -> float:
    return gamma[0] * comps.length + gamma[1] * comps.symm + gamma[2] * comps.angle


# ---------------------------------------------------------------------------
# unsupervised objective


def combine_unsup(l2d: float, l3d: float | None, lprior: float, uncertainty: float,
                  weights: LossWeights = LossWeights()) -> tuple[float, bool]:
    """Weighted sum of the three terms; the 3D term only counts when a pseudo
    label exists and its uncertainty is strictly below the threshold."""
    active = l3d is not None and uncertainty < weights.lam
    total = weights.w2d * l2d + weights.wprior * lprior
    if active:
        total += weights.w3d * l3d
    return total, active


@dataclass
class LossContext:
    """Everything besides the pose that a loss may need."""

    pseudo2d: np.ndarray | None = None
    cameras: Sequence[CameraModel] = ()
    visibility: np.ndarray | None = None
    target: SkeletonPose | None = None
    uncertainty: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)
    bones: BoneSpec = field(default_factory=BoneSpec)
    angle_mode: str = "corrected"


@dataclass(frozen=True)
class LossReport:
    l_2d: float
    l_3d: float | None
    prior: PriorComponents
    l_prior: float
    l_unsup: float
    indicator_active: bool

    def to_json(self) -> dict:
        return {
            "l_2d": self.l_2d,
            "l_3d": self.l_3d,
            "l_prior": {"length": self.prior.length, "symm": self.prior.symm,
                        "angle": self.prior.angle, "total": self.l_prior},
            "l_unsup": self.l_unsup,
            "indicator_active": self.indicator_active,
        }


def loss_report(pred: SkeletonPose, ctx: LossContext) -> LossReport:
    l2d = l_2d(pred, ctx.pseudo2d, ctx.cameras, ctx.visibility)
    l3d = l_3d(pred, ctx.target) if ctx.target is not None else None
    lprior, comps = l_prior(pred, ctx.bones, ctx.weights.gamma, ctx.angle_mode)
    total, active = combine_unsup(l2d, l3d, lprior, ctx.uncertainty, ctx.weights)
    return LossReport(l2d, l3d, comps, lprior, total, active)


def l_unsup(pred: SkeletonPose, pseudo2d, cameras, pseudo3d: SkeletonPose | None,
            uncertainty: float, weights: LossWeights = LossWeights(), visibility=None,
            bones: BoneSpec = BoneSpec(), angle_mode: str = "corrected") -> float:
    ctx = LossContext(pseudo2d, cameras, visibility, pseudo3d, uncertainty, weights, bones,
                      angle_mode)
    return loss_report(pred, ctx).l_unsup


# ---------------------------------------------------------------------------
# gradients

LOSS_IDS = ("pose", "3d", "2d", "length", "symm", "angle", "prior", "unsup")


def _core(loss_id: str, X: np.ndarray, mask: np.ndarray, ctx: LossContext):
    """Return ``(value, analytic gradient, at_kink)`` for one loss."""
    if loss_id in ("pose", "3d"):
        if ctx.target is None:
            raise ValueError(f"loss {loss_id!r} needs ctx.target")
        m = mask & ctx.target.validity
        if not m.any():
            raise NoValidJoints("no joint is valid in both poses")
        return _l1_core(X, ctx.target.joints, m)
    if loss_id == "2d":
        p2d, vis = _as_views(ctx.pseudo2d, ctx.cameras, ctx.visibility)
        value, g, kink, _ = _l2d_core(X, p2d, ctx.cameras, vis, mask)
        return value, g, kink
    if loss_id == "length":
        return _length_core(X, ctx.bones, mask)
    if loss_id == "symm":
        return _symm_core(X, ctx.bones, mask)
    if loss_id == "angle":
        return _angle_core(X, mask, ctx.angle_mode)[:3]
    if loss_id == "prior":
        gam = ctx.weights.gamma
        parts = [_core(i, X, mask, ctx) for i in ("length", "symm", "angle")]
        value = sum(c * p[0] for c, p in zip(gam, parts))
        g = sum(c * p[1] for c, p in zip(gam, parts))
        return value, g, any(p[2] for p in parts)
    if loss_id == "unsup":
        w = ctx.weights
        v2, g2, k2 = _core("2d", X, mask, ctx)
        vp, gp, kp = _core("prior", X, mask, ctx)
        value = w.w2d * v2 + w.wprior * vp
        g = w.w2d * g2 + w.wprior * gp
        kink = k2 or kp
        if ctx.target is not None and ctx.uncertainty < w.lam:
            v3, g3, k3 = _core("3d", X, mask, ctx)
            value += w.w3d * v3
            g = g + w.w3d * g3
            kink = kink or k3
        return value, g, kink
    raise ValueError(f"unknown loss id {loss_id!r}; expected one of {LOSS_IDS}")


def loss_value(loss_id: str, pose: SkeletonPose, ctx: LossContext | None = None) -> float:
    ctx = ctx or LossContext()
    return _core(loss_id, pose.joints, pose.validity, ctx)[0]


def grad(loss_id: str, pose: SkeletonPose, ctx: LossContext | None = None,
         analytic_only: bool = False) -> np.ndarray:
    """Gradient of a loss with respect to the 17 joint coordinates.

    Uses the closed form unless the pose sits on a clip boundary or a norm
    kink, in which case central differences (step 1e-5 m) are returned.  Sign
    kinks of the L1 terms use ``sign(0) = 0``.
    """
    ctx = ctx or LossContext()
    mask = pose.validity
    _, g, kink = _core(loss_id, pose.joints, mask, ctx)
    if kink and not analytic_only:
        return _central_difference(lambda X: _core(loss_id, X, mask, ctx)[0], pose.joints)
    return g


def value_and_grad(loss_id: str, X: np.ndarray, mask: np.ndarray,
                   ctx: LossContext) -> tuple[float, np.ndarray]:
    """Array-level variant used by the refiner."""
    value, g, kink = _core(loss_id, X, mask, ctx)
    if kink:
        g = _central_difference(lambda Y: _core(loss_id, Y, mask, ctx)[0], X)
    return value, g
