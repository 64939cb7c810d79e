"""Synthetic multi-person scenes with capsule avatars.

Poses are built by forward kinematics from a small vector of bounded
articulation parameters, so every generated pose has zero human-prior loss.
Bodies are unions of capsules; depth maps are rendered by analytic
ray-capsule intersection and 2D heatmaps are Gaussians around the projected
joints, optionally corrupted to imitate an imperfect 2D detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import InfeasibleConstraints
from .geom import JOINT_INDEX, NUM_JOINTS, CameraModel, SkeletonPose, cast_ray, rotation_about_z
from .lidar import ScanPatternParams
from .losses import BoneSpec, l_prior

NO_HIT = np.inf
PRIOR_TOL = 1e-12
GAUSS_TRUNCATION = 5.0  # heatmap Gaussians are cut off at this many sigmas

# base segment lengths in meters, multiplied by the sampled body scale
SEGMENTS = {
    "spine": 0.50,
    "half_shoulder": 0.18,
    "half_hip": 0.10,
    "head": 0.22,
    "eye": 0.06,
    "ear": 0.07,
    "upper_arm": 0.30,
    "forearm": 0.26,
    "thigh": 0.44,
    "shin": 0.42,
}
ANKLE_HEIGHT = 0.08

_SIDED = ("arm_polar", "arm_azimuth", "elbow_flex", "elbow_dir",
          "hip_swing", "hip_abduct", "knee_flex")

DEFAULT_RANGES = {
    "scale": (0.92, 1.08),
    "lean": (-0.10, 0.30),
    "twist": (-0.30, 0.30),
    "head_pitch": (0.45, 0.90),
    "head_yaw": (-0.50, 0.50),
    "arm_polar": (0.10, 1.20),
    "arm_azimuth": (-2.0, 2.0),
    "elbow_flex": (0.0, 1.8),
    "elbow_dir": (-math.pi, math.pi),
    "hip_swing": (-0.35, 0.55),
    "hip_abduct": (-0.05, 0.25),
    "knee_flex": (0.05, 1.20),
}


def _param_names() -> tuple:
    names = ["scale", "lean", "twist", "head_pitch", "head_yaw"]
    for side in ("left", "right"):
        names += [f"{side}_{n}" for n in _SIDED]
    return tuple(names)


PARAM_NAMES = _param_names()


@dataclass(frozen=True)
class PoseConstraints:
    """Closed ranges ``(lo, hi)`` for each articulation parameter (radians,
    except ``scale`` which is dimensionless).  Sided parameters share one
    range for both sides."""

    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = [], []
        for name in PARAM_NAMES:
            key = name.split("_", 1)[1] if name.startswith(("left_", "right_")) else name
            a, b = self.ranges[key]
            lo.append(a)
            hi.append(b)
        return np.array(lo, dtype=float), np.array(hi, dtype=float)

    def validate(self):
        missing = set(DEFAULT_RANGES) - set(self.ranges)
        if missing:
            raise InfeasibleConstraints(f"missing ranges: {sorted(missing)}")
        for key, (a, b) in self.ranges.items():
            if not a <= b:
                raise InfeasibleConstraints(f"empty range for {key}: ({a}, {b})")


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    return (v * math.cos(angle) + np.cross(axis, v) * math.sin(angle)
            + axis * (axis @ v) * (1.0 - math.cos(angle)))


def _unit(v):
    return v / np.linalg.norm(v)


def build_pose(params: np.ndarray, root=(0.0, 0.0), yaw: float = 0.0) -> SkeletonPose:
    """Forward kinematics from an articulation vector ordered as
    :data:`PARAM_NAMES`.

    The body is built facing +y with its left side towards -x, then rotated
    by ``yaw`` about +z and placed so that the lower ankle sits
    ``ANKLE_HEIGHT`` above the ground at horizontal position ``root``.
    """
    p = dict(zip(PARAM_NAMES, np.asarray(params, dtype=float)))
    L = {k: v * p["scale"] for k, v in SEGMENTS.items()}
    up = np.array([0.0, 0.0, 1.0])
    fwd = np.array([0.0, 1.0, 0.0])
    left = np.array([-1.0, 0.0, 0.0])

    J = np.zeros((NUM_JOINTS, 3))
    idx = JOINT_INDEX

    spine = _rotate(up, left, -p["lean"])  # positive lean tips the spine forward
    spine = _unit(spine)
    midhip = np.zeros(3)
    neck = midhip + L["spine"] * spine
    shoulder_dir = _unit(_rotate(left, spine, p["twist"]))
    torso_fwd = _unit(np.cross(-spine, shoulder_dir))
    J[idx["left_shoulder"]] = neck + L["half_shoulder"] * shoulder_dir
    J[idx["right_shoulder"]] = neck - L["half_shoulder"] * shoulder_dir
    J[idx["left_hip"]] = midhip + L["half_hip"] * left
    J[idx["right_hip"]] = midhip - L["half_hip"] * left

    head_fwd = _unit(_rotate(torso_fwd, spine, p["head_yaw"]))
    head_left = _unit(np.cross(spine, head_fwd))
    nose_dir = math.cos(p["head_pitch"]) * spine + math.sin(p["head_pitch"]) * head_fwd
    nose = neck + L["head"] * nose_dir
    J[idx["nose"]] = nose
    for side, s in (("left", 1.0), ("right", -1.0)):
        eye = nose + L["eye"] * _unit(-0.45 * head_fwd + 0.45 * spine + s * 0.75 * head_left)
        ear = eye + L["ear"] * _unit(-0.85 * head_fwd - 0.1 * spine + s * 0.5 * head_left)
        J[idx[f"{side}_eye"]] = eye
        J[idx[f"{side}_ear"]] = ear

    for side, s in (("left", 1.0), ("right", -1.0)):
        lateral = s * shoulder_dir
        # upper arm: polar angle away from straight down, azimuth about the
        # vertical measured from the lateral direction
        hang = -spine
        out =_rotate(lateral, spine, p[f"{side}_arm_azimuth"] * s)
        upper = _unit(math.cos(p[f"{side}_arm_polar"]) * hang
                      + math.sin(p[f"{side}_arm_polar"]) * _unit(out - (out @ hang) * hang))
        perp = np.cross(upper, spine)
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(upper, torso_fwd)
        perp = _rotate(_unit(perp), upper, p[f"{side}_elbow_dir"])
        fore = _unit(math.cos(p[f"{side}_elbow_flex"]) * upper
                     + math.sin(p[f"{side}_elbow_flex"]) * perp)
        elbow = J[idx[f"{side}_shoulder"]] + L["upper_arm"] * upper
        J[idx[f"{side}_elbow"]] = elbow
        J[idx[f"{side}_wrist"]] = elbow + L["forearm"] * fore

        hip = J[idx[f"{side}_hip"]]
        # thigh swings forward about the lateral axis, then abducts outward
        thigh = _rotate(-up, left, -p[f"{side}_hip_swing"])
        thigh = _unit(_rotate(thigh, fwd, -s * p[f"{side}_hip_abduct"]))
        # the shin folds backwards so the knee leads the hip-ankle line
        shin = _unit(_fold_back(thigh, fwd, p[f"{side}_knee_flex"]))
        knee = hip + L["thigh"] * thigh
        J[idx[f"{side}_knee"]] = knee
        J[idx[f"{side}_ankle"]] = knee + L["shin"] * shin

    lowest = min(J[idx["left_ankle"], 2], J[idx["right_ankle"], 2])
    J[:, 2] += ANKLE_HEIGHT - lowest
    R = rotation_about_z(yaw)
    J = J @ R.T
    J[:, 0] += root[0]
    J[:, 1] += root[1]
    return SkeletonPose(J)


def _fold_back(thigh: np.ndarray, fwd: np.ndarray, flex: float) -> np.ndarray:
    """Rotate ``thigh`` by ``flex`` so the distal end moves backwards."""
    back = -fwd - (-fwd @ thigh) * thigh
    back = _unit(back)
    return math.cos(flex) * thigh + math.sin(flex) * back


def draw_params(rng: np.random.Generator, constraints: PoseConstraints) -> np.ndarray:
    lo, hi = constraints.bounds()
    return rng.uniform(lo, hi)


def is_plausible(pose: SkeletonPose, bones: BoneSpec = BoneSpec()) -> bool:
    return l_prior(pose, bones)[0] <= PRIOR_TOL


def sample_pose(seed, constraints: PoseConstraints | None = None, root=(0.0, 0.0),
                yaw: float | None = None, max_tries: int = 100) -> SkeletonPose:
    """Draw a random plausible pose.

    ``seed`` is an int or a :class:`numpy.random.Generator`.  Draws whose
    prior loss is not zero are rejected and redrawn.
    """
    constraints = constraints or PoseConstraints()
    constraints.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_tries):
        params = draw_params(rng, constraints)
        heading = rng.uniform(-math.pi, math.pi) if yaw is None else yaw
        pose = build_pose(params, root, heading)
        if is_plausible(pose):
            return pose
    raise InfeasibleConstraints(f"no plausible pose in {max_tries} draws")


# ---------------------------------------------------------------------------
# bodies and depth rendering

# (joint a, joint b, radius in meters); neck and midhip are derived joints
CAPSULES = (
    ("left_ear", "right_ear", 0.09),
    ("neck", "nose", 0.05),
    ("neck", "midhip", 0.13),
    ("left_shoulder", "right_shoulder", 0.06),
    ("left_hip", "right_hip", 0.09),
    ("left_shoulder", "left_elbow", 0.05),
    ("right_shoulder", "right_elbow", 0.05),
    ("left_elbow", "left_wrist", 0.04),
    ("right_elbow", "right_wrist", 0.04),
    ("left_hip", "left_knee", 0.08),
    ("right_hip", "right_knee", 0.08),
    ("left_knee", "left_ankle", 0.055),
    ("right_knee", "right_ankle", 0.055),
)


@dataclass(frozen=True)
class AvatarBody:
    pose: SkeletonPose
    capsules: tuple = CAPSULES

    def __post_init__(self):
        for a, b, r in self.capsules:
            if a not in JOINT_INDEX or b not in JOINT_INDEX:
                raise ValueError(f"capsule endpoint {a!r}/{b!r} is not a joint")
            if not 0 < r <= 0.3:
                raise ValueError("capsule radius must be in (0, 0.3] m")

    def segments(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        E = self.pose.extended()
        return [(E[JOINT_INDEX[a]], E[JOINT_INDEX[b]], r) for a, b, r in self.capsules]


def ray_capsule(origin: np.ndarray, dirs: np.ndarray, a: np.ndarray, b: np.ndarray,
                radius: float) -> np.ndarray:
    """Distance along each unit ray to its first hit with a capsule.

    Returns ``inf`` where a ray misses (or starts inside the capsule).
    """
    dirs = np.asarray(dirs, dtype=float)
    t_out = np.full(dirs.shape[0], np.inf)
    ba = b - a
    oa = origin - a
    baba = float(ba @ ba)

    def sphere(center):
        oc = origin - center
        B = dirs @ oc
        C = float(oc @ oc) - radius * radius
        h = B * B - C
        ok = h >= 0
        t = np.full_like(B, np.inf)
        t[ok] = -B[ok] - np.sqrt(h[ok])
        t[t <= 0] = np.inf
        return t

    if baba < 1e-18:
        return sphere(a)
    bard = dirs @ ba
    baoa = float(ba @ oa)
    rdoa = dirs @ oa
    oaoa = float(oa @ oa)
    A = baba - bard * bard
    B = baba * rdoa - baoa * bard
    C = baba * oaoa - baoa * baoa - radius * radius * baba
    h = B * B - A * C
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-B - np.sqrt(np.where(h >= 0, h, np.nan))) / A
    y = baoa + t * bard
    body = (h >= 0) & (A > 1e-12) & (y > 0) & (y < baba) & (t > 0)
    t_out[body] = t[body]
    rest = ~body
    if rest.any():
        t_out[rest] = np.minimum(sphere(a)[rest], sphere(b)[rest])
    return t_out


def _capsule_pixel_box(camera: CameraModel, a, b, radius):
    """Conservative pixel bounding box of a capsule, or None if it may wrap
    behind the camera."""
    pts = np.vstack([a, b])
    uv, z = camera.project_points(pts)
    zmin = z.min() - radius
    if zmin <= 1e-3:
        return None
    pad = radius * max(camera.intrinsics[0, 0], camera.intrinsics[1, 1]) / zmin + 2.0
    lo = np.floor(uv.min(axis=0) - pad).astype(int)
    hi = np.ceil(uv.max(axis=0) + pad).astype(int)
    return lo, hi


def render_depth(bodies: Sequence[AvatarBody], camera: CameraModel) -> np.ndarray:
    """Range image ``(height, width)``: distance along each pixel-center ray
    to the nearest capsule surface, ``inf`` where nothing is hit."""
    H, W = camera.height, camera.width
    depth = np.full((H, W), NO_HIT)
    if not bodies:
        return depth
    for body in bodies:
        for a, b, r in body.segments():
            box = _capsule_pixel_box(camera, a, b, r)
            if box is None:
                x0, y0, x1, y1 = 0, 0, W - 1, H - 1
            else:
                (x0, y0), (x1, y1) = box
                x0, y0 = max(x0, 0), max(y0, 0)
                x1, y1 = min(x1, W - 1), min(y1, H - 1)
                if x0 > x1 or y0 > y1:
                    continue
            ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
            pix = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
            origin, dirs = cast_ray(camera, pix)
            t = ray_capsule(origin, dirs, a, b, r).reshape(ys.shape)
            region = depth[y0:y1 + 1, x0:x1 + 1]
            np.minimum(region, t, out=region)
    return depth


def joint_visibility(pose: SkeletonPose, camera: CameraModel, depth: np.ndarray,
                     threshold: float = 0.15) -> tuple[np.ndarray, np.ndarray]:
    """Project the joints and decide which are visible.

    A joint is visible when it is in front of the camera, projects inside the
    image, and the rendered range at its pixel is within ``threshold`` meters
    of the joint's own range.
    """
    uv, z = camera.project_points(pose.joints)
    inside = (z > 1e-9) & camera.in_image(uv)
    visible = np.zeros(NUM_JOINTS, dtype=bool)
    rng = np.linalg.norm(pose.joints - camera.center, axis=1)
    for k in np.flatnonzero(inside):
        c = int(np.clip(np.rint(uv[k, 0]), 0, camera.width - 1))
        r = int(np.clip(np.rint(uv[k, 1]), 0, camera.height - 1))
        visible[k] = abs(depth[r, c] - rng[k]) <= threshold
    return uv, visible


# ---------------------------------------------------------------------------
# heatmaps


@dataclass(frozen=True)
class HeatmapNoise:
    """Corruption applied to synthetic heatmaps.

    ``jitter`` is the std (pixels) of a Gaussian offset of each peak,
    ``dropout`` the probability a channel is zeroed and ``false_peak`` the
    probability a spurious Gaussian is added somewhere inside the person's
    2D box.
    """

    jitter: float = 0.0
    dropout: float = 0.0
    false_peak: float = 0.0

    def __post_init__(self):
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        for p in (self.dropout, self.false_peak):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    @property
    def is_clean(self) -> bool:
        return self.jitter == 0 and self.dropout == 0 and self.false_peak == 0


@dataclass(frozen=True)
class HeatmapWindow:
    """K heatmap channels stored only inside a pixel window.

    ``data`` has shape ``(K, h, w)`` and covers columns ``x0 .. x0+w-1`` and
    rows ``y0 .. y0+h-1`` of a ``width x height`` image; everything outside
    is zero.
    """

    data: np.ndarray
    x0: int
    y0: int
    width: int
    height: int

    def dense(self) -> np.ndarray:
        K, h, w = self.data.shape
        out = np.zeros((K, self.height, self.width), dtype=self.data.dtype)
        out[:, self.y0:self.y0 + h, self.x0:self.x0 + w] = self.data
        return out

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_dense(cls, maps: np.ndarray) -> "HeatmapWindow":
        maps = np.asarray(maps)
        K, H, W = maps.shape
        nz = np.argwhere(np.any(maps != 0, axis=0))
        if len(nz) == 0:
            return cls(np.zeros((K, 0, 0), dtype=maps.dtype), 0, 0, W, H)
        (y0, x0), (y1, x1) = nz.min(axis=0), nz.max(axis=0)
        return cls(maps[:, y0:y1 + 1, x0:x1 + 1].copy(), int(x0), int(y0), W, H)


def _gaussian_patch(out: np.ndarray, ox: int, oy: int, cx: float, cy: float, sigma: float):
    """Max-blend a peak-1 Gaussian into ``out`` whose top-left pixel is
    ``(ox, oy)`` in image coordinates."""
    h, w = out.shape
    rad = GAUSS_TRUNCATION * sigma
    x0 = max(int(math.floor(cx - rad)) - ox, 0)
    x1 = min(int(math.ceil(cx + rad)) - ox, w - 1)
    y0 = max(int(math.floor(cy - rad)) - oy, 0)
    y1 = min(int(math.ceil(cy + rad)) - oy, h - 1)
    if x0 > x1 or y0 > y1:
        return
    xs = np.arange(x0, x1 + 1) + ox - cx
    ys = np.arange(y0, y1 + 1) + oy - cy
    g = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))
    g[(ys[:, None] ** 2 + xs[None, :] ** 2) > rad * rad] = 0.0
    region = out[y0:y1 + 1, x0:x1 + 1]
    np.maximum(region, g.astype(out.dtype), out=region)


def synth_heatmaps(joints2d: np.ndarray, visible: np.ndarray, camera: CameraModel,
                   sigma: float, noise: HeatmapNoise = HeatmapNoise(), seed=0,
                   dtype=np.float32) -> HeatmapWindow:
    """Per-joint Gaussian heatmaps of one person in one view.

    Clean mode places a peak-1 Gaussian of std ``sigma`` (truncated at five
    sigmas) on each visible joint.  With noise, peaks are jittered, channels
    dropped and spurious peaks added, all driven by ``seed``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    joints2d = np.asarray(joints2d, dtype=float)
    visible = np.asarray(visible, dtype=bool) & np.all(np.isfinite(joints2d), axis=1)
    K = joints2d.shape[0]
    W, H = camera.width, camera.height

    centers = joints2d.copy()
    if noise.jitter > 0:
        centers = centers + rng.normal(0.0, noise.jitter, size=centers.shape)
    drop = rng.random(K) < noise.dropout if noise.dropout > 0 else np.zeros(K, bool)
    extra = rng.random(K) < noise.false_peak if noise.false_peak > 0 else np.zeros(K, bool)
    peaks: list[list[tuple[float, float]]] = [[] for _ in range(K)]
    for k in range(K):
        if visible[k] and not drop[k]:
            peaks[k].append((centers[k, 0], centers[k, 1]))
    if extra.any() and visible.any():
        lo = joints2d[visible].min(axis=0)
        hi = joints2d[visible].max(axis=0)
        pad = 0.2 * (hi - lo) + sigma
        for k in np.flatnonzero(extra):
            spot = rng.uniform(lo - pad, hi + pad)
            if not drop[k]:
                peaks[k].append((spot[0], spot[1]))

    all_peaks = [p for ps in peaks for p in ps]
    if not all_peaks:
        return HeatmapWindow(np.zeros((K, 0, 0), dtype=dtype), 0, 0, W, H)
    arr = np.array(all_peaks)
    rad = GAUSS_TRUNCATION * sigma
    x0 = max(int(math.floor(arr[:, 0].min() - rad)), 0)
    y0 = max(int(math.floor(arr[:, 1].min() - rad)), 0)
    x1 = min(int(math.ceil(arr[:, 0].max() + rad)), W - 1)
    y1 = min(int(math.ceil(arr[:, 1].max() + rad)), H - 1)
    if x0 > x1 or y0 > y1:
        return HeatmapWindow(np.zeros((K, 0, 0), dtype=dtype), 0, 0, W, H)
    data = np.zeros((K, y1 - y0 + 1, x1 - x0 + 1), dtype=dtype)
    for k, ps in enumerate(peaks):
        for cx, cy in ps:
            _gaussian_patch(data[k], x0, y0, cx, cy, sigma)
    return HeatmapWindow(data, x0, y0, W, H)


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class Sensor:
    camera: CameraModel
    scan: ScanPatternParams | None = None

    @property
    def id(self) -> str:
        return self.camera.id


@dataclass(frozen=True)
class SceneConfig:
    extent: tuple = (5.0, 5.0)
    sensors: tuple = ()
    persons: int = 3
    seed: int = 0
    rate_hz: float = 10.0
    duration_s: float = 1.0
    heatmap_sigma: float = 3.0
    noise: HeatmapNoise = HeatmapNoise()
    visibility_threshold: float = 0.15
    constraints: PoseConstraints = field(default_factory=PoseConstraints)
    walk_speed: float = 1.0       # m/s std of the root random walk
    articulation_step: float = 0.05  # fraction of each range per frame
    margin: float = 0.6           # keep roots this far inside the extent

    def __post_init__(self):
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ValueError("scene extent must be positive")
        if self.persons < 1:
            raise ValueError("need at least one person")
        if not self.rate_hz > 0 or not self.duration_s > 0:
            raise ValueError("rate and duration must be positive")
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        object.__setattr__(self, "sensors", tuple(self.sensors))

    @property
    def num_frames(self) -> int:
        return int(round(self.duration_s * self.rate_hz))

    @property
    def cameras(self) -> list[CameraModel]:
        return [s.camera for s in self.sensors]


@dataclass
class SceneFrame:
    """One synthetic timestep.

    Per-sensor dictionaries are keyed by sensor id.  ``joints2d[sid]`` is
    ``(P, 17, 2)``, ``visible[sid]`` is ``(P, 17)`` and ``heatmaps[sid]`` a
    list with one :class:`HeatmapWindow` per person.
    """

    index: int
    timestamp: float
    person_ids: list[int]
    poses: list[SkeletonPose]
    depth: dict
    joints2d: dict
    visible: dict
    heatmaps: dict


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.where(span > 0, np.mod(x - lo, 2 * np.where(span > 0, span, 1.0)), 0.0)
    y = np.where(y > span, 2 * span - y, y)
    return lo + y


@dataclass
class _Walker:
    params: np.ndarray
    root: np.ndarray
    yaw: float


def _initial_walkers(config: SceneConfig, rng: np.random.Generator) -> list[_Walker]:
    ex, ey = config.extent
    m = min(config.margin, 0.45 * ex, 0.45 * ey)
    walkers = []
    for _ in range(config.persons):
        for _attempt in range(100):
            root = rng.uniform([-ex / 2 + m, -ey / 2 + m], [ex / 2 - m, ey / 2 - m])
            params = draw_params(rng, config.constraints)
            yaw = rng.uniform(-math.pi, math.pi)
            if is_plausible(build_pose(params, root, yaw)):
                walkers.append(_Walker(params, root, yaw))
                break
        else:
            raise InfeasibleConstraints("could not place a plausible person")
    return walkers


def _step_walker(w: _Walker, config: SceneConfig, rng: np.random.Generator) -> _Walker:
    lo, hi = config.constraints.bounds()
    ex, ey = config.extent
    m = min(config.margin, 0.45 * ex, 0.45 * ey)
    dt = 1.0 / config.rate_hz
    step = rng.normal(0.0, config.articulation_step, size=lo.shape) * (hi - lo)
    params = _reflect(w.params + step, lo, hi)
    root = w.root + rng.normal(0.0, config.walk_speed * dt, size=2)
    root = _reflect(root, np.array([-ex / 2 + m, -ey / 2 + m]), np.array([ex / 2 - m, ey / 2 - m]))
    yaw = float(np.mod(w.yaw + rng.normal(0.0, 0.2) + math.pi, 2 * math.pi) - math.pi)
    if not is_plausible(build_pose(params, root, yaw)):
        params = w.params
    return _Walker(params, root, yaw)


def sample_trajectories(config: SceneConfig) -> list[list[SkeletonPose]]:
    """Poses of every person for every frame, ``[frame][person]``."""
    config.constraints.validate()
    rng = np.random.default_rng(config.seed)
    walkers = _initial_walkers(config, rng)
    frames = []
    for _ in range(config.num_frames):
        frames.append([build_pose(w.params, w.root, w.yaw) for w in walkers])
        walkers = [_step_walker(w, config, rng) for w in walkers]
    return frames


def render_frame(config: SceneConfig, index: int, poses: list[SkeletonPose]) -> SceneFrame:
    """Render depth, 2D labels and heatmaps for one frame.  Pure given its
    inputs, so frames can be rendered in any order or concurrently."""
    bodies = [AvatarBody(p) for p in poses]
    depth, joints2d, visible, heatmaps = {}, {}, {}, {}
    for s_idx, sensor in enumerate(config.sensors):
        cam = sensor.camera
        d = render_depth(bodies, cam)
        uv_all, vis_all, maps = [], [], []
        for p_idx, pose in enumerate(poses):
            uv, vis = joint_visibility(pose, cam, d, config.visibility_threshold)
            rng = np.random.default_rng([config.seed, index, s_idx, p_idx])
            maps.append(synth_heatmaps(uv, vis, cam, config.heatmap_sigma, config.noise, rng))
            uv_all.append(uv)
            vis_all.append(vis)
        depth[sensor.id] = d
        joints2d[sensor.id] = np.array(uv_all)
        visible[sensor.id] = np.array(vis_all)
        heatmaps[sensor.id] = maps
    return SceneFrame(index, index / config.rate_hz, list(range(len(poses))), poses,
                      depth, joints2d, visible, heatmaps)


def generate_sequence(config: SceneConfig) -> Iterator[SceneFrame]:
    """Yield ``duration_s * rate_hz`` frames, deterministic in ``config.seed``."""
    for index, poses in enumerate(sample_trajectories(config)):
        yield render_frame(config, index, poses)


# ---------------------------------------------------------------------------
# presets


def ring_rig(n: int, radius: float, height: float, target, focal: float, width: int,
             height_px: int, scan_radius: float, scan_duration: float,
             phase: float = 0.0) -> tuple:
    sensors = []
    for i in range(n):
        ang = phase + 2 * math.pi * i / n
        pos = (radius * math.cos(ang), radius * math.sin(ang), height)
        cam = CameraModel.look_at(pos, target, focal, width, height_px, id=f"s{i}")
        scan = ScanPatternParams("rose", scan_radius, theta0=0.37 * i, duration=scan_duration,
                                 width=width, height=height_px)
        sensors.append(Sensor(cam, scan))
    return tuple(sensors)


def panoptic_preset(**overrides) -> SceneConfig:
    """Indoor dome-like setup: 5 x 5 m floor watched by 5 sensor nodes."""
    sensors = ring_rig(5, 4.2, 2.2, (0.0, 0.0, 1.0), 380.0, 480, 360, 175.0, 0.5)
    cfg = SceneConfig(extent=(5.0, 5.0), sensors=sensors, persons=3)
    return replace(cfg, **overrides)


def basketball_preset(**overrides) -> SceneConfig:
    """Outdoor court: 35 x 17 m with 4 sensor nodes at the corners."""
    sensors = []
    for i, (x, y) in enumerate(((-19.5, -10.5), (19.5, -10.5), (19.5, 10.5), (-19.5, 10.5))):
        cam = CameraModel.look_at((x, y, 5.0), (0.0, 0.0, 1.0), 1100.0, 640, 480, id=f"s{i}")
        scan = ScanPatternParams("rose", 230.0, theta0=0.37 * i, duration=0.5,
                                 width=640, height=480)
        sensors.append(Sensor(cam, scan))
    cfg = SceneConfig(extent=(35.0, 17.0), sensors=tuple(sensors), persons=10)
    return replace(cfg, **overrides)


PRESETS = {"panoptic": panoptic_preset, "basketball": basketball_preset}
