"""Pinhole cameras, the COCO17 skeleton and similarity transforms.

Conventions
-----------
* World frame is right-handed with +z pointing up; units are meters.
* A camera maps world points with ``x_cam = R @ x_world + t``.  In the camera
  frame +x points right in the image, +y points down and +z looks forward.
* Pixel coordinates are ``(u, v)`` with ``u`` along the image width.  The
  center of the top-left pixel is ``(0, 0)``.
* No lens distortion is modelled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth, SingularIntrinsics

DEPTH_EPS = 1e-9
ROTATION_TOL = 1e-9

JOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)
NUM_JOINTS = len(JOINT_NAMES)
# derived joints appended after the 17 stored ones
EXTENDED_NAMES = JOINT_NAMES + ("neck", "midhip")
JOINT_INDEX = {name: i for i, name in enumerate(EXTENDED_NAMES)}
NECK = JOINT_INDEX["neck"]
MIDHIP = JOINT_INDEX["midhip"]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def is_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) through its SVD."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_rotvec(rotvec) -> np.ndarray:
    """Rodrigues' formula."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-15:
        return np.eye(3)
    k = rotvec / theta
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    R = np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)
    return orthonormalize(R)


@dataclass(frozen=True)
class CameraModel:
    """A calibrated pinhole view.

    Parameters
    ----------
    intrinsics : (3, 3) array
        Camera matrix in pixels.
    rotation : (3, 3) array
        World-to-camera rotation.
    translation : (3,) array
        World-to-camera translation in meters.
    width, height : int
        Image size in pixels.
    id : str
        Sensor identifier used in file names.
    """

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    id: str = "cam0"

    def __post_init__(self):
        K = _frozen(self.intrinsics)
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if K.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with det +1")
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError("focal lengths must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("image size must be at least 1x1")
        t.setflags(write=False)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def principal_point(self) -> np.ndarray:
        return self.intrinsics[:2, 2].copy()

    @property
    def projection_matrix(self) -> np.ndarray:
        """The 3x4 matrix ``K [R | t]``."""
        return self.intrinsics @ np.hstack([self.rotation, self.translation[:, None]])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised projection without depth checks.

        Returns the pixel coordinates ``(..., 2)`` and the camera-frame depth
        ``(...)``.  Pixels of points with depth <= 1e-9 are NaN.
        """
        pc = self.to_camera(points)
        z = pc[..., 2]
        ok = z > DEPTH_EPS
        safe_z = np.where(ok, z, 1.0)
        uvw = pc @ self.intrinsics.T
        uv = uvw[..., :2] / safe_z[..., None]
        uv = np.where(ok[..., None], uv, np.nan)
        return uv, z

    def in_image(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        with np.errstate(invalid="ignore"):
            return (
                (uv[..., 0] >= -0.5)
                & (uv[..., 0] <= self.width - 0.5)
                & (uv[..., 1] >= -0.5)
                & (uv[..., 1] <= self.height - 0.5)
            )

    @classmethod
    def look_at(cls, position, target, focal: float, width: int, height: int,
                id: str = "cam0", up=(0.0, 0.0, 1.0)) -> "CameraModel":
        """Build a camera at ``position`` looking at ``target`` with z-up."""
        position = np.asarray(position, dtype=float)
        forward = np.asarray(target, dtype=float) - position
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=float))
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("viewing direction is parallel to up")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = orthonormalize(np.stack([right, down, forward]))
        t = -R @ position
        K = np.array([[focal, 0.0, (width - 1) / 2.0],
                      [0.0, focal, (height - 1) / 2.0],
                      [0.0, 0.0, 1.0]])
        return cls(K, R, t, width, height, id)


def project(camera: CameraModel, point) -> np.ndarray:
    """Project one world point to pixel coordinates.

    Raises
    ------
    NonPositiveDepth
        If the point's camera-frame depth is <= 1e-9.
    """
    pc = camera.to_camera(np.asarray(point, dtype=float).reshape(3))
    if pc[2] <= DEPTH_EPS:
        raise NonPositiveDepth(f"camera-frame depth {pc[2]:.3g} is not positive")
    uvw = camera.intrinsics @ pc
    return uvw[:2] / pc[2]


def cast_ray(camera: CameraModel, pixel) -> tuple[np.ndarray, np.ndarray]:
    """Return the world-frame ray ``(origin, unit direction)`` through ``pixel``.

    Every point ``origin + d * direction`` with ``d > 0`` projects back onto
    ``pixel``.  Accepts a single pixel ``(2,)`` or a batch ``(N, 2)``.
    """
    K = camera.intrinsics
    if abs(np.linalg.det(K)) < 1e-12 or not np.all(np.isfinite(K)):
        raise SingularIntrinsics("intrinsics matrix is not invertible")
    pixel = np.asarray(pixel, dtype=float)
    homog = np.concatenate([pixel, np.ones(pixel.shape[:-1] + (1,))], axis=-1)
    d_cam = np.linalg.solve(K, homog.reshape(-1, 3).T).T
    d_world = d_cam @ camera.rotation
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    d_world = d_world.reshape(pixel.shape[:-1] + (3,))
    return camera.center, d_world


@dataclass(frozen=True)
class SkeletonPose:
    """17 COCO-ordered joints in meters with a per-joint validity mask.

    ``neck`` and ``midhip`` are derived on access from the shoulders and
    hips, never stored.
    """

    joints: np.ndarray
    validity: np.ndarray = field(default=None)

    def __post_init__(self):
        joints = np.array(self.joints, dtype=float, copy=True)
        if joints.shape != (NUM_JOINTS, 3):
            raise ValueError(f"expected ({NUM_JOINTS}, 3) joints, got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("joint coordinates must be finite")
        if self.validity is None:
            validity = np.ones(NUM_JOINTS, dtype=bool)
        else:
            validity = np.array(self.validity, dtype=bool, copy=True).reshape(NUM_JOINTS)
        joints.setflags(write=False)
        validity.setflags(write=False)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "validity", validity)

    @property
    def neck(self) -> np.ndarray:
        return 0.5 * (self.joints[5] + self.joints[6])

    @property
    def midhip(self) -> np.ndarray:
        return 0.5 * (self.joints[11] + self.joints[12])

    def extended(self) -> np.ndarray:
        """All 19 joints: the stored 17 followed by neck and midhip."""
        return np.vstack([self.joints, self.neck, self.midhip])

    def extended_validity(self) -> np.ndarray:
        v = self.validity
        return np.concatenate([v, [v[5] and v[6], v[11] and v[12]]])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.extended()[JOINT_INDEX[name]]

    def with_joints(self, joints) -> "SkeletonPose":
        return SkeletonPose(joints, self.validity)

    def __eq__(self, other):
        if not isinstance(other, SkeletonPose):
            return NotImplemented
        return bool(np.array_equal(self.joints, other.joints)
                    and np.array_equal(self.validity, other.validity))

    __hash__ = None


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * rotation @ x + translation``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        R = _frozen(self.rotation)
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation).reshape(3))

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return self.scale * points @ self.rotation.T + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """The transform applying ``other`` first, then ``self``."""
        return SimilarityTransform(
            self.scale * other.scale,
            orthonormalize(self.rotation @ other.rotation),
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "SimilarityTransform":
        Rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)


def apply_similarity(t: SimilarityTransform, pose: SkeletonPose) -> SkeletonPose:
    return pose.with_joints(t.apply(pose.joints))
