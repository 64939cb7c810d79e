import numpy as np
import pytest

from volpose import synth
from volpose.geom import CameraModel, SkeletonPose


def ring_cameras(n=4, radius=4.2, height=2.2, focal=380.0, width=480, height_px=360):
    sensors = synth.ring_rig(n, radius, height, (0.0, 0.0, 1.0), focal, width, height_px,
                             175.0, 0.5, phase=0.3)
    return [s.camera for s in sensors]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ring_sensors():
    return synth.ring_rig(4, 4.2, 2.2, (0.0, 0.0, 1.0), 380.0, 480, 360, 175.0, 0.5, phase=0.3)


@pytest.fixture(scope="session")
def ring4(ring_sensors):
    return [s.camera for s in ring_sensors]


@pytest.fixture
def simple_camera():
    K = np.array([[1000.0, 0.0, 320.0], [0.0, 1000.0, 240.0], [0.0, 0.0, 1.0]])
    return CameraModel(K, np.eye(3), np.zeros(3), 640, 480)


@pytest.fixture(scope="session")
def standing_pose():
    return synth.sample_pose(5)


def random_camera(rng, width=640, height=480):
    """A camera on a sphere of radius 3-6 m looking near the origin."""
    d = rng.normal(size=3)
    d[2] = abs(d[2]) * 0.5
    pos = d / np.linalg.norm(d) * rng.uniform(3.0, 6.0)
    target = rng.uniform(-0.3, 0.3, 3)
    f = rng.uniform(300.0, 1200.0)
    return CameraModel.look_at(pos, target, f, width, height)


def offset_pose(pose: SkeletonPose, delta) -> SkeletonPose:
    return pose.with_joints(pose.joints + np.asarray(delta))
