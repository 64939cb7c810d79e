import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volpose import io, synth
from volpose.lidar import PointCloud


class TestJson:
    def test_nan_becomes_null(self, tmp_path):
        io.write_json(tmp_path / "a.json", {"b": [1.0, float("nan")], "a": np.float32(2.5)})
        text = (tmp_path / "a.json").read_text()
        assert text.endswith("\n") and text.index('"a"') < text.index('"b"')
        assert io.read_json(tmp_path / "a.json") == {"a": 2.5, "b": [1.0, None]}

    def test_nan_array(self):
        arr = io.nan_array([[1.0, None], [None, 2.0]])
        assert np.isnan(arr[0, 1]) and arr[1, 1] == 2.0

    def test_deterministic_text(self):
        obj = {"z": 1, "a": {"y": np.arange(3), "b": True}}
        assert io.dumps(obj) == io.dumps(json.loads(io.dumps(obj)))


class TestCalibration:
    def test_round_trip(self, tmp_path, ring_sensors):
        io.write_calibration(tmp_path / "c.json", ring_sensors)
        back = io.read_calibration(tmp_path / "c.json")
        assert len(back) == len(ring_sensors)
        for a, b in zip(ring_sensors, back):
            np.testing.assert_array_equal(a.camera.intrinsics, b.camera.intrinsics)
            np.testing.assert_array_equal(a.camera.rotation, b.camera.rotation)
            np.testing.assert_array_equal(a.camera.translation, b.camera.translation)
            assert a.camera.id == b.camera.id and a.scan == b.scan


class TestPoses:
    def test_pose_round_trip(self, standing_pose):
        v = np.ones(17, bool)
        v[4] = False
        pose = standing_pose.with_joints(standing_pose.joints)
        pose = type(pose)(pose.joints, v)
        assert io.pose_from_json(json.loads(io.dumps(io.pose_to_json(pose)))) == pose

    def test_estimates_file(self, tmp_path):
        est = [{"person_id": 0, "uncertainty_nats": 3.0}]
        io.write_estimates(tmp_path / "e.json", [(0, est), (5, [])])
        assert io.read_estimates(tmp_path / "e.json") == [(0, est), (5, [])]

    def test_bare_list_is_frame_zero(self, tmp_path):
        io.write_json(tmp_path / "e.json", [{"person_id": 2}])
        assert io.read_estimates(tmp_path / "e.json") == [(0, [{"person_id": 2}])]


class TestBinary:
    def test_depth_round_trip(self, tmp_path, rng):
        d = rng.uniform(1, 10, size=(7, 5))
        d[2, 3] = np.inf
        io.write_depth(tmp_path / "d.f32", d)
        back = io.read_depth(tmp_path / "d.f32")
        np.testing.assert_allclose(back, d.astype(np.float32))
        assert np.isinf(back[2, 3])

    def test_heatmap_round_trip(self, tmp_path, simple_camera, rng):
        uv = rng.uniform(30, 450, size=(17, 2))
        vis = rng.uniform(size=17) > 0.3
        w = synth.synth_heatmaps(uv, vis, simple_camera, 3.0,
                                 synth.HeatmapNoise(false_peak=0.5), seed=2)
        io.write_heatmaps(tmp_path / "h.f32", w)
        back = io.read_heatmaps(tmp_path / "h.f32")
        np.testing.assert_array_equal(back.dense(), w.dense())

    def test_empty_heatmap(self, tmp_path, simple_camera):
        w = synth.synth_heatmaps(np.zeros((17, 2)), np.zeros(17, bool), simple_camera, 3.0)
        io.write_heatmaps(tmp_path / "h.f32", w)
        back = io.read_heatmaps(tmp_path / "h.f32")
        assert (back.width, back.height) == (640, 480) and not back.dense().any()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 300), st.integers(0, 2**31))
    def test_cloud_bin_round_trip(self, tmp_path_factory, n, seed):
        pts = np.random.default_rng(seed).normal(size=(n, 3)).astype(np.float32).astype(float)
        path = tmp_path_factory.mktemp("c") / "c.bin"
        io.write_cloud_bin(path, PointCloud(pts))
        np.testing.assert_array_equal(io.read_cloud_bin(path).points, pts)

    def test_ply_round_trip(self, tmp_path, rng):
        pts = np.round(rng.normal(size=(20, 3)), 6)
        ids = rng.integers(0, 4, 20)
        io.write_ply(tmp_path / "c.ply", PointCloud(pts), ids)
        cloud, back_ids = io.read_ply(tmp_path / "c.ply")
        np.testing.assert_allclose(cloud.points, pts, atol=1e-9)
        np.testing.assert_array_equal(back_ids, ids)

    def test_ply_rejects_garbage(self, tmp_path):
        (tmp_path / "x.ply").write_text("hello\n")
        with pytest.raises(ValueError):
            io.read_ply(tmp_path / "x.ply")


def test_csv_round_trip(tmp_path):
    io.write_csv(tmp_path / "r.csv", ["a", "b"], [(1, 0.1), (2, float("nan"))])
    rows = io.read_csv(tmp_path / "r.csv")
    assert rows == [{"a": "1", "b": "0.1"}, {"a": "2", "b": "nan"}]


def test_frame_dir(tmp_path):
    assert io.frame_dir(tmp_path, 12).name == "frame_000012"
