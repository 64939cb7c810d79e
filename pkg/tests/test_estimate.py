import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares

from conftest import offset_pose, ring_cameras
from volpose import estimate, losses, metrics, pipeline, synth, voxel
from volpose.errors import EmptyCloud, NonFiniteObjective, NoViews
from volpose.estimate import FuseParams, PersonEstimate
from volpose.geom import SkeletonPose
from volpose.lidar import PointCloud

LN_64_CUBED = math.log(64**3)


@pytest.fixture(scope="module")
def sample(ring_sensors, standing_pose):
    return pipeline.simulate_person(standing_pose, ring_sensors, seed=3)


def _estimate(u, pid=0):
    pose = SkeletonPose(np.zeros((17, 3)))
    return PersonEstimate(pose, u, pid)


class TestFusion:
    def test_clean_rgb_path_within_half_pitch(self, sample, ring4):
        est = estimate.fuse_estimate(sample.heatmaps, ring4, sample.cloud, FuseParams(gate=0.0))
        assert metrics.mpjpe(est.pose, sample.pose) <= 15.625

    def test_gated_clean_within_half_pitch(self, sample, ring4):
        est = estimate.fuse_estimate(sample.heatmaps, ring4, sample.cloud)
        assert metrics.mpjpe(est.pose, sample.pose) <= 15.625
        assert est.uncertainty == pytest.approx(voxel.person_uncertainty(est.heatmap))
        np.testing.assert_array_equal(est.pose.joints, voxel.soft_argmax(est.heatmap).joints)

    def test_gate_zero_is_bit_identical_to_rgb_path(self, sample, ring4):
        params = FuseParams(gate=0.0)
        est = estimate.fuse_estimate(sample.heatmaps, ring4, sample.cloud, params)
        spec = est.heatmap.spec
        # oracle: the plain chain built step by step
        vol = voxel.sharpen(voxel.backproject(sample.heatmaps, ring4, spec))
        ref = voxel.soft_argmax(voxel.normalize(vol))
        np.testing.assert_array_equal(est.pose.joints, ref.joints)

    def test_zero_heatmaps_give_grid_center(self, ring4):
        maps = [np.zeros((17, c.height, c.width)) for c in ring4]
        est = estimate.fuse_estimate(maps, ring4, None, fallback_center=(0.3, -0.4, 1.0))
        np.testing.assert_allclose(est.pose.joints, np.tile([0.3, -0.4, 1.0], (17, 1)),
                                   atol=1e-12)
        assert est.uncertainty == pytest.approx(LN_64_CUBED, abs=1e-9)

    def test_zero_heatmaps_with_cloud(self, ring4, sample):
        maps = [np.zeros((17, c.height, c.width)) for c in ring4]
        est = estimate.fuse_estimate(maps, ring4, sample.cloud)
        c = estimate.grid_center(sample.cloud.points, 2.0, 0.1)
        np.testing.assert_allclose(est.pose.joints, np.tile(c, (17, 1)), atol=1e-12)
        assert est.uncertainty == pytest.approx(LN_64_CUBED, abs=1e-9)

    def test_errors(self, sample, ring4):
        with pytest.raises(NoViews):
            estimate.fuse_estimate([], [], sample.cloud)
        with pytest.raises(NoViews):
            estimate.fuse_estimate(sample.heatmaps[:1], ring4[:1], None, fallback_center=(0, 0, 1))
        with pytest.raises(EmptyCloud):
            estimate.fuse_estimate(sample.heatmaps, ring4, PointCloud(np.zeros((0, 3))))

    def test_single_view_with_cloud_runs(self, sample, ring4):
        params = FuseParams(resolution=16)
        est = estimate.fuse_estimate(sample.heatmaps[:1], ring4[:1], sample.cloud, params)
        assert np.isfinite(est.pose.joints).all()

    def test_params_validated(self):
        with pytest.raises(ValueError):
            FuseParams(gate=1.5)
        with pytest.raises(ValueError):
            FuseParams(dilation=-1)


class TestGridCenter:
    def test_centroid_without_margin(self, rng):
        pts = rng.normal(size=(50, 3))
        np.testing.assert_array_equal(estimate.grid_center(pts, 2.0, None), pts.mean(axis=0))

    def test_shift_keeps_cloud_inside(self):
        # dense blob near the top drags the centroid up; the lone low point must stay inside
        pts = np.vstack([np.tile([0.0, 0.0, 1.6], (99, 1)), [[0.0, 0.0, 0.1]]])
        c = estimate.grid_center(pts, 2.0, 0.1)
        assert c[2] - 1.0 <= 0.0 and c[2] + 1.0 >= 1.7

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_padded_cloud_fits(self, seed):
        r = np.random.default_rng(seed)
        pts = r.uniform([-0.4, -0.4, 0.0], [0.4, 0.4, 1.7], size=(r.integers(1, 60), 3))
        c = estimate.grid_center(pts, 2.0, 0.1)
        assert np.all(pts.min(0) - 0.1 >= c - 1.0 - 1e-12)
        assert np.all(pts.max(0) + 0.1 <= c + 1.0 + 1e-12)

    def test_dilate_ball(self):
        spec = voxel.VoxelGridSpec(resolution=9)
        vals = np.zeros((9, 9, 9), np.uint8)
        vals[4, 4, 4] = 1
        grown = estimate.dilate(voxel.OccupancyGrid(spec, vals), 2)
        assert grown.sum() == estimate.ball(2).sum() == 33


class TestPeaks:
    def test_subpixel_gaussian(self, simple_camera, rng):
        uv = rng.uniform(40, 400, size=(17, 2))
        w = synth.synth_heatmaps(uv, np.ones(17, bool), simple_camera, 3.0)
        peaks, conf = estimate.heatmap_peaks(w)
        np.testing.assert_allclose(peaks, uv, atol=1e-6)
        assert np.all(conf > 0.5)

    def test_empty_channel(self, simple_camera):
        vis = np.ones(17, bool)
        vis[3] = False
        w = synth.synth_heatmaps(np.full((17, 2), 100.0), vis, simple_camera, 3.0)
        peaks, conf = estimate.heatmap_peaks(w)
        assert np.isnan(peaks[3]).all() and conf[3] == 0.0


class TestDLT:
    def test_noiseless_four_views(self, ring4, standing_pose):
        peaks = np.array([c.project_points(standing_pose.joints)[0] for c in ring4])
        pose = estimate.dlt_triangulate(peaks, ring4)
        assert pose.validity.all()
        assert np.abs(pose.joints - standing_pose.joints).max() < 1e-6
        for c, p in zip(ring4, peaks):
            assert np.abs(c.project_points(pose.joints)[0] - p).max() < 1e-6

    def test_single_view_joint_invalid(self, ring4, standing_pose):
        peaks = np.array([c.project_points(standing_pose.joints)[0] for c in ring4])
        peaks[1:, 7] = np.nan
        pose = estimate.dlt_triangulate(peaks, ring4)
        assert not pose.validity[7] and pose.validity.sum() == 16
        assert np.abs(pose.joints[pose.validity] - standing_pose.joints[pose.validity]).max() < 1e-6

    def test_confidence_threshold(self, ring4, standing_pose):
        peaks = np.array([c.project_points(standing_pose.joints)[0] for c in ring4])
        conf = np.ones((4, 17))
        conf[:3, 2] = 0.05
        pose = estimate.dlt_triangulate(peaks, ring4, conf, min_confidence=0.1)
        assert not pose.validity[2]

    def test_noise_matches_nonlinear_oracle(self, ring4):
        # oracle: per-joint reprojection least squares started from the truth
        rng = np.random.default_rng(11)
        dlt_err, nl_err = [], []
        for i in range(15):
            gt = synth.sample_pose(rng, root=rng.uniform(-1, 1, 2))
            obs = np.array([c.project_points(gt.joints)[0] for c in ring4])
            obs += rng.normal(scale=2.0, size=obs.shape)
            dlt = estimate.dlt_triangulate(obs, ring4)
            dlt_err.append(metrics.mpjpe(dlt, gt))
            X = np.array([
                least_squares(lambda x, k=k: np.concatenate(
                    [c.project_points(x[None])[0][0] - obs[v, k] for v, c in enumerate(ring4)]),
                    gt.joints[k]).x
                for k in range(17)])
            nl_err.append(metrics.mpjpe(SkeletonPose(X), gt))
        a, b = np.mean(dlt_err), np.mean(nl_err)
        assert abs(a - b) <= 0.2 * b

    def test_bad_shape(self, ring4):
        with pytest.raises(ValueError):
            estimate.dlt_triangulate(np.zeros((3, 17, 2)), ring4)


class TestFilter:
    batch = [_estimate(4.2, 0), _estimate(6.0, 1), _estimate(7.1, 2)]

    def test_lambda_zero(self):
        assert estimate.filter_pseudo_labels(self.batch, 0.0) == []

    def test_lambda_inf(self):
        assert estimate.filter_pseudo_labels(self.batch, math.inf) == self.batch

    def test_strict_threshold(self):
        out = estimate.filter_pseudo_labels(self.batch, 6.0)
        assert [e.person_id for e in out] == [0]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 15), max_size=20), st.floats(0, 15))
    def test_sublist_and_idempotent(self, us, lam):
        batch = [_estimate(u, i) for i, u in enumerate(us)]
        out = estimate.filter_pseudo_labels(batch, lam)
        assert [e.person_id for e in out] == [i for i, u in enumerate(us) if u < lam]
        assert estimate.filter_pseudo_labels(out, lam) == out

    def test_json_round_trip(self, standing_pose):
        e = PersonEstimate(standing_pose, 3.25, 4)
        assert PersonEstimate.from_json(e.to_json()) == e


def _labels(pose, cams):
    return np.array([c.project_points(pose.joints)[0] for c in cams])


class TestRefine:
    def test_identity_at_minimum(self, ring4, standing_pose):
        out = estimate.refine(standing_pose, _labels(standing_pose, ring4), ring4)
        assert out.objective <= synth.PRIOR_TOL * 10 + 1e-9
        np.testing.assert_allclose(out.pose.joints, standing_pose.joints, atol=1e-9)

    def test_converges_from_offset(self, ring4, standing_pose):
        init = offset_pose(standing_pose, (0.05, 0.05, 0.05))
        out = estimate.refine(init, _labels(standing_pose, ring4), ring4)
        per = losses.l_2d(out.pose, _labels(standing_pose, ring4), ring4) / (17 * 4)
        assert per < 1e-3
        assert np.all(np.diff(out.history) <= 0)
        assert out.objective <= out.initial_objective

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31))
    def test_never_worse_than_init(self, seed):
        cams = ring_cameras()
        r = np.random.default_rng(seed)
        gt = synth.sample_pose(r)
        init = offset_pose(gt, r.normal(scale=0.1, size=(17, 3)))
        labels = _labels(gt, cams) + r.normal(scale=3.0, size=(4, 17, 2))
        res = estimate.refine(init, labels, cams,
                              settings=estimate.RefineSettings(iterations=10))
        assert res.objective <= res.initial_objective

    def test_underconstrained_warning(self, ring4, standing_pose):
        w = losses.LossWeights(wprior=0.0)
        with pytest.warns(estimate.UnderconstrainedWarning):
            estimate.refine_pose(standing_pose, _labels(standing_pose, ring4[:1]), ring4[:1], w,
                                 iterations=2)

    def test_no_warning_with_prior(self, ring4, standing_pose):
        with warnings.catch_warnings():
            warnings.simplefilter("error", estimate.UnderconstrainedWarning)
            estimate.refine_pose(standing_pose, _labels(standing_pose, ring4[:1]), ring4[:1],
                                 iterations=1)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_objective(self, ring4, standing_pose):
        # a pseudo 3D label near the float limit overflows the L1 sum
        far = standing_pose.with_joints(standing_pose.joints + 1.7e308)
        with pytest.raises(NonFiniteObjective):
            estimate.refine(standing_pose, _labels(standing_pose, ring4), ring4, pseudo3d=far)
