import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares

from conftest import offset_pose
from volpose import metrics, synth
from volpose.errors import DegenerateConfiguration, NoValidJoints
from volpose.geom import SimilarityTransform, SkeletonPose, apply_similarity, rotation_from_rotvec
from volpose.metrics import Box3D


def _random_similarity(r):
    return SimilarityTransform(r.uniform(0.5, 2.0), rotation_from_rotvec(r.normal(size=3)),
                               r.uniform(-3, 3, 3))


class TestMPJPE:
    def test_identical(self, standing_pose):
        assert metrics.mpjpe(standing_pose, standing_pose) == 0.0

    def test_offset(self, standing_pose):
        moved = offset_pose(standing_pose, (0.03, 0.0, 0.0))
        assert metrics.mpjpe(moved, standing_pose) == pytest.approx(30.0)

    def test_cutoff_excludes_large_errors(self, standing_pose):
        X = standing_pose.joints.copy()
        X[0] += (1.0, 0.0, 0.0)
        X[1:] += (0.01, 0.0, 0.0)
        pred = standing_pose.with_joints(X)
        assert metrics.mpjpe(pred, standing_pose) == pytest.approx((1000 + 16 * 10) / 17)
        assert metrics.mpjpe(pred, standing_pose, metrics.MPJPE_CUTOFF_MM) == pytest.approx(10.0)

    def test_cutoff_removing_everything(self, standing_pose):
        far = offset_pose(standing_pose, (1.0, 0.0, 0.0))
        assert math.isnan(metrics.mpjpe(far, standing_pose, 500.0))

    def test_invalid_joints_skipped(self, standing_pose):
        X = standing_pose.joints.copy()
        X[3] += 10.0
        v = np.ones(17, bool)
        v[3] = False
        assert metrics.mpjpe(SkeletonPose(X, v), standing_pose) == 0.0

    def test_no_valid_joints(self, standing_pose):
        with pytest.raises(NoValidJoints):
            metrics.mpjpe(SkeletonPose(standing_pose.joints, np.zeros(17, bool)), standing_pose)


class TestPAMPJPE:
    def test_similarity_removed(self, standing_pose, rng):
        for _ in range(20):
            pred = apply_similarity(_random_similarity(rng), standing_pose)
            assert metrics.pa_mpjpe(pred, standing_pose) < 1e-6

    def test_matches_numerical_minimizer(self, standing_pose, rng):
        # oracle: nonlinear least squares over (log s, rotation vector, t)
        for _ in range(5):
            pred = offset_pose(standing_pose, rng.normal(scale=0.03, size=(17, 3)))
            pred = apply_similarity(_random_similarity(rng), pred)
            P, G = pred.joints, standing_pose.joints

            def resid(x):
                R = rotation_from_rotvec(x[1:4])
                return (math.exp(x[0]) * P @ R.T + x[4:] - G).ravel()

            best = min((least_squares(resid, np.concatenate([[0.0], r0, np.zeros(3)]),
                                      xtol=1e-15, ftol=1e-15, gtol=1e-15)
                        for r0 in rng.normal(scale=2.0, size=(8, 3))), key=lambda s: s.cost)
            aligned = resid(best.x).reshape(17, 3)
            oracle = 1000 * np.linalg.norm(aligned, axis=1).mean()
            assert metrics.pa_mpjpe(pred, standing_pose) == pytest.approx(oracle, abs=1e-3)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_alignment_never_increases_squared_error(self, seed):
        r = np.random.default_rng(seed)
        gt = synth.sample_pose(seed)
        pred = SkeletonPose(gt.joints + r.normal(scale=0.2, size=(17, 3)))
        t = metrics.umeyama(pred.joints, gt.joints)
        before = np.sum((pred.joints - gt.joints) ** 2)
        after = np.sum((t.apply(pred.joints) - gt.joints) ** 2)
        assert after <= before + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_invariant_under_similarity_of_pred(self, seed):
        r = np.random.default_rng(seed)
        gt = synth.sample_pose(seed)
        pred = SkeletonPose(gt.joints + r.normal(scale=0.05, size=(17, 3)))
        moved = apply_similarity(_random_similarity(r), pred)
        assert metrics.pa_mpjpe(moved, gt) == pytest.approx(metrics.pa_mpjpe(pred, gt), abs=1e-9)
        assert metrics.pa_mpjpe(pred, gt) >= 0

    def test_reflection_excluded(self, standing_pose):
        mirrored = standing_pose.with_joints(standing_pose.joints * np.array([-1.0, 1.0, 1.0]))
        t = metrics.umeyama(mirrored.joints, standing_pose.joints)
        assert np.linalg.det(t.rotation) == pytest.approx(1.0)
        assert metrics.pa_mpjpe(mirrored, standing_pose) > 1.0

    @pytest.mark.parametrize("pts", [np.zeros((17, 3)),
                                     np.outer(np.arange(17.0), [1.0, 2.0, 3.0])])
    def test_degenerate(self, pts, standing_pose):
        with pytest.raises(DegenerateConfiguration):
            metrics.pa_mpjpe(SkeletonPose(pts), standing_pose)

    def test_too_few_points(self):
        with pytest.raises(DegenerateConfiguration):
            metrics.umeyama(np.eye(3)[:2], np.eye(3)[:2])


def _mc_iou(a, b, n, rng):
    corners = np.vstack([a.corners2d(), b.corners2d()])
    lo = np.concatenate([corners.min(0), [min(a.center[2] - a.size[2] / 2,
                                               b.center[2] - b.size[2] / 2)]])
    hi = np.concatenate([corners.max(0), [max(a.center[2] + a.size[2] / 2,
                                               b.center[2] + b.size[2] / 2)]])
    p = rng.uniform(lo, hi, size=(n, 3))
    ia, ib = a.contains(p), b.contains(p)
    return (ia & ib).sum() / max((ia | ib).sum(), 1)


class TestIoU:
    def test_identical(self):
        b = Box3D((1.0, 2.0, 0.9), (0.8, 0.8, 1.9), 0.3)
        assert metrics.iou3d(b, b) == pytest.approx(1.0)

    def test_half_overlap_cubes(self):
        a = Box3D((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        b = Box3D((0.5, 0.0, 0.0), (1.0, 1.0, 1.0))
        assert metrics.iou3d(a, b) == pytest.approx(1.0 / 3.0)

    def test_disjoint(self):
        a = Box3D((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        assert metrics.iou3d(a, Box3D((0.0, 0.0, 3.0), (1.0, 1.0, 1.0))) == 0.0
        assert metrics.iou3d(a, Box3D((3.0, 0.0, 0.0), (1.0, 1.0, 1.0))) == 0.0

    def test_monte_carlo(self):
        # oracle: fraction of uniform samples inside both boxes over inside either
        rng = np.random.default_rng(5)
        for _ in range(4):
            a = Box3D(rng.uniform(-0.2, 0.2, 3), rng.uniform(0.5, 1.5, 3), rng.uniform(-3, 3))
            b = Box3D(rng.uniform(-0.4, 0.4, 3), rng.uniform(0.5, 1.5, 3), rng.uniform(-3, 3))
            assert metrics.iou3d(a, b) == pytest.approx(_mc_iou(a, b, 1_000_000, rng), abs=0.005)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6),
           st.floats(-4, 4), st.floats(-4, 4))
    def test_symmetric_and_bounded(self, c, ya, yb):
        a = Box3D(c[:3], (0.8, 0.6, 1.9), ya)
        b = Box3D(c[3:], (0.7, 0.9, 1.5), yb)
        v = metrics.iou3d(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(metrics.iou3d(b, a), abs=1e-12)

    def test_monotone_in_separation(self):
        a = Box3D((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.4)
        vals = [metrics.iou3d(a, Box3D((d, 0.0, 0.0), (1.0, 1.0, 1.0), 0.4))
                for d in np.linspace(0, 1.2, 13)]
        assert np.all(np.diff(vals) <= 1e-12)

    def test_yaw_wrapped(self):
        assert Box3D((0, 0, 0), yaw=math.pi).yaw == pytest.approx(-math.pi)
        assert Box3D((0, 0, 0), yaw=7.0).yaw == pytest.approx(7.0 - 2 * math.pi)

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            Box3D((0, 0, 0), (0.0, 1.0, 1.0))

    def test_json_round_trip(self):
        b = Box3D((1.0, 2.0, 3.0), (0.5, 0.6, 1.7), 0.25, 0.9)
        assert Box3D.from_json(b.to_json()) == b


class TestBoxFromPose:
    def test_padded(self, standing_pose):
        b = metrics.box_from_pose(standing_pose)
        j = standing_pose.joints
        np.testing.assert_allclose(b.size, j.max(0) - j.min(0) + 0.2)
        assert b.contains(j).all()

    def test_constant_size(self, standing_pose):
        b = metrics.box_from_pose(standing_pose, constant_size=metrics.DEFAULT_BOX_SIZE)
        assert b.size == (0.8, 0.8, 1.9)
        assert b.center[2] - 0.95 == pytest.approx(standing_pose.joints[:, 2].min() - 0.1)


def _pr_oracle(flags, num_gt):
    # brute force: every cutoff of the ranked list gives one PR point
    pts = []
    for n in range(1, len(flags) + 1):
        tp = sum(flags[:n])
        pts.append((tp / num_gt, tp / n))
    ap, prev = 0.0, 0.0
    for r in sorted({r for r, _ in pts}):
        p = max(pp for rr, pp in pts if rr >= r)
        ap += (r - prev) * p
        prev = r
    return ap


def _unit(x, score):
    return Box3D((x, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0, score)


class TestAveragePrecision:
    def test_perfect(self):
        gts = [_unit(0, 1), _unit(5, 1), _unit(10, 1)]
        assert metrics.average_precision(gts, gts) == 1.0

    def test_no_detections(self):
        assert metrics.average_precision([], [_unit(0, 1)]) == 0.0

    def test_hand_constructed(self):
        gts = [_unit(0.0, 1), _unit(5.0, 1)]
        dets = [_unit(0.1, 0.9), _unit(20.0, 0.8), _unit(5.05, 0.7)]
        ap = metrics.average_precision(dets, gts, 0.5)
        assert ap == pytest.approx(0.5 * 1.0 + 0.5 * (2 / 3))
        assert ap == pytest.approx(_pr_oracle([True, False, True], 2))

    def test_duplicate_is_false_positive(self):
        gts = [_unit(0.0, 1)]
        dets = [_unit(0.0, 0.9), _unit(0.05, 0.8)]
        tp = metrics.match_detections(dets, gts, 0.5)
        assert tp.tolist() == [True, False]

    def test_random_against_oracle(self, rng):
        for _ in range(30):
            gts = [_unit(x, 1) for x in rng.uniform(0, 20, rng.integers(1, 6))]
            dets = [_unit(x, s) for x, s in zip(rng.uniform(0, 20, rng.integers(0, 8)),
                                                 rng.uniform(0, 1, 8))]
            flags = metrics.match_detections(dets, gts, 0.5).tolist()
            expected = _pr_oracle(flags, len(gts)) if flags else 0.0
            assert metrics.average_precision(dets, gts) == pytest.approx(expected)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 10), st.floats(0.01, 1)), max_size=8),
           st.lists(st.floats(0, 10), min_size=1, max_size=5))
    def test_bounded_and_low_fp_never_helps(self, dets, gts):
        D = [_unit(x, s) for x, s in dets]
        G = [_unit(x, 1) for x in gts]
        ap = metrics.average_precision(D, G)
        assert 0.0 <= ap <= 1.0
        worse = D + [_unit(100.0, 0.001)]
        assert metrics.average_precision(worse, G) <= ap + 1e-12

    def test_pooled_frames(self):
        frame = ([_unit(0.0, 0.9)], [_unit(0.0, 1)])
        empty = ([_unit(3.0, 0.5)], [])
        assert metrics.average_precision_frames([frame, empty]) == pytest.approx(1.0)
        assert metrics.average_precision_frames([([], [_unit(0, 1)])]) == 0.0
