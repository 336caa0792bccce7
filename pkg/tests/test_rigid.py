import math
from collections import Counter

import numpy as np
import pytest

from downvio.rigid import (
    RigidMotion2D,
    TrackedMatch,
    _svd_2x2,
    estimate_motion,
    histogram_prefilter,
    solve_rigid_2d,
    to_center_origin,
)


def make_matches(prev, cur):
    return [TrackedMatch(p[0], p[1], q[0], q[1]) for p, q in zip(prev, cur)]


def apply_motion(points, du, dv, dpsi):
    c, s = math.cos(dpsi), math.sin(dpsi)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T + np.array([du, dv])


def prefilter_oracle(matches):
    """Independent histogram rule: modal 1-px bin per axis, +/-5 px band."""
    kept = []
    for axis in (0, 1):
        disp = [
            (m.cx - m.px, m.cy - m.py)[axis] for m in matches
        ]
        counts = Counter(math.floor(d + 0.5) for d in disp)
        best = min(counts, key=lambda k: (-counts[k], abs(k), k))
        kept.append([abs(d - best) <= 5.0 for d in disp])
    return [m for m, kx, ky in zip(matches, kept[0], kept[1]) if kx and ky]


class TestCenterOrigin:
    def test_center_pixel_maps_to_origin(self):
        assert to_center_origin(79.5, 59.5, 160, 120) == (0.0, 0.0)

    def test_corner_offsets(self):
        x, y = to_center_origin(0, 0, 160, 120)
        assert (x, y) == (-79.5, -59.5)


class TestSvd2x2:
    def test_matches_numpy_on_random_matrices(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            h = rng.normal(scale=10.0, size=(2, 2))
            u, s, vt = _svd_2x2(h)
            np.testing.assert_allclose(u @ np.diag(s) @ vt, h, atol=1e-9)
            np.testing.assert_allclose(u @ u.T, np.eye(2), atol=1e-12)
            np.testing.assert_allclose(vt @ vt.T, np.eye(2), atol=1e-12)
            s_ref = np.linalg.svd(h, compute_uv=False)
            np.testing.assert_allclose(s, s_ref, atol=1e-9)
            assert s[0] >= s[1] >= 0.0

    def test_rank_deficient(self):
        h = np.array([[3.0, 6.0], [1.0, 2.0]])
        u, s, vt = _svd_2x2(h)
        np.testing.assert_allclose(u @ np.diag(s) @ vt, h, atol=1e-12)
        assert s[1] == pytest.approx(0.0, abs=1e-12)


class TestHistogramPrefilter:
    def test_uniform_displacement_all_retained(self):
        prev = np.array([[0.0, 0.0], [5.0, 3.0], [-4.0, 7.0], [2.0, -6.0]])
        matches = make_matches(prev, prev + np.array([2.0, 1.0]))
        assert histogram_prefilter(matches) == matches

    def test_single_outlier_removed(self):
        prev = np.zeros((10, 2))
        cur = prev + np.array([2.0, 0.0])
        cur[9] = [30.0, 0.0]
        matches = make_matches(prev, cur)
        kept = histogram_prefilter(matches)
        assert kept == matches[:9]

    def test_uniform_spread_keeps_modal_band(self):
        rng = np.random.default_rng(33)
        prev = rng.uniform(-40, 40, size=(200, 2))
        disp = rng.uniform(-20, 20, size=(200, 2))
        matches = make_matches(prev, prev + disp)
        kept = histogram_prefilter(matches)
        assert kept == prefilter_oracle(matches)
        assert 0 < len(kept) < len(matches)

    def test_matches_oracle_on_random_inputs(self):
        rng = np.random.default_rng(34)
        for _ in range(20):
            n = int(rng.integers(1, 60))
            prev = rng.uniform(-50, 50, size=(n, 2))
            disp = rng.uniform(-12, 12, size=(n, 2))
            matches = make_matches(prev, np.round((prev + disp) * 2) / 2)
            assert histogram_prefilter(matches) == prefilter_oracle(matches)

    def test_empty_input(self):
        assert histogram_prefilter([]) == []


class TestSolveRigid2d:
    def test_identity(self):
        prev = np.array([[1.0, 2.0], [-3.0, 4.0], [5.0, -6.0]])
        m = solve_rigid_2d(make_matches(prev, prev))
        assert m.valid
        assert m.du == pytest.approx(0.0, abs=1e-12)
        assert m.dv == pytest.approx(0.0, abs=1e-12)
        assert m.dpsi == pytest.approx(0.0, abs=1e-12)

    def test_pure_translation_exact(self):
        prev = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [7.0, -3.0]])
        m = solve_rigid_2d(make_matches(prev, prev + np.array([4.0, -7.0])))
        assert m.valid
        assert m.du == pytest.approx(4.0, abs=1e-12)
        assert m.dv == pytest.approx(-7.0, abs=1e-12)
        assert m.dpsi == pytest.approx(0.0, abs=1e-12)

    def test_pure_rotation(self):
        rng = np.random.default_rng(55)
        prev = rng.uniform(-30, 30, size=(20, 2))
        cur = apply_motion(prev, 0.0, 0.0, 0.1)
        m = solve_rigid_2d(make_matches(prev, cur))
        assert m.dpsi == pytest.approx(0.1, abs=1e-9)
        assert abs(m.du) < 1e-9 and abs(m.dv) < 1e-9

    def test_random_rigid_motions_recovered(self):
        rng = np.random.default_rng(56)
        for _ in range(50):
            n = int(rng.integers(3, 40))
            prev = rng.uniform(-60, 60, size=(n, 2))
            if n == 3 and np.linalg.matrix_rank(prev - prev.mean(0)) < 2:
                continue
            du, dv = rng.uniform(-10, 10, size=2)
            dpsi = rng.uniform(-math.pi / 2, math.pi / 2)
            cur = apply_motion(prev, du, dv, dpsi)
            m = solve_rigid_2d(make_matches(prev, cur))
            assert m.valid
            assert m.du == pytest.approx(du, abs=1e-9)
            assert m.dv == pytest.approx(dv, abs=1e-9)
            assert m.dpsi == pytest.approx(dpsi, abs=1e-9)

    def test_mirrored_points_still_proper_rotation(self):
        # A reflection explains these matches exactly; the solver must
        # return the best proper rotation instead.
        prev = np.array([[10.0, 0.0], [0.0, 10.0], [-10.0, 0.0], [0.0, -10.0]])
        cur = prev * np.array([1.0, -1.0])
        m = solve_rigid_2d(make_matches(prev, cur))
        assert m.valid
        assert math.isfinite(m.dpsi)

    def test_too_few_matches_invalid(self):
        prev = np.array([[0.0, 0.0], [5.0, 5.0]])
        m = solve_rigid_2d(make_matches(prev, prev))
        assert not m.valid

    def test_coincident_points_invalid(self):
        prev = np.zeros((5, 2))
        m = solve_rigid_2d(make_matches(prev, prev + np.array([1.0, 2.0])))
        assert not m.valid


class TestEstimateMotion:
    def test_clean_data_matches_full_solve(self):
        rng = np.random.default_rng(77)
        prev = rng.uniform(-50, 50, size=(40, 2))
        cur = apply_motion(prev, 3.0, -2.0, 0.05)
        matches = make_matches(prev, cur)
        est = estimate_motion(matches)
        ref = solve_rigid_2d(matches)
        assert est.valid
        assert est.inlier_count == len(matches)
        assert est.inlier_count >= len(histogram_prefilter(matches))
        assert est.du == pytest.approx(ref.du, abs=1e-9)
        assert est.dv == pytest.approx(ref.dv, abs=1e-9)
        assert est.dpsi == pytest.approx(ref.dpsi, abs=1e-9)

    def test_monte_carlo_outlier_rejection(self):
        rng = np.random.default_rng(88)
        for _ in range(100):
            prev = rng.uniform(-60, 60, size=(100, 2))
            du, dv = rng.uniform(-6, 6, size=2)
            dpsi = rng.uniform(-0.08, 0.08)
            cur = apply_motion(prev, du, dv, dpsi)
            # corrupt 30 matches by at least 10 px
            idx = rng.choice(100, size=30, replace=False)
            ang = rng.uniform(0, 2 * math.pi, size=30)
            mag = rng.uniform(10.0, 25.0, size=30)
            cur[idx, 0] += mag * np.cos(ang)
            cur[idx, 1] += mag * np.sin(ang)
            m = estimate_motion(make_matches(prev, cur))
            assert m.valid
            assert m.du == pytest.approx(du, abs=0.05)
            assert m.dv == pytest.approx(dv, abs=0.05)
            assert m.dpsi == pytest.approx(dpsi, abs=0.001)

    def test_two_matches_invalid(self):
        matches = make_matches(np.zeros((2, 2)), np.ones((2, 2)))
        assert not estimate_motion(matches).valid

    def test_empty_invalid(self):
        assert not estimate_motion([]).valid

    def test_permutation_invariance(self):
        rng = np.random.default_rng(99)
        prev = rng.uniform(-40, 40, size=(60, 2))
        cur = apply_motion(prev, 1.0, 2.0, 0.03)
        cur[:10] += rng.uniform(8, 20, size=(10, 2))
        matches = make_matches(prev, cur)
        base = estimate_motion(matches)
        order = rng.permutation(60)
        shuffled = estimate_motion([matches[i] for i in order])
        assert shuffled.inlier_count == base.inlier_count
        assert shuffled.du == pytest.approx(base.du, abs=1e-9)
        assert shuffled.dv == pytest.approx(base.dv, abs=1e-9)
        assert shuffled.dpsi == pytest.approx(base.dpsi, abs=1e-9)

    def test_second_solve_reduces_squared_residual(self):
        rng = np.random.default_rng(111)
        for _ in range(5):
            prev = rng.uniform(-50, 50, size=(80, 2))
            cur = apply_motion(prev, 2.0, 1.0, 0.04)
            cur += rng.normal(scale=0.3, size=cur.shape)
            matches = make_matches(prev, cur)
            kept = histogram_prefilter(matches)
            first = solve_rigid_2d(kept)
            pred_first = apply_motion(prev, first.du, first.dv, first.dpsi)
            err_first = np.linalg.norm(cur - pred_first, axis=1)
            inlier = err_first <= 1.5
            second = estimate_motion(matches)
            assert second.inlier_count == int(inlier.sum())
            pred_second = apply_motion(
                prev, second.du, second.dv, second.dpsi
            )
            err_second = np.linalg.norm(cur - pred_second, axis=1)
            assert np.sum(err_second[inlier] ** 2) <= np.sum(
                err_first[inlier] ** 2
            ) + 1e-12


class TestRigidMotionType:
    def test_valid_implies_min_inliers(self):
        with pytest.raises(TypeError):
            RigidMotion2D(0.0)
