"""Release gate: one test per shipping criterion.

Every test prints a single ``[criterion N] PASS/FAIL`` line before its
assertions run, so a full run produces a nine-line scorecard (shown in the
terminal summary, or inline with ``pytest -s``) even when some criteria
fail. Tolerances are stated inline next to each assertion.
"""

import math
import time

import conftest
import numpy as np
from scipy.spatial.transform import Rotation

from downvio.bench import bench_orb, bench_px4flow
from downvio.blockflow import FlowConfig, block_flow
from downvio.evaluation import (
    absolute_errors,
    align_sim3,
    relative_translation_error,
)
from downvio.fusion import (
    FusionConfig,
    ImuSample,
    NavState,
    ekf_predict,
    ekf_update_flow,
    ekf_update_height,
    planar_cam_matrix,
)
from downvio.imgproc import Image8
from downvio.orb import Corner, fast_detect, harris_refine
from downvio.pipeline import PipelineConfig, run_reference, run_template
from downvio.rigid import estimate_motion, solve_rigid_2d
from downvio.synth import (
    SynthConfig,
    Waypoint,
    square_waypoints,
    synth_generate,
)
from oracles import (
    fast_oracle,
    harris_error_bound,
    harris_float_oracle,
    ladder_scene,
)
from test_blockflow import shifted_pair
from test_evaluation import noisy_copy, rte_oracle, wiggle_trajectory
from test_rigid import apply_motion, make_matches


def _report(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    conftest.scorecard.append(line)


def test_criterion_1_fast_matches_exhaustive_oracle():
    rng = np.random.default_rng(2001)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(50):
        data = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
        got = {
            (c.x, c.y): c.fast_score
            for c in fast_detect(Image8(data), 20, nms=False)
        }
        if got != fast_oracle(data, 20):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10.0
    _report(1, ok, f"50 images, {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 10.0


def test_criterion_2_harris_sign_and_ranking():
    rng = np.random.default_rng(2002)
    sign_checked = sign_bad = 0
    for _ in range(10):
        data = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
        corners = [
            Corner(x, y) for y in range(4, 60, 5) for x in range(4, 60, 5)
        ]
        scored = harris_refine(Image8(data), corners)
        oracle = harris_float_oracle(data, corners)
        for c, (f, mxx, mxy, myy) in zip(scored, oracle):
            if abs(f) > harris_error_bound(mxx, myy, mxy):
                sign_checked += 1
                if (c.harris_score > 0) != (f > 0):
                    sign_bad += 1

    ranking_agree = 0
    for _ in range(100):
        img = ladder_scene(rng)
        corners = fast_detect(img, 15)
        scored = harris_refine(img, corners)
        oracle = harris_float_oracle(img.data, corners)
        key_int = sorted(
            range(len(scored)),
            key=lambda i: (-scored[i].harris_score, scored[i].y, scored[i].x),
        )[:50]
        key_float = sorted(
            range(len(oracle)),
            key=lambda i: (-oracle[i][0], corners[i].y, corners[i].x),
        )[:50]
        ranking_agree += key_int == key_float

    ok = sign_checked > 0 and sign_bad == 0 and ranking_agree >= 95
    _report(
        2,
        ok,
        f"sign {sign_checked - sign_bad}/{sign_checked} beyond bound, "
        f"top-50 ranking {ranking_agree}/100",
    )
    assert sign_checked > 0
    assert sign_bad == 0
    assert ranking_agree >= 95


def test_criterion_3_flow_integer_exact_and_halfpixel_bounded():
    rng = np.random.default_rng(2003)
    int_total = int_exact = 0
    for du, dv in [(3, -2), (-4, 1), (4, 4), (-3, -4), (0, 2), (2, 0), (-1, 3), (1, -1)]:
        prev, cur = shifted_pair(rng, du, dv)
        valid = [
            f
            for f in block_flow(prev, cur, FlowConfig(enable_halfpixel=False))
            if f.valid
        ]
        int_total += len(valid)
        int_exact += sum(
            1 for f in valid if (f.du, f.dv) == (float(du), float(dv))
        )

    half_total = half_good = 0
    for du, dv in [(1.5, 0.0), (0.0, -2.5), (0.5, 0.5), (-1.5, 2.5), (2.5, -0.5), (-0.5, -1.5)]:
        prev, cur = shifted_pair(rng, du, dv)
        valid = [f for f in block_flow(prev, cur, FlowConfig()) if f.valid]
        half_total += len(valid)
        half_good += sum(
            1
            for f in valid
            if abs(f.du - du) <= 0.5 and abs(f.dv - dv) <= 0.5
        )

    ok = (
        int_total > 0
        and int_exact == int_total
        and half_total > 0
        and half_good >= 0.9 * half_total
    )
    _report(
        3,
        ok,
        f"integer {int_exact}/{int_total} exact, "
        f"half-pixel {half_good}/{half_total} within 0.5 px",
    )
    assert int_total > 0 and int_exact == int_total
    assert half_total > 0 and half_good >= 0.9 * half_total


def test_criterion_4_rigid_recovery_with_outliers():
    rng = np.random.default_rng(2004)
    worst = 0.0
    for _ in range(20):
        prev = rng.uniform(-60, 60, size=(50, 2))
        du, dv = rng.uniform(-6, 6, size=2)
        dpsi = float(rng.uniform(-0.1, 0.1))
        m = solve_rigid_2d(make_matches(prev, apply_motion(prev, du, dv, dpsi)))
        worst = max(worst, abs(m.du - du), abs(m.dv - dv), abs(m.dpsi - dpsi))

    successes = 0
    for _ in range(100):
        prev = rng.uniform(-60, 60, size=(100, 2))
        du, dv = rng.uniform(-6, 6, size=2)
        dpsi = float(rng.uniform(-0.08, 0.08))
        cur = apply_motion(prev, du, dv, dpsi)
        # corrupt 30% of the matches by 10 to 25 px
        idx = rng.choice(100, size=30, replace=False)
        ang = rng.uniform(0, 2 * math.pi, size=30)
        mag = rng.uniform(10.0, 25.0, size=30)
        cur[idx, 0] += mag * np.cos(ang)
        cur[idx, 1] += mag * np.sin(ang)
        m = estimate_motion(make_matches(prev, cur))
        if (
            m.valid
            and abs(m.du - du) <= 0.05
            and abs(m.dv - dv) <= 0.05
            and abs(m.dpsi - dpsi) <= 0.001
        ):
            successes += 1

    ok = worst <= 1e-9 and successes == 100
    _report(
        4,
        ok,
        f"noiseless worst error {worst:.1e}, outlier trials {successes}/100",
    )
    assert worst <= 1e-9
    assert successes == 100


def test_criterion_5_relative_error_oracle_and_alignment_inversion():
    rng = np.random.default_rng(2005)
    rte_worst = 0.0
    none_disagreements = 0
    for _ in range(10):
        gt = wiggle_trajectory(rng, n=250)
        traj = noisy_copy(gt, rng)
        lengths = [5.0, 10.0, 15.0]
        mine = relative_translation_error(traj, gt, lengths)
        ref = rte_oracle(traj, gt, lengths)
        for length in lengths:
            if (mine[length] is None) != (ref[length] is None):
                none_disagreements += 1
            elif mine[length] is not None:
                rte_worst = max(rte_worst, abs(mine[length] - ref[length]))

    align_worst = 0.0
    for _ in range(10):
        pts = rng.normal(0, 2, (50, 3))
        rot = Rotation.random(
            random_state=int(rng.integers(1 << 30))
        ).as_matrix()
        scale = float(rng.uniform(0.3, 3.0))
        trans = rng.normal(0, 5, 3)
        res = align_sim3(pts, scale * pts @ rot.T + trans)
        align_worst = max(
            align_worst,
            abs(res.scale - scale),
            float(np.abs(res.rotation - rot).max()),
            float(np.abs(res.translation - trans).max()),
        )

    ok = (
        none_disagreements == 0
        and rte_worst <= 1e-12
        and align_worst <= 1e-9
    )
    _report(
        5,
        ok,
        f"rte worst diff {rte_worst:.1e}, "
        f"alignment worst residual {align_worst:.1e}",
    )
    assert none_disagreements == 0
    assert rte_worst <= 1e-12
    assert align_worst <= 1e-9


def test_criterion_6_square_path_both_trackers():
    t0 = time.perf_counter()
    seq = synth_generate(
        SynthConfig(waypoints=square_waypoints(2.0, 1.0, 60.0), seed=20)
    )
    path_len_m = 8.0
    metrics: dict[str, tuple[float, float]] = {}
    for tracker in ("orb", "px4flow"):
        res = run_template(seq, PipelineConfig(tracker=tracker))
        errors = absolute_errors(
            res.poses, seq.ground_truth, align_window_s=60.0
        )
        metrics[tracker] = (
            float(errors[-1]),
            float(np.sqrt(np.mean(errors * errors))),
        )
    elapsed = time.perf_counter() - t0

    ok = elapsed < 300.0 and all(
        final <= 0.01 * path_len_m and rmse_m <= 0.05
        for final, rmse_m in metrics.values()
    )
    detail = ", ".join(
        f"{trk} final {final:.3f} m rmse {rmse_m:.3f} m"
        for trk, (final, rmse_m) in metrics.items()
    )
    _report(6, ok, f"{detail}, wall {elapsed:.0f}s")
    for final, rmse_m in metrics.values():
        assert final <= 0.01 * path_len_m
        assert rmse_m <= 0.05
    assert elapsed < 300.0


def test_criterion_7_runtime_scaling_by_setting():
    rows, fit = bench_px4flow()
    assert fit is not None
    orb_rows, ratio = bench_orb()
    ok = fit.r_squared >= 0.95 and fit.c2 > 0.0 and ratio <= 1.10
    _report(
        7,
        ok,
        f"search-radius quadratic R2 {fit.r_squared:.3f} (c2 {fit.c2:.4f}), "
        f"orb max/min timing ratio {ratio:.3f}",
    )
    assert fit.r_squared >= 0.95
    assert fit.c2 > 0.0
    assert ratio <= 1.10
    assert len(rows) == 5 and len(orb_rows) == 4


def test_criterion_8_template_beats_reference_on_turns():
    h = 1.0
    turn_waypoints = (
        Waypoint(0.0, 0.0, 0.0, 0.0, h),
        Waypoint(12.0, 2.0, 0.0, 0.0, h),
        Waypoint(15.0, 2.4, 0.4, math.pi / 2, h),
        Waypoint(18.0, 2.0, 0.8, math.pi, h),
        Waypoint(30.0, 0.0, 0.8, math.pi, h),
        Waypoint(33.0, -0.4, 1.2, 3 * math.pi / 2, h),
        Waypoint(36.0, 0.0, 1.6, 2 * math.pi, h),
    )
    noise = dict(
        accel_noise_std=0.05, gyro_noise_std=0.005, tof_noise_std=0.002
    )
    turns = synth_generate(
        SynthConfig(
            waypoints=turn_waypoints,
            seed=31,
            frame_rate=25.0,
            imu_rate=200.0,
            **noise,
        )
    )
    straight = synth_generate(
        SynthConfig(
            waypoints=square_waypoints(1.6, h, 32.0),
            seed=32,
            frame_rate=25.0,
            imu_rate=200.0,
            **noise,
        )
    )

    def rmse_of(poses, gt, window):
        e = absolute_errors(poses, gt, align_window_s=window)
        return float(np.sqrt(np.mean(e * e)))

    template_cfg = PipelineConfig(tracker="px4flow")
    reference_cfg = PipelineConfig(tracker="px4flow", mode="reference")
    turn_template = rmse_of(
        run_template(turns, template_cfg).poses, turns.ground_truth, 36.0
    )
    turn_reference = rmse_of(
        run_reference(turns, reference_cfg).poses, turns.ground_truth, 36.0
    )
    straight_template = rmse_of(
        run_template(straight, template_cfg).poses,
        straight.ground_truth,
        32.0,
    )
    straight_reference = rmse_of(
        run_reference(straight, reference_cfg).poses,
        straight.ground_truth,
        32.0,
    )

    ok = (
        turn_template < turn_reference
        and straight_reference <= 2.0 * straight_template
    )
    _report(
        8,
        ok,
        f"turns {turn_template:.3f} vs {turn_reference:.3f} m, "
        f"translation {straight_template:.3f} vs {straight_reference:.3f} m",
    )
    assert turn_template < turn_reference
    assert straight_reference <= 2.0 * straight_template


def test_criterion_9_covariance_health_over_random_cycles():
    rng = np.random.default_rng(2009)
    cfg = FusionConfig()
    s = NavState.initial(z=1.2)
    min_eig = math.inf
    predict_trace_bad = update_trace_bad = psi_bad = 0
    for i in range(10_000):
        dt = float(rng.uniform(0.005, 0.02))
        accel = (float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)), 9.81)
        gyro = (0.0, 0.0, float(rng.uniform(-0.5, 0.5)))
        before = float(np.trace(s.P))
        s = ekf_predict(s, ImuSample(0.0, accel, gyro), dt, cfg)
        if np.trace(s.P) < before - 1e-12:
            predict_trace_bad += 1

        vcam = planar_cam_matrix(s.psi) @ np.array([s.vx, s.vy])
        vcam = vcam + rng.normal(0, 0.05, 2)
        psi_obs = s.psi + float(rng.normal(0, 0.01))
        before = float(np.trace(s.P))
        s, accepted = ekf_update_flow(
            s,
            (float(vcam[0]), float(vcam[1]), psi_obs),
            (0.05, 0.05, 2e-3),
            cfg,
        )
        if accepted and np.trace(s.P) > before + 1e-12:
            update_trace_bad += 1

        if i % 7 == 0:
            range_m = max(0.3, s.z + float(rng.normal(0, 0.02)))
            before = float(np.trace(s.P))
            s, accepted = ekf_update_height(s, range_m, 0.0025, cfg)
            if accepted and np.trace(s.P) > before + 1e-12:
                update_trace_bad += 1

        min_eig = min(min_eig, float(np.linalg.eigvalsh(s.P).min()))
        if not (-math.pi < s.psi <= math.pi):
            psi_bad += 1

    ok = (
        min_eig >= -1e-9
        and predict_trace_bad == 0
        and update_trace_bad == 0
        and psi_bad == 0
    )
    _report(
        9,
        ok,
        f"10000 cycles, min covariance eigenvalue {min_eig:.1e}, "
        f"trace violations {predict_trace_bad + update_trace_bad}",
    )
    assert min_eig >= -1e-9
    assert predict_trace_bad == 0
    assert update_trace_bad == 0
    assert psi_bad == 0
