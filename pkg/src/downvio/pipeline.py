"""Frame-by-frame odometry orchestration.

Template mode: tracker matches -> planar rigid-body fit -> metric scaling
-> EKF (inertial prediction between frames, visual + range updates).
Reference mode mirrors the original optical-flow sensor: modal block flow,
gyro-only rotation handling, dead-reckoned integration, raw range height.

Conventions owned here: measured pixel motion is feature motion, so the
camera velocity is its negation; the visually measured yaw increment is
added to the previous frame's fused yaw to form an absolute yaw
observation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .blockflow import FlowConfig, block_flow, flows_to_matches
from .dataset import Sequence
from .evaluation import StampedPose
from .fusion import (
    FusionConfig,
    NavState,
    ekf_predict,
    ekf_update_flow,
    ekf_update_height,
    pixel_to_metric,
    planar_cam_matrix,
    reference_pipeline_step,
    to_camera_frame,
    wrap_angle,
)
from .orb import DetectorThresholds, detect_and_describe, match_hamming
from .rigid import RigidMotion2D, TrackedMatch, estimate_motion
from .superpoint import (
    MissingTensorError,
    decode_keypoints,
    load_sp_output,
    match_cosine,
    sample_descriptors,
)

TRACKERS = ("orb", "px4flow", "superpoint")
MODES = ("template", "reference")
STAGES = ("tracking", "rigid_body", "fusion", "bookkeeping")


class ConfigConflictError(ValueError):
    """Raised for tracker/mode combinations the pipeline does not define."""


@dataclass(frozen=True)
class PipelineConfig:
    tracker: str = "orb"
    mode: str = "template"
    flow: FlowConfig = field(default_factory=FlowConfig)
    thresholds: DetectorThresholds = field(default_factory=DetectorThresholds)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    sp_score_threshold: float = 0.15
    sp_min_similarity: float = 0.75
    max_displacement_px: float | None = None
    initial_height_m: float = 1.0

    def __post_init__(self) -> None:
        if self.tracker not in TRACKERS:
            raise ConfigConflictError(f"unknown tracker '{self.tracker}'")
        if self.mode not in MODES:
            raise ConfigConflictError(f"unknown mode '{self.mode}'")
        if self.mode == "reference" and self.tracker != "px4flow":
            raise ConfigConflictError(
                "reference mode models the original flow sensor and requires "
                f"the px4flow tracker, not '{self.tracker}'"
            )


@dataclass
class PipelineResult:
    poses: list[StampedPose]
    stage_seconds: dict[str, float]
    total_seconds: float
    frame_count: int
    flow_updates_accepted: int = 0
    flow_updates_rejected: int = 0
    invalid_motion_frames: int = 0

    def mean_ms(self, stage: str) -> float:
        if self.frame_count == 0:
            return 0.0
        return self.stage_seconds[stage] / self.frame_count * 1000.0


class _Stopwatch:
    """Accumulates wall time into named stages with no gaps in between."""

    def __init__(self) -> None:
        self.stage_seconds = {s: 0.0 for s in STAGES}
        self.total = 0.0
        self._t0 = 0.0
        self._last = 0.0

    def start_frame(self) -> None:
        self._t0 = time.perf_counter()
        self._last = self._t0

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.stage_seconds[stage] += now - self._last
        self._last = now

    def end_frame(self) -> None:
        self.total += time.perf_counter() - self._t0


def _filter_displacement(
    matches: list[TrackedMatch], limit: float | None
) -> list[TrackedMatch]:
    if limit is None:
        return matches
    return [
        m
        for m in matches
        if math.hypot(m.cx - m.px, m.cy - m.py) <= limit
    ]


def _tracker_quantum_px(cfg: PipelineConfig) -> float:
    """Position resolution of the tracker's displacement output."""
    if cfg.tracker == "px4flow" and cfg.flow.enable_halfpixel:
        return 0.5
    return 1.0


def _rotation_lever_px(matches: list[TrackedMatch]) -> float:
    """Effective lever arm of the match set around its centroid.

    A displacement error of e px shared by the matches can masquerade as a
    rotation of at most e / lever radians in the least-squares fit.
    """
    xs = np.array([m.px for m in matches])
    ys = np.array([m.py for m in matches])
    r2 = (xs - xs.mean()) ** 2 + (ys - ys.mean()) ** 2
    total = float(r2.sum())
    if total <= 0.0:
        return 0.0
    return total / float(np.sqrt(r2).sum())


def _shrink_toward(value: float, center: float, allowance: float) -> float:
    innov = value - center
    if abs(innov) <= allowance:
        return center
    return value - math.copysign(allowance, innov)


def _discount_quantized_flow(
    meas_v: list[float],
    psi_obs: float,
    state: NavState,
    motion: RigidMotion2D,
    matches: list[TrackedMatch],
    quantum_px: float,
    scales: tuple[float, float],
) -> tuple[list[float], float]:
    """Discount flow readings at the tracker's resolution limit.

    Displacements at or below one quantization step round identically
    across the whole image (every patch sees the same sub-pixel shift), so
    averaging matches cannot recover the fraction the tracker dropped. The
    reading then only brackets the truth within half a step; shrink each
    innovation by that allowance and let inertial propagation carry the
    state through the dead zone. The yaw observation inherits the same
    bracket through the rigid fit, scaled down by the match lever arm.
    """
    pred_v = planar_cam_matrix(state.psi) @ np.array([state.vx, state.vy])
    disp = (motion.du, motion.dv)
    for i in range(2):
        if abs(disp[i]) > quantum_px + 1e-9:
            continue
        allowance = 0.5 * quantum_px * scales[i]
        meas_v[i] = _shrink_toward(meas_v[i], float(pred_v[i]), allowance)
    if max(abs(disp[0]), abs(disp[1])) <= quantum_px + 1e-9:
        lever = _rotation_lever_px(matches)
        if lever > 0.0:
            allowance = 0.5 * quantum_px / lever
            innov = wrap_angle(psi_obs - state.psi)
            psi_obs = state.psi + _shrink_toward(innov, 0.0, allowance)
    return meas_v, psi_obs


class _OrbTracker:
    def __init__(self, cfg: PipelineConfig):
        self.thresholds = cfg.thresholds
        self.features = None

    def begin(self, seq: Sequence, index: int, img) -> None:
        feats, self.thresholds = detect_and_describe(img, self.thresholds)
        self._pending = feats

    def matches(self, seq: Sequence, img) -> list[TrackedMatch]:
        intr = seq.intrinsics
        return match_hamming(self.features, self._pending, intr.width, intr.height)

    def advance(self) -> None:
        self.features = self._pending


class _SuperpointTracker:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.features = None

    def begin(self, seq: Sequence, index: int, img) -> None:
        if seq.spout_dir is None:
            raise MissingTensorError(
                "superpoint tracker needs precomputed tensors in spout/"
            )
        out = load_sp_output(seq.spout_dir, index)
        keypoints = decode_keypoints(out, self.cfg.sp_score_threshold)
        self._pending = sample_descriptors(out, keypoints)

    def matches(self, seq: Sequence, img) -> list[TrackedMatch]:
        intr = seq.intrinsics
        return match_cosine(
            self.features,
            self._pending,
            self.cfg.sp_min_similarity,
            intr.width,
            intr.height,
        )

    def advance(self) -> None:
        self.features = self._pending


def run_template(seq: Sequence, cfg: PipelineConfig) -> PipelineResult:
    intr = seq.intrinsics
    fcfg = cfg.fusion
    z0 = seq.tof[0][1] if seq.tof else cfg.initial_height_m
    state = NavState.initial(z=z0)
    tracker = _OrbTracker(cfg) if cfg.tracker == "orb" else None
    if cfg.tracker == "superpoint":
        tracker = _SuperpointTracker(cfg)

    watch = _Stopwatch()
    poses: list[StampedPose] = []
    result = PipelineResult(poses, watch.stage_seconds, 0.0, len(seq.frames))
    imu_i = tof_i = 0
    last_imu_t = seq.frames[0][0] if seq.frames else 0.0
    prev_t = None
    prev_img = None
    prev_psi = 0.0

    for index, (t, img) in enumerate(seq.frames):
        watch.start_frame()
        while imu_i < len(seq.imu) and seq.imu[imu_i].timestamp <= t + 1e-12:
            sample = to_camera_frame(seq.imu[imu_i], seq.extrinsics)
            dt = sample.timestamp - last_imu_t
            if dt > 1e-12:
                state = ekf_predict(state, sample, dt, fcfg)
            last_imu_t = sample.timestamp
            imu_i += 1
        while tof_i < len(seq.tof) and seq.tof[tof_i][0] <= t + 1e-12:
            rng_m = seq.tof[tof_i][1]
            state, _ = ekf_update_height(
                state, rng_m, (fcfg.r_tof_factor * rng_m) ** 2, fcfg
            )
            tof_i += 1
        watch.lap("fusion")

        if cfg.tracker == "px4flow":
            matches = []
            if prev_img is not None:
                flows = block_flow(prev_img, img, cfg.flow)
                matches = flows_to_matches(flows)
            watch.lap("tracking")
            motion = estimate_motion(matches) if matches else None
            watch.lap("rigid_body")
        else:
            tracker.begin(seq, index, img)
            matches = []
            if tracker.features is not None:
                matches = _filter_displacement(
                    tracker.matches(seq, img), cfg.max_displacement_px
                )
            tracker.advance()
            watch.lap("tracking")
            motion = estimate_motion(matches) if matches else None
            watch.lap("rigid_body")

        if prev_t is not None and motion is not None and motion.valid:
            dt_frame = t - prev_t
            du_v, dv_v, _ = pixel_to_metric(motion, state.z, intr, dt_frame)
            psi_obs = prev_psi + motion.dpsi
            meas_v, psi_obs = _discount_quantized_flow(
                [-du_v, -dv_v],
                psi_obs,
                state,
                motion,
                matches,
                _tracker_quantum_px(cfg),
                (
                    state.z / (intr.fx * dt_frame),
                    state.z / (intr.fy * dt_frame),
                ),
            )
            meas = (meas_v[0], meas_v[1], psi_obs)
            noise = (
                fcfg.r_flow_vel,
                fcfg.r_flow_vel,
                fcfg.r_yaw_rate * dt_frame * dt_frame,
            )
            state, accepted = ekf_update_flow(state, meas, noise, fcfg)
            if accepted:
                result.flow_updates_accepted += 1
            else:
                result.flow_updates_rejected += 1
        elif prev_t is not None:
            result.invalid_motion_frames += 1
        watch.lap("fusion")

        poses.append(StampedPose.planar(t, state.x, state.y, state.z, state.psi))
        prev_t, prev_img, prev_psi = t, img, state.psi
        watch.lap("bookkeeping")
        watch.end_frame()

    result.total_seconds = watch.total
    return result


def run_reference(seq: Sequence, cfg: PipelineConfig) -> PipelineResult:
    intr = seq.intrinsics
    z = seq.tof[0][1] if seq.tof else cfg.initial_height_m
    x = y = psi = 0.0

    watch = _Stopwatch()
    poses: list[StampedPose] = []
    result = PipelineResult(poses, watch.stage_seconds, 0.0, len(seq.frames))
    imu_i = tof_i = 0
    last_imu_t = seq.frames[0][0] if seq.frames else 0.0
    prev_t = None
    prev_img = None
    prev_psi = 0.0

    for t, img in seq.frames:
        watch.start_frame()
        gyro_x = []
        gyro_y = []
        while imu_i < len(seq.imu) and seq.imu[imu_i].timestamp <= t + 1e-12:
            sample = to_camera_frame(seq.imu[imu_i], seq.extrinsics)
            dt = sample.timestamp - last_imu_t
            if dt > 1e-12:
                psi += sample.gyro[2] * dt
            gyro_x.append(sample.gyro[0])
            gyro_y.append(sample.gyro[1])
            last_imu_t = sample.timestamp
            imu_i += 1
        while tof_i < len(seq.tof) and seq.tof[tof_i][0] <= t + 1e-12:
            z = seq.tof[tof_i][1]
            tof_i += 1
        watch.lap("fusion")

        flows = block_flow(prev_img, img, cfg.flow) if prev_img is not None else []
        watch.lap("tracking")

        if prev_t is not None:
            dt_frame = t - prev_t
            gyro = (
                float(np.mean(gyro_x)) if gyro_x else 0.0,
                float(np.mean(gyro_y)) if gyro_y else 0.0,
                0.0,
            )
            vx_f, vy_f, _ = reference_pipeline_step(flows, gyro, dt_frame, z, intr)
            watch.lap("rigid_body")
            # camera velocity is the negated feature velocity; rotate to
            # world axes at the mid-interval yaw
            m = planar_cam_matrix(0.5 * (psi + prev_psi))
            v_world = m @ np.array([-vx_f, -vy_f])
            x += float(v_world[0]) * dt_frame
            y += float(v_world[1]) * dt_frame
            watch.lap("fusion")
        else:
            watch.lap("rigid_body")

        poses.append(StampedPose.planar(t, x, y, z, psi))
        prev_t, prev_img, prev_psi = t, img, psi
        watch.lap("bookkeeping")
        watch.end_frame()

    result.total_seconds = watch.total
    return result


def run_pipeline(seq: Sequence, cfg: PipelineConfig) -> PipelineResult:
    if not seq.frames:
        raise ValueError("sequence holds no frames")
    if cfg.mode == "reference":
        return run_reference(seq, cfg)
    return run_template(seq, cfg)
