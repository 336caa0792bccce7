"""Synthetic planar-motion sequences with exact ground truth.

A trajectory is a list of waypoints; between consecutive waypoints every
coordinate (x, y, yaw, z) follows the C2 smootherstep ease, so velocity
and acceleration are analytic and vanish at the waypoints. Frames render
a pinhole view of an infinite plane textured with seeded multi-octave
value noise; inertial samples are the analytic derivatives expressed in
the camera frame plus gravity and configured noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Sequence
from .evaluation import StampedPose
from .fusion import CameraIntrinsics, Extrinsics, ImuSample, planar_cam_matrix
from .imgproc import Image8, gaussian_blur5, sobel3
from .superpoint import GRID_X, GRID_Y, SpOutput, write_spt

GRAVITY = 9.81

_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=79.5, cy=59.5, width=160, height=120)


def smootherstep(tau: np.ndarray | float) -> np.ndarray | float:
    return tau * tau * tau * (tau * (6.0 * tau - 15.0) + 10.0)


def smootherstep_d1(tau: np.ndarray | float) -> np.ndarray | float:
    return 30.0 * tau * tau * (tau - 1.0) * (tau - 1.0)


def smootherstep_d2(tau: np.ndarray | float) -> np.ndarray | float:
    return 60.0 * tau * (2.0 * tau - 1.0) * (tau - 1.0)


@dataclass(frozen=True)
class Waypoint:
    t: float
    x: float
    y: float
    yaw: float
    z: float


class Trajectory:
    """Piecewise smootherstep interpolation through waypoints."""

    def __init__(self, waypoints: list[Waypoint]):
        if len(waypoints) < 2:
            raise ValueError("need at least 2 waypoints")
        times = [w.t for w in waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must increase strictly")
        self.waypoints = list(waypoints)
        self.duration = times[-1] - times[0]

    def _segment(self, t: float) -> tuple[Waypoint, Waypoint, float, float]:
        ws = self.waypoints
        if t <= ws[0].t:
            return ws[0], ws[1], 0.0, ws[1].t - ws[0].t
        for a, b in zip(ws, ws[1:]):
            if t <= b.t:
                return a, b, (t - a.t) / (b.t - a.t), b.t - a.t
        a, b = ws[-2], ws[-1]
        return a, b, 1.0, b.t - a.t

    def pose(self, t: float) -> tuple[float, float, float, float]:
        a, b, tau, _ = self._segment(t)
        s = smootherstep(tau)
        return (
            a.x + (b.x - a.x) * s,
            a.y + (b.y - a.y) * s,
            a.yaw + (b.yaw - a.yaw) * s,
            a.z + (b.z - a.z) * s,
        )

    def velocity(self, t: float) -> tuple[float, float, float, float]:
        a, b, tau, span = self._segment(t)
        d = smootherstep_d1(tau) / span
        return ((b.x - a.x) * d, (b.y - a.y) * d, (b.yaw - a.yaw) * d, (b.z - a.z) * d)

    def acceleration(self, t: float) -> tuple[float, float, float, float]:
        a, b, tau, span = self._segment(t)
        d = smootherstep_d2(tau) / (span * span)
        return ((b.x - a.x) * d, (b.y - a.y) * d, (b.yaw - a.yaw) * d, (b.z - a.z) * d)


def _splitmix(v: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = v + _MIX1
        z = (z ^ (z >> np.uint64(30))) * _MIX2
        z = (z ^ (z >> np.uint64(27))) * _MIX3
        return z ^ (z >> np.uint64(31))


class ValueNoise:
    """Seeded, lattice-hashed value noise over the infinite plane."""

    def __init__(
        self,
        seed: int,
        base_cell_m: float = 0.2,
        octaves: int = 4,
        amplitude_decay: float = 0.5,
    ):
        if base_cell_m <= 0 or octaves < 1:
            raise ValueError("texture needs a positive cell size and >= 1 octave")
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.base_cell_m = base_cell_m
        self.octaves = octaves
        self.amplitude_decay = amplitude_decay

    def _lattice(self, ix: np.ndarray, iy: np.ndarray, octave: int) -> np.ndarray:
        base = _splitmix(ix.astype(np.int64).view(np.uint64) ^ self.seed)
        with np.errstate(over="ignore"):
            mixed = _splitmix(
                base ^ iy.astype(np.int64).view(np.uint64) ^ np.uint64(octave) * _MIX3
            )
        return mixed.astype(np.float64) / float(1 << 64)

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Noise value in [0, 1) at world coordinates (meters)."""
        total = np.zeros_like(np.asarray(x, dtype=np.float64))
        norm = 0.0
        amp = 1.0
        cell = self.base_cell_m
        for k in range(self.octaves):
            u = np.asarray(x, dtype=np.float64) / cell
            v = np.asarray(y, dtype=np.float64) / cell
            i0 = np.floor(u)
            j0 = np.floor(v)
            fu = smootherstep(u - i0)
            fv = smootherstep(v - j0)
            i0 = i0.astype(np.int64)
            j0 = j0.astype(np.int64)
            v00 = self._lattice(i0, j0, k)
            v10 = self._lattice(i0 + 1, j0, k)
            v01 = self._lattice(i0, j0 + 1, k)
            v11 = self._lattice(i0 + 1, j0 + 1, k)
            top = v00 + (v10 - v00) * fu
            bot = v01 + (v11 - v01) * fu
            total += (top + (bot - top) * fv) * amp
            norm += amp
            amp *= self.amplitude_decay
            cell *= 0.5
        return total / norm


@dataclass(frozen=True)
class SynthConfig:
    waypoints: tuple[Waypoint, ...]
    seed: int = 0
    frame_rate: float = 100.0
    imu_rate: float = 200.0
    tof_rate: float = 6.94
    accel_noise_std: float = 0.0
    gyro_noise_std: float = 0.0
    tof_noise_std: float = 0.0
    base_cell_m: float = 0.2
    octaves: int = 4
    amplitude_decay: float = 0.5
    contrast: float = 2.5
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)

    def __post_init__(self) -> None:
        if self.frame_rate < 1.0:
            raise ValueError("frame_rate must be at least 1 Hz")
        if self.imu_rate < self.frame_rate:
            raise ValueError("imu_rate must be at least the frame rate")
        Trajectory(list(self.waypoints))  # validates ordering


def render_frame(
    texture: ValueNoise,
    intr: CameraIntrinsics,
    x: float,
    y: float,
    yaw: float,
    z: float,
    contrast: float = 2.5,
) -> Image8:
    """Project the textured ground plane into the camera at (x, y, z, yaw)."""
    if z <= 0:
        raise ValueError("camera height must be positive")
    us = (np.arange(intr.width, dtype=np.float64) - intr.cx) / intr.fx * z
    vs = (np.arange(intr.height, dtype=np.float64) - intr.cy) / intr.fy * z
    du, dv = np.meshgrid(us, vs)
    c, s = math.cos(yaw), math.sin(yaw)
    px = x + c * du + s * dv
    py = y + s * du - c * dv
    val = texture.sample(px, py)
    val = 0.5 + (val - 0.5) * contrast
    pixels = np.clip(np.floor(val * 255.0 + 0.5), 0.0, 255.0).astype(np.uint8)
    return Image8(pixels)


def synth_generate(cfg: SynthConfig) -> Sequence:
    """Produce a fully populated in-memory sequence; deterministic per seed."""
    traj = Trajectory(list(cfg.waypoints))
    t0 = cfg.waypoints[0].t
    duration = traj.duration
    texture = ValueNoise(cfg.seed, cfg.base_cell_m, cfg.octaves, cfg.amplitude_decay)
    rng = np.random.default_rng(cfg.seed)
    intr = cfg.intrinsics

    frames: list[tuple[float, Image8]] = []
    ground_truth: list[StampedPose] = []
    n_frames = int(math.floor(duration * cfg.frame_rate + 1e-9)) + 1
    for k in range(n_frames):
        t = t0 + k / cfg.frame_rate
        x, y, yaw, z = traj.pose(t)
        frames.append((t, render_frame(texture, intr, x, y, yaw, z, cfg.contrast)))
        ground_truth.append(StampedPose.planar(t, x, y, z, yaw))

    imu: list[ImuSample] = []
    n_imu = int(math.floor(duration * cfg.imu_rate + 1e-9)) + 1
    for k in range(n_imu):
        t = t0 + k / cfg.imu_rate
        yaw = traj.pose(t)[2]
        ax_w, ay_w, _, az_w = traj.acceleration(t)
        yaw_rate = traj.velocity(t)[2]
        m = planar_cam_matrix(yaw)
        a_cam = m @ np.array([ax_w, ay_w])
        accel = np.array([a_cam[0], a_cam[1], GRAVITY + az_w])
        gyro = np.array([0.0, 0.0, yaw_rate])
        if cfg.accel_noise_std > 0:
            accel = accel + rng.normal(0.0, cfg.accel_noise_std, 3)
        if cfg.gyro_noise_std > 0:
            gyro = gyro + rng.normal(0.0, cfg.gyro_noise_std, 3)
        imu.append(ImuSample(t, tuple(accel), tuple(gyro)))

    tof: list[tuple[float, float]] = []
    n_tof = int(math.floor(duration * cfg.tof_rate + 1e-9)) + 1
    for k in range(n_tof):
        t = t0 + k / cfg.tof_rate
        z = traj.pose(t)[3]
        if cfg.tof_noise_std > 0:
            z += float(rng.normal(0.0, cfg.tof_noise_std))
        tof.append((t, z))

    return Sequence(
        frames=frames,
        imu=imu,
        tof=tof,
        ground_truth=ground_truth,
        intrinsics=intr,
        extrinsics=Extrinsics.identity(),
        name=f"synth-{cfg.seed}",
    )


def square_waypoints(
    side_m: float = 2.0, height_m: float = 1.0, total_s: float = 60.0
) -> tuple[Waypoint, ...]:
    """Translation-only square loop at constant height."""
    seg = total_s / 4.0
    corners = [(0.0, 0.0), (side_m, 0.0), (side_m, side_m), (0.0, side_m), (0.0, 0.0)]
    return tuple(
        Waypoint(i * seg, cx, cy, 0.0, height_m) for i, (cx, cy) in enumerate(corners)
    )


def out_and_back_waypoints(
    distance_m: float = 2.0, height_m: float = 1.0, total_s: float = 48.0
) -> tuple[Waypoint, ...]:
    """Forward leg, 180 degree turn, return leg, 180 degree turn."""
    leg, turn = total_s * 0.3125, total_s * 0.1875
    return (
        Waypoint(0.0, 0.0, 0.0, 0.0, height_m),
        Waypoint(leg, distance_m, 0.0, 0.0, height_m),
        Waypoint(leg + turn, distance_m, 0.0, math.pi, height_m),
        Waypoint(2 * leg + turn, 0.0, 0.0, math.pi, height_m),
        Waypoint(2 * leg + 2 * turn, 0.0, 0.0, 2 * math.pi, height_m),
    )


def _box_sum7(a: np.ndarray) -> np.ndarray:
    pad = np.pad(a, 3, mode="constant")
    c = np.cumsum(np.cumsum(pad, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)), mode="constant")
    h, w = a.shape
    return c[7 : 7 + h, 7 : 7 + w] - c[7 : 7 + h, :w] - c[:h, 7 : 7 + w] + c[:h, :w]


def sp_like_tensors(img: Image8) -> SpOutput:
    """Corner-strength heatmap and patch descriptors in the tensor layout
    consumed by the learned-feature tracker."""
    blurred = gaussian_blur5(img)
    grads = sobel3(blurred)
    gx = grads.ix.astype(np.float64)
    gy = grads.iy.astype(np.float64)
    sxx = _box_sum7(gx * gx)
    sxy = _box_sum7(gx * gy)
    syy = _box_sum7(gy * gy)
    score = sxx * syy - sxy * sxy - 0.04 * (sxx + syy) ** 2
    score = np.maximum(score, 0.0)
    peak = float(score.max())
    if peak > 0:
        score /= peak
    h, w = img.data.shape
    heat = np.zeros((64, GRID_X, GRID_Y), dtype=np.uint8)
    q = np.clip(np.floor(score * 255.0 + 0.5), 0, 255).astype(np.uint8)
    for c in range(64):
        ys = np.arange(GRID_Y) * 8 + c // 8
        xs = np.arange(GRID_X) * 8 + c % 8
        if ys[-1] < h and xs[-1] < w:
            heat[c] = q[np.ix_(ys, xs)].T

    padded = np.pad(blurred.data.astype(np.float64), 8, mode="edge")
    desc = np.zeros((256, GRID_X, GRID_Y), dtype=np.int8)
    for i in range(GRID_Y):
        for j in range(GRID_X):
            y0, x0 = i * 8 + 8 - 4, j * 8 + 8 - 4
            patch = padded[y0 : y0 + 16, x0 : x0 + 16].ravel()
            patch = patch - patch.mean()
            norm = float(np.linalg.norm(patch))
            if norm > 0:
                patch = patch / norm
            quant = np.sign(patch) * np.floor(np.abs(patch * 127.0) + 0.5)
            desc[:, j, i] = np.clip(quant, -128, 127).astype(np.int8)
    return SpOutput(
        heatmap=heat,
        heat_scale=1.0 / 255.0,
        heat_zero=0,
        descriptors=desc,
        desc_scale=1.0 / 127.0,
        desc_zero=0,
    )


def write_spout_tensors(seq: Sequence, directory: Path | str) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for i, (_, img) in enumerate(seq.frames):
        out = sp_like_tensors(img)
        write_spt(root / f"{i:010d}.heat.spt", out.heatmap, out.heat_scale, out.heat_zero)
        write_spt(
            root / f"{i:010d}.desc.spt",
            out.descriptors,
            out.desc_scale,
            out.desc_zero,
        )
