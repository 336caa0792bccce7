"""Sensor-frame alignment, metric scaling, and EKF fusion.

The filter state is planar: position (x, y, z), yaw, and lateral velocity
in the world frame, with a 6x6 covariance. Visual observations arrive in
the camera frame, whose planar axes relate to the world through the
involution M(psi) = [[cos, sin], [sin, -cos]] (image x right, image y down,
camera looking along -z world). Roll and pitch are assumed zero; gravity is
assumed removed from the planar accelerometer components by level flight.

Also hosts the dead-reckoning step of the reference mode, which consumes
the dominant scene flow and the gyroscope only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blockflow import FlowVector, dominant_flow
from .rigid import RigidMotion2D

STATE_DIM = 6  # x, y, z, psi, vx, vy


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    return -(((-a + math.pi) % (2.0 * math.pi)) - math.pi)


def planar_cam_matrix(psi: float) -> np.ndarray:
    """World/camera planar axis map at yaw ``psi`` (involutory: M == M^-1)."""
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, s], [s, -c]])


@dataclass(frozen=True)
class ImuSample:
    """One inertial sample: body-frame specific force and angular rate."""

    timestamp: float
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


def _check_rotation(t: np.ndarray, name: str) -> None:
    if t.shape != (4, 4):
        raise ValueError(f"{name} must be 4x4")
    r = t[:3, :3]
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
        raise ValueError(f"{name} rotation block is not orthonormal")
    if np.linalg.det(r) < 0:
        raise ValueError(f"{name} rotation block is a reflection")


@dataclass(frozen=True)
class Extrinsics:
    """Rigid transforms from the IMU and range-sensor frames to the camera."""

    cam_from_imu: np.ndarray
    cam_from_tof: np.ndarray

    def __post_init__(self) -> None:
        _check_rotation(np.asarray(self.cam_from_imu, dtype=np.float64), "cam_from_imu")
        _check_rotation(np.asarray(self.cam_from_tof, dtype=np.float64), "cam_from_tof")

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(4), np.eye(4))


@dataclass(frozen=True)
class FusionConfig:
    """Process/measurement noise and gating defaults, all overridable."""

    q_accel: float = 0.35  # (m/s^2)^2 per second, drives vx, vy
    q_gyro: float = 0.01  # (rad/s)^2 per second, drives psi
    q_height: float = 1e-4  # m^2 per second, keeps z adaptable
    r_flow_vel: float = 0.05  # (m/s)^2
    r_yaw_rate: float = 0.002  # (rad/s)^2, scaled by dt^2 for the yaw obs
    r_tof_factor: float = 0.0015  # relative range repeatability
    gate_sigma: float = 5.0
    tof_max_range: float = 4.0


@dataclass
class NavState:
    """Planar navigation state with covariance."""

    x: float
    y: float
    z: float
    psi: float
    vx: float
    vy: float
    P: np.ndarray

    @classmethod
    def initial(
        cls, z: float = 0.0, pos_var: float = 1e-4, vel_var: float = 1e-2
    ) -> "NavState":
        p = np.diag([pos_var, pos_var, pos_var, 1e-4, vel_var, vel_var])
        return cls(0.0, 0.0, z, 0.0, 0.0, 0.0, p)


def to_camera_frame(sample: ImuSample, ext: Extrinsics) -> ImuSample:
    """Rotate an inertial sample into the camera frame.

    Only the rotation block applies; the lever arm between the sensors is
    ignored.
    """
    r = np.asarray(ext.cam_from_imu, dtype=np.float64)[:3, :3]
    accel = r @ np.asarray(sample.accel, dtype=np.float64)
    gyro = r @ np.asarray(sample.gyro, dtype=np.float64)
    return ImuSample(sample.timestamp, tuple(accel), tuple(gyro))


def pixel_to_metric(
    m: RigidMotion2D,
    height_m: float,
    intr: CameraIntrinsics,
    dt_s: float,
) -> tuple[float, float, float]:
    """Scale pixel motion to camera-frame velocity and yaw rate.

    v = d_pix * z / (f * dt) per axis; yaw rate is the measured rotation
    over dt.
    """
    if height_m <= 0:
        raise ValueError(f"height must be positive, got {height_m}")
    if dt_s <= 0:
        raise ValueError(f"dt must be positive, got {dt_s}")
    vx = m.du * height_m / (intr.fx * dt_s)
    vy = m.dv * height_m / (intr.fy * dt_s)
    return vx, vy, m.dpsi / dt_s


def ekf_predict(s: NavState, imu: ImuSample, dt_s: float, cfg: FusionConfig) -> NavState:
    """Propagate the state with one camera-frame inertial sample.

    Yaw integrates the gyro z rate; the planar specific force maps to world
    axes at the propagated yaw and drives velocity and position. The
    covariance follows the transition Jacobian plus process noise.
    """
    if dt_s <= 0:
        raise ValueError(f"dt must be positive, got {dt_s}")
    ax, ay = float(imu.accel[0]), float(imu.accel[1])
    psi = wrap_angle(s.psi + float(imu.gyro[2]) * dt_s)
    c, si = math.cos(psi), math.sin(psi)
    awx = c * ax + si * ay
    awy = si * ax - c * ay
    # d(a_world)/d(psi): derivative of the involution at the new yaw
    dax = -si * ax + c * ay
    day = c * ax + si * ay
    vx = s.vx + awx * dt_s
    vy = s.vy + awy * dt_s
    x = s.x + s.vx * dt_s + 0.5 * awx * dt_s * dt_s
    y = s.y + s.vy * dt_s + 0.5 * awy * dt_s * dt_s

    f = np.eye(STATE_DIM)
    f[0, 4] = dt_s
    f[1, 5] = dt_s
    f[0, 3] = 0.5 * dax * dt_s * dt_s
    f[1, 3] = 0.5 * day * dt_s * dt_s
    f[4, 3] = dax * dt_s
    f[5, 3] = day * dt_s
    q = np.diag(
        [
            0.0,
            0.0,
            cfg.q_height * dt_s,
            cfg.q_gyro * dt_s,
            cfg.q_accel * dt_s,
            cfg.q_accel * dt_s,
        ]
    )
    p = f @ s.P @ f.T + q
    p = 0.5 * (p + p.T)
    return NavState(x, y, s.z, psi, vx, vy, p)


def _joseph_update(
    s: NavState, h: np.ndarray, innov: np.ndarray, r: np.ndarray, gate_sigma: float
) -> tuple[NavState, bool]:
    """Gated linear update; returns the new state and acceptance."""
    p = s.P
    sc = h @ p @ h.T + r
    si = np.linalg.inv(sc)
    d2 = float(innov @ si @ innov)
    if d2 > gate_sigma * gate_sigma * len(innov):
        return s, False
    k = p @ h.T @ si
    delta = k @ innov
    ikh = np.eye(STATE_DIM) - k @ h
    p_new = ikh @ p @ ikh.T + k @ r @ k.T
    p_new = 0.5 * (p_new + p_new.T)
    return (
        NavState(
            s.x + delta[0],
            s.y + delta[1],
            s.z + delta[2],
            wrap_angle(s.psi + delta[3]),
            s.vx + delta[4],
            s.vy + delta[5],
            p_new,
        ),
        True,
    )


def ekf_update_flow(
    s: NavState,
    meas: tuple[float, float, float],
    r_noise: tuple[float, float, float],
    cfg: FusionConfig | None = None,
) -> tuple[NavState, bool]:
    """Fuse one visual rigid-body observation.

    ``meas`` is (vx_cam, vy_cam, psi_obs): planar camera-frame velocity and
    an absolute yaw observation that the caller assembles as previous fused
    yaw plus the visually measured increment (so its noise is the yaw-rate
    noise scaled by dt^2). Velocity rows observe M(psi) @ (vx, vy); the
    innovation is gated at ``gate_sigma`` Mahalanobis. Returns the new
    state and whether the measurement was accepted.
    """
    cfg = cfg or FusionConfig()
    c, si = math.cos(s.psi), math.sin(s.psi)
    h = np.zeros((3, STATE_DIM))
    h[0, 4] = c
    h[0, 5] = si
    h[0, 3] = -si * s.vx + c * s.vy
    h[1, 4] = si
    h[1, 5] = -c
    h[1, 3] = c * s.vx + si * s.vy
    h[2, 3] = 1.0
    pred = np.array([c * s.vx + si * s.vy, si * s.vx - c * s.vy, s.psi])
    innov = np.array(meas, dtype=np.float64) - pred
    innov[2] = wrap_angle(innov[2])
    r = np.diag(r_noise).astype(np.float64)
    return _joseph_update(s, h, innov, r, cfg.gate_sigma)


def ekf_update_height(
    s: NavState, range_m: float, r_noise: float, cfg: FusionConfig | None = None
) -> tuple[NavState, bool]:
    """Fuse one range measurement into z; ranges past the sensor maximum
    are ignored."""
    cfg = cfg or FusionConfig()
    if range_m <= 0:
        raise ValueError(f"range must be positive, got {range_m}")
    if range_m > cfg.tof_max_range:
        return s, False
    h = np.zeros((1, STATE_DIM))
    h[0, 2] = 1.0
    innov = np.array([range_m - s.z])
    r = np.array([[r_noise]])
    return _joseph_update(s, h, innov, r, cfg.gate_sigma)


def reference_pipeline_step(
    flows: list[FlowVector],
    gyro: tuple[float, float, float],
    dt_s: float,
    height_m: float,
    intr: CameraIntrinsics,
) -> tuple[float, float, float]:
    """Original-sensor style velocity from dominant flow and gyro only.

    The modal scene flow is compensated for rotation-induced image motion
    (roll and pitch rates shift the whole image by (-fx * wy, +fy * wx) * dt
    at the center), scaled to metric velocity, and paired with the gyro yaw
    rate. Returns (vx_cam, vy_cam, yaw_rate) for dead reckoning.
    """
    if dt_s <= 0:
        raise ValueError(f"dt must be positive, got {dt_s}")
    if height_m <= 0:
        raise ValueError(f"height must be positive, got {height_m}")
    du, dv = dominant_flow(flows)
    du_t = du - (-intr.fx * float(gyro[1]) * dt_s)
    dv_t = dv - (intr.fy * float(gyro[0]) * dt_s)
    vx = du_t * height_m / (intr.fx * dt_s)
    vy = dv_t * height_m / (intr.fy * dt_s)
    return vx, vy, float(gyro[2])
