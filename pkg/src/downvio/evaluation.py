"""Trajectory file I/O, timestamp association, alignment, and error metrics.

Estimates and ground truth are exchanged as TUM-format text files
(``timestamp tx ty tz qx qy qz qw`` per line). Metrics follow the usual
odometry-benchmark pair: absolute RMSE after a similarity alignment on an
initial window, and relative translation error over fixed path lengths
with per-start re-anchoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_MAX_DT_S = 0.02
DEFAULT_ALIGN_WINDOW_S = 10.0


class TrajectoryFormatError(ValueError):
    """Raised for malformed trajectory files, with the offending line."""


class AssociationError(ValueError):
    """Raised when two trajectories share no timestamps within tolerance."""


class DegenerateGeometryError(ValueError):
    """Raised when alignment geometry is under-determined."""


@dataclass(frozen=True)
class StampedPose:
    """One trajectory sample: position plus unit quaternion (x, y, z, w)."""

    timestamp: float
    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.position, dtype=np.float64)
        quat = np.asarray(self.quaternion, dtype=np.float64)
        if pos.shape != (3,) or quat.shape != (4,):
            raise ValueError("position must be a 3-vector, quaternion a 4-vector")
        if abs(np.linalg.norm(quat) - 1.0) > 1e-9:
            raise ValueError("quaternion must have unit norm")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "quaternion", quat)

    @classmethod
    def planar(cls, t: float, x: float, y: float, z: float, yaw: float) -> "StampedPose":
        return cls(t, np.array([x, y, z]), quaternion_from_yaw(yaw))

    @property
    def yaw(self) -> float:
        return yaw_from_quaternion(self.quaternion)


@dataclass(frozen=True)
class AlignmentResult:
    """Similarity transform mapping an estimate onto the reference."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def quaternion_from_yaw(yaw: float) -> np.ndarray:
    return np.array([0.0, 0.0, math.sin(yaw / 2.0), math.cos(yaw / 2.0)])


def yaw_from_quaternion(q: np.ndarray) -> float:
    qx, qy, qz, qw = (float(v) for v in q)
    return math.atan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))


def read_tum(path: str | Path) -> list[StampedPose]:
    """Parse a TUM trajectory file, reporting errors with line numbers."""
    poses: list[StampedPose] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 8:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: expected 8 fields, got {len(fields)}"
                )
            try:
                vals = [float(v) for v in fields]
            except ValueError as exc:
                raise TrajectoryFormatError(f"{path}:{lineno}: {exc}") from None
            quat = np.array(vals[4:8])
            norm = np.linalg.norm(quat)
            if not 0.5 < norm < 2.0:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: quaternion norm {norm:.3g} is not near 1"
                )
            if poses and vals[0] <= poses[-1].timestamp:
                raise TrajectoryFormatError(
                    f"{path}:{lineno}: timestamps must increase strictly"
                )
            poses.append(StampedPose(vals[0], np.array(vals[1:4]), quat / norm))
    return poses


def write_tum(path: str | Path, poses: list[StampedPose]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for p in poses:
            fh.write(
                f"{p.timestamp:.9f} "
                + " ".join(f"{v:.9f}" for v in p.position)
                + " "
                + " ".join(f"{v:.9f}" for v in p.quaternion)
                + "\n"
            )


def associate(
    traj: list[StampedPose],
    gt: list[StampedPose],
    max_dt_s: float = DEFAULT_MAX_DT_S,
) -> list[tuple[StampedPose, StampedPose]]:
    """Pair each ground-truth pose with the nearest estimate in time.

    Ground-truth poses with no estimate within ``max_dt_s`` are dropped;
    an entirely empty pairing is an error.
    """
    if not traj or not gt:
        raise AssociationError("cannot associate an empty trajectory")
    times = np.array([p.timestamp for p in traj])
    pairs: list[tuple[StampedPose, StampedPose]] = []
    for g in gt:
        idx = int(np.searchsorted(times, g.timestamp))
        best, best_dt = -1, max_dt_s
        for j in (idx - 1, idx):
            if 0 <= j < len(times) and abs(times[j] - g.timestamp) <= best_dt:
                best, best_dt = j, abs(times[j] - g.timestamp)
        if best >= 0:
            pairs.append((traj[best], g))
    if not pairs:
        raise AssociationError(
            f"no timestamp pairs within {max_dt_s} s between the trajectories"
        )
    return pairs


def align_sim3(
    traj_positions: np.ndarray, gt_positions: np.ndarray
) -> AlignmentResult:
    """Closed-form similarity minimizing sum ||s R p_est + t - p_gt||^2."""
    p = np.asarray(traj_positions, dtype=np.float64)
    q = np.asarray(gt_positions, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("expected matching (n, 3) position arrays")
    if p.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 paired positions to align")
    pm, qm = p.mean(axis=0), q.mean(axis=0)
    pc, qc = p - pm, q - qm
    cov = qc.T @ pc / p.shape[0]
    u, s, vt = np.linalg.svd(cov)
    if s[1] < 1e-12 * max(s[0], 1e-300):
        raise DegenerateGeometryError("positions are collinear or coincident")
    d = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2, 2] = -1.0
    rot = u @ d @ vt
    var_p = (pc * pc).sum() / p.shape[0]
    if var_p <= 0:
        raise DegenerateGeometryError("estimate positions are coincident")
    scale = float((s * np.diag(d)).sum() / var_p)
    if scale <= 0:
        raise DegenerateGeometryError("alignment produced a non-positive scale")
    trans = qm - scale * rot @ pm
    return AlignmentResult(scale, rot, trans)


def absolute_errors(
    traj: list[StampedPose],
    gt: list[StampedPose],
    align_window_s: float = DEFAULT_ALIGN_WINDOW_S,
    max_dt_s: float = DEFAULT_MAX_DT_S,
) -> np.ndarray:
    """Per-pair position error norms after aligning on the initial window."""
    pairs = associate(traj, gt, max_dt_s)
    est = np.array([a.position for a, _ in pairs])
    ref = np.array([b.position for _, b in pairs])
    t0 = pairs[0][1].timestamp
    window = np.array([b.timestamp - t0 <= align_window_s for _, b in pairs])
    alignment = align_sim3(est[window], ref[window])
    return np.linalg.norm(alignment.apply(est) - ref, axis=1)


def rmse(
    traj: list[StampedPose],
    gt: list[StampedPose],
    align_window_s: float = DEFAULT_ALIGN_WINDOW_S,
    max_dt_s: float = DEFAULT_MAX_DT_S,
) -> float:
    """Root-mean-square absolute position error over the full overlap."""
    err = absolute_errors(traj, gt, align_window_s, max_dt_s)
    return float(np.sqrt(np.mean(err * err)))


def _yaw_rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def relative_translation_error(
    traj: list[StampedPose],
    gt: list[StampedPose],
    lengths_m: list[float],
    max_dt_s: float = DEFAULT_MAX_DT_S,
) -> dict[float, float | None]:
    """Mean end-point drift over sub-trajectories of fixed path length.

    Every associated ground-truth pose starts one sub-trajectory. The
    prediction is re-anchored to the ground-truth start (position and yaw),
    walked until the ground-truth arc length reaches the requested length,
    and the end-point error is recorded as a percentage of that length.
    Lengths the trajectory never reaches map to None.
    """
    pairs = associate(traj, gt, max_dt_s)
    est = np.array([a.position for a, _ in pairs])
    ref = np.array([b.position for _, b in pairs])
    est_yaw = np.array([a.yaw for a, _ in pairs])
    ref_yaw = np.array([b.yaw for _, b in pairs])
    seg = np.linalg.norm(np.diff(ref, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    out: dict[float, float | None] = {}
    for length in lengths_m:
        errors: list[float] = []
        for k in range(len(pairs)):
            j = int(np.searchsorted(arc, arc[k] + length))
            if j >= len(pairs):
                continue
            rot = _yaw_rotation(ref_yaw[k] - est_yaw[k])
            end = rot @ (est[j] - est[k]) + ref[k]
            errors.append(float(np.linalg.norm(end - ref[j])) / length * 100.0)
        out[length] = float(np.mean(errors)) if errors else None
    return out
