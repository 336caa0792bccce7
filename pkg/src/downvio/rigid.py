"""Planar rigid-body motion from tracked feature matches.

Matches are expressed in center-origin pixel coordinates. The motion model
is q = R(dpsi) p + (du, dv): the in-plane rotation and translation that best
explain how features moved between two frames. Outliers are rejected in two
stages: a displacement-histogram prefilter, then a reprojection gate around
a first least-squares solve before the final solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Displacement-histogram band: matches farther than this from the modal
# displacement (per axis) are dropped before the first solve.
PREFILTER_BAND_PX = 5.0

# Reprojection gate between the first and second solve.
REPROJECTION_GATE_PX = 1.5

# A planar rigid motion has 3 DOF; 3 matches give one redundant equation.
MIN_INLIERS = 3


@dataclass(frozen=True)
class TrackedMatch:
    """One feature tracked between consecutive frames (center-origin pixels)."""

    px: float
    py: float
    cx: float
    cy: float


@dataclass(frozen=True)
class RigidMotion2D:
    """Planar motion estimate: translation in pixels, yaw in radians."""

    du: float
    dv: float
    dpsi: float
    inlier_count: int
    valid: bool


INVALID_MOTION = RigidMotion2D(0.0, 0.0, 0.0, 0, False)


def to_center_origin(x: float, y: float, width: int, height: int) -> tuple[float, float]:
    """Shift image coordinates so the origin sits at the pixel-grid center."""
    return x - (width - 1) / 2.0, y - (height - 1) / 2.0


def _match_arrays(matches: list[TrackedMatch]) -> tuple[np.ndarray, np.ndarray]:
    prev = np.array([(m.px, m.py) for m in matches], dtype=np.float64)
    cur = np.array([(m.cx, m.cy) for m in matches], dtype=np.float64)
    return prev.reshape(-1, 2), cur.reshape(-1, 2)


def _modal_baseline(disp: np.ndarray) -> float:
    """Center of the modal 1-px histogram bin; ties go to the smaller motion."""
    keys = np.floor(disp + 0.5).astype(np.int64)
    bins, counts = np.unique(keys, return_counts=True)
    order = sorted(range(len(bins)), key=lambda i: (-counts[i], abs(bins[i]), bins[i]))
    return float(bins[order[0]])


def histogram_prefilter(matches: list[TrackedMatch]) -> list[TrackedMatch]:
    """Keep matches whose displacement sits near the modal displacement.

    A 1-px-wide histogram is built independently for the x and y displacement
    components; a match survives only if it lies within ``PREFILTER_BAND_PX``
    of the modal bin center on both axes.
    """
    if not matches:
        return []
    prev, cur = _match_arrays(matches)
    disp = cur - prev
    base_x = _modal_baseline(disp[:, 0])
    base_y = _modal_baseline(disp[:, 1])
    keep = (np.abs(disp[:, 0] - base_x) <= PREFILTER_BAND_PX) & (
        np.abs(disp[:, 1] - base_y) <= PREFILTER_BAND_PX
    )
    return [m for m, k in zip(matches, keep) if k]


def _svd_2x2(h: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form SVD of a 2x2 matrix: h = u @ diag(s) @ vt, s[0] >= s[1] >= 0."""
    a, b = float(h[0, 0]), float(h[0, 1])
    c, d = float(h[1, 0]), float(h[1, 1])
    e = (a + d) / 2.0
    f = (a - d) / 2.0
    g = (c + b) / 2.0
    k = (c - b) / 2.0
    q = math.hypot(e, k)
    r = math.hypot(f, g)
    s0 = q + r
    s1 = q - r  # may be negative; sign folded into vt below
    a1 = math.atan2(g, f)
    a2 = math.atan2(k, e)
    phi = (a2 + a1) / 2.0  # left rotation
    theta = (a2 - a1) / 2.0  # right rotation
    u = np.array(
        [[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]]
    )
    vt = np.array(
        [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    )
    s = np.array([s0, s1])
    if s1 < 0.0:
        s = np.array([s0, -s1])
        vt = np.array([vt[0], -vt[1]])
    return u, s, vt


def solve_rigid_2d(matches: list[TrackedMatch]) -> RigidMotion2D:
    """Least-squares planar rigid fit q = R p + t over the given matches.

    Uses the cross-covariance of the centered point sets and its closed-form
    2x2 SVD, with a determinant correction so the result is always a proper
    rotation. Fewer than ``MIN_INLIERS`` matches, or coincident geometry,
    yield an invalid result.
    """
    if len(matches) < MIN_INLIERS:
        return INVALID_MOTION
    prev, cur = _match_arrays(matches)
    p_bar = prev.mean(axis=0)
    q_bar = cur.mean(axis=0)
    p_c = prev - p_bar
    q_c = cur - q_bar
    h = p_c.T @ q_c  # sum of outer products (p_i - p_bar)(q_i - q_bar)^T
    if not np.any(h):
        return INVALID_MOTION
    u, _, vt = _svd_2x2(h)
    v = vt.T
    rot = v @ u.T
    if np.linalg.det(rot) < 0.0:
        # reflection guard: flip the weakest singular direction
        v = np.array([v[:, 0], -v[:, 1]]).T
        rot = v @ u.T
    t = q_bar - rot @ p_bar
    dpsi = math.atan2(rot[1, 0], rot[0, 0])
    return RigidMotion2D(float(t[0]), float(t[1]), dpsi, len(matches), True)


def _reproject_errors(motion: RigidMotion2D, matches: list[TrackedMatch]) -> np.ndarray:
    prev, cur = _match_arrays(matches)
    c, s = math.cos(motion.dpsi), math.sin(motion.dpsi)
    rot = np.array([[c, -s], [s, c]])
    pred = prev @ rot.T + np.array([motion.du, motion.dv])
    return np.linalg.norm(cur - pred, axis=1)


def estimate_motion(matches: list[TrackedMatch]) -> RigidMotion2D:
    """Two-stage robust planar motion estimate.

    Prefilters matches by displacement histogram, solves once, re-classifies
    every original match by reprojection error against that first solve
    (gate ``REPROJECTION_GATE_PX``), then solves again on the inliers. Either
    solve seeing fewer than ``MIN_INLIERS`` matches invalidates the result.
    """
    kept = histogram_prefilter(matches)
    first = solve_rigid_2d(kept)
    if not first.valid:
        return INVALID_MOTION
    errors = _reproject_errors(first, matches)
    inliers = [m for m, e in zip(matches, errors) if e <= REPROJECTION_GATE_PX]
    second = solve_rigid_2d(inliers)
    if not second.valid:
        return INVALID_MOTION
    return second
