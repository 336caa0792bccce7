"""Tracker wall-time measurements over internally generated frames.

The block tracker's cost is expected to grow quadratically with its search
radius; the descriptor tracker's cost should be flat in the displacement
cap, since matching is global. Settings are timed interleaved and the
fastest sample per setting is kept, which suppresses scheduler noise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .blockflow import FlowConfig, block_flow
from .imgproc import Image8
from .orb import DetectorThresholds, detect_and_describe, match_hamming
from .pipeline import _filter_displacement
from .synth import ValueNoise, default_intrinsics, render_frame

PX4FLOW_RADII = (2, 4, 8, 16, 24)
ORB_DISPLACEMENTS = (8, 16, 32, 64)


@dataclass(frozen=True)
class BenchRow:
    tracker: str
    setting: int
    ms_per_frame: float


@dataclass(frozen=True)
class QuadraticFit:
    c2: float
    c1: float
    c0: float
    r_squared: float


def _render_pairs(n_pairs: int, seed: int) -> list[tuple[Image8, Image8]]:
    texture = ValueNoise(seed)
    intr = default_intrinsics()
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        x, y = rng.uniform(-5, 5, 2)
        dx, dy = rng.uniform(-0.01, 0.01, 2)
        a = render_frame(texture, intr, x, y, 0.0, 1.0)
        b = render_frame(texture, intr, x + dx, y + dy, 0.0, 1.0)
        pairs.append((a, b))
    return pairs


def _best_ms(samples: list[float]) -> float:
    """Fastest observed run; robust to scheduler noise on shared hosts."""
    return float(min(samples) * 1000.0)


def quadratic_fit(settings: list[int], ms: list[float]) -> QuadraticFit:
    xs = np.asarray(settings, dtype=np.float64)
    ys = np.asarray(ms, dtype=np.float64)
    coeffs = np.polyfit(xs, ys, 2)
    pred = np.polyval(coeffs, xs)
    ss_res = float(((ys - pred) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return QuadraticFit(float(coeffs[0]), float(coeffs[1]), float(coeffs[2]), r2)


def bench_px4flow(
    radii: tuple[int, ...] = PX4FLOW_RADII, n_pairs: int = 25, seed: int = 0
) -> tuple[list[BenchRow], QuadraticFit | None]:
    """Best per-frame block-flow time for each search radius.

    The fit is None when fewer than three radii are timed.
    """
    pairs = _render_pairs(n_pairs, seed)
    configs = {r: FlowConfig(search_radius=r) for r in radii}
    for r in radii:
        block_flow(*pairs[0], configs[r])  # warm up before timing
    samples: dict[int, list[float]] = {r: [] for r in radii}
    for a, b in pairs:  # interleave settings so load spikes hit all equally
        for r in radii:
            t0 = time.perf_counter()
            block_flow(a, b, configs[r])
            samples[r].append(time.perf_counter() - t0)
    rows = [BenchRow("px4flow", r, _best_ms(samples[r])) for r in radii]
    if len(radii) < 3:
        return rows, None
    fit = quadratic_fit([r.setting for r in rows], [r.ms_per_frame for r in rows])
    return rows, fit


def bench_orb(
    displacements: tuple[int, ...] = ORB_DISPLACEMENTS,
    n_frames: int = 25,
    seed: int = 0,
) -> tuple[list[BenchRow], float]:
    """Best per-frame extraction+matching time per displacement cap.

    Returns the rows and the max/min ratio across settings; matching is
    global, so the cap only filters the match list afterwards.
    """
    pairs = _render_pairs(n_frames, seed)
    intr = default_intrinsics()
    thresholds = {c: DetectorThresholds() for c in displacements}
    prev = {}
    for c in displacements:
        prev[c], thresholds[c] = detect_and_describe(pairs[0][0], thresholds[c])
    samples: dict[int, list[float]] = {c: [] for c in displacements}
    for a, b in pairs:  # interleave settings so load spikes hit all equally
        for c in displacements:
            t0 = time.perf_counter()
            feats, thresholds[c] = detect_and_describe(b, thresholds[c])
            matches = match_hamming(prev[c], feats, intr.width, intr.height)
            _filter_displacement(matches, float(c))
            samples[c].append(time.perf_counter() - t0)
            prev[c] = feats
    rows = [BenchRow("orb", c, _best_ms(samples[c])) for c in displacements]
    times = [r.ms_per_frame for r in rows]
    return rows, max(times) / min(times)
