"""Block-matching optical flow on a fixed grid of interest points.

Each grid point carries a small patch that is searched exhaustively in the
next frame by sum of absolute differences over a square displacement window,
then refined to half-pixel resolution with bilinear-interpolated patches.
All arithmetic is integer; SAD of an 8x8 patch peaks at 16320 and fits in
16 bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imgproc import Image8, ImageSizeError
from .rigid import TrackedMatch, to_center_origin

# Half-pixel candidates around the integer winner, raster order.
_HALF_STEPS = (
    (-1, -1), (0, -1), (1, -1),
    (-1, 0), (1, 0),
    (-1, 1), (0, 1), (1, 1),
)


@dataclass(frozen=True)
class FlowConfig:
    """Grid and search geometry for the block matcher.

    ``flat_margin`` is the minimum gap between the best and second-best SAD
    for a vector to count as valid; None means one intensity level per patch
    pixel (patch_size squared).
    """

    grid_rows: int = 8
    grid_cols: int = 10
    patch_size: int = 8
    search_radius: int = 4
    enable_halfpixel: bool = True
    flat_margin: int | None = None

    def resolved_margin(self) -> int:
        if self.flat_margin is not None:
            return self.flat_margin
        return self.patch_size * self.patch_size


@dataclass(frozen=True)
class FlowVector:
    """Flow at one interest point, center-origin coordinates, half-px steps."""

    x: float
    y: float
    du: float
    dv: float
    sad: int
    valid: bool


def _grid_starts(extent: int, count: int, patch: int, radius: int) -> list[int]:
    """Evenly spaced patch top-left offsets along one axis.

    The search window plus one interpolation pixel must stay inside the
    frame, so starts span [radius + 1, extent - patch - radius - 1].
    """
    lo = radius + 1
    hi = extent - patch - radius - 1
    if hi < lo:
        raise ValueError(
            f"search geometry does not fit: extent {extent}, patch {patch}, "
            f"radius {radius}"
        )
    if count == 1:
        return [(lo + hi) // 2]
    return [lo + round(i * (hi - lo) / (count - 1)) for i in range(count)]


def _displacement_order(radius: int) -> tuple[np.ndarray, np.ndarray]:
    """All integer displacements sorted by (magnitude, dy, dx)."""
    span = np.arange(-radius, radius + 1)
    dys, dxs = np.meshgrid(span, span, indexing="ij")
    dys, dxs = dys.ravel(), dxs.ravel()
    order = np.lexsort((dxs, dys, dxs * dxs + dys * dys))
    return dxs[order], dys[order]


def _half_pixel_refine(
    prev_patch: np.ndarray, cur: np.ndarray, ty: int, tx: int, best_sad: int
) -> tuple[int, int, int]:
    """SAD over the 8 half-pixel positions around the integer winner.

    Returns (du2, dv2, sad) where du2/dv2 are half-pixel steps relative to
    the winner. Interpolated values round half up; ties keep the integer
    winner.
    """
    p = prev_patch.shape[0]
    c = cur[ty - 1 : ty + p + 1, tx - 1 : tx + p + 1].astype(np.int32)
    hp = (c[:, :-1] + c[:, 1:] + 1) >> 1
    vp = (c[:-1, :] + c[1:, :] + 1) >> 1
    dp = (c[:-1, :-1] + c[:-1, 1:] + c[1:, :-1] + c[1:, 1:] + 2) >> 2
    patches = {
        (-1, -1): dp[0:p, 0:p],
        (0, -1): vp[0:p, 1 : p + 1],
        (1, -1): dp[0:p, 1 : p + 1],
        (-1, 0): hp[1 : p + 1, 0:p],
        (1, 0): hp[1 : p + 1, 1 : p + 1],
        (-1, 1): dp[1 : p + 1, 0:p],
        (0, 1): vp[1 : p + 1, 1 : p + 1],
        (1, 1): dp[1 : p + 1, 1 : p + 1],
    }
    best = (0, 0, best_sad)
    for du2, dv2 in _HALF_STEPS:
        sad = int(np.abs(patches[(du2, dv2)] - prev_patch).sum())
        if sad < best[2]:
            best = (du2, dv2, sad)
    return best


def block_flow(prev: Image8, cur: Image8, cfg: FlowConfig) -> list[FlowVector]:
    """Grid block-matching flow from ``prev`` to ``cur``.

    For every grid point the patch from ``prev`` is compared against all
    integer displacements within the search radius; SAD ties prefer the
    smaller displacement. The winner is refined by half-pixel interpolation
    when enabled. A vector is invalid when the integer SAD landscape is
    flat: second-best minus best below the configured margin.
    """
    if prev.data.shape != cur.data.shape:
        raise ImageSizeError(
            f"frame dimensions differ: {prev.width}x{prev.height} vs "
            f"{cur.width}x{cur.height}"
        )
    p = cfg.patch_size
    r = cfg.search_radius
    margin = cfg.resolved_margin()
    xs = _grid_starts(prev.width, cfg.grid_cols, p, r)
    ys = _grid_starts(prev.height, cfg.grid_rows, p, r)
    dxs, dys = _displacement_order(r)
    prev_i = prev.data.astype(np.int16)
    cur_i = cur.data.astype(np.int16)
    out = []
    for ty in ys:
        for tx in xs:
            patch = prev_i[ty : ty + p, tx : tx + p]
            region = cur_i[ty - r : ty + p + r, tx - r : tx + p + r]
            windows = sliding_window_view(region, (p, p))
            sads = np.abs(windows - patch).sum(axis=(2, 3), dtype=np.int32)
            flat = sads[dys + r, dxs + r]
            k = int(np.argmin(flat))  # first in (magnitude, dy, dx) order
            bdx, bdy = int(dxs[k]), int(dys[k])
            best = int(flat[k])
            # distinctiveness: runner-up taken outside the winner's 3x3
            # basin, so a true sub-pixel motion does not read as flat
            basin = (np.abs(dys - bdy) <= 1) & (np.abs(dxs - bdx) <= 1)
            rest = flat[~basin]
            valid = rest.size > 0 and int(rest.min()) - best >= margin
            du, dv = float(bdx), float(bdy)
            sad = best
            if cfg.enable_halfpixel:
                du2, dv2, sad = _half_pixel_refine(
                    patch, cur_i, ty + bdy, tx + bdx, best
                )
                du += du2 / 2.0
                dv += dv2 / 2.0
            cx, cy = to_center_origin(
                tx + (p - 1) / 2.0, ty + (p - 1) / 2.0, prev.width, prev.height
            )
            out.append(FlowVector(cx, cy, du, dv, sad, bool(valid)))
    return out


def dominant_flow(flows: list[FlowVector]) -> tuple[float, float]:
    """Modal flow over valid vectors, per axis.

    Values are binned at half-pixel width; the result is the mean of the
    values in the modal bin and its two neighbors. Returns (0, 0) when no
    vector is valid.
    """
    vals = [(f.du, f.dv) for f in flows if f.valid]
    if not vals:
        return (0.0, 0.0)
    result = []
    for axis in (0, 1):
        keys = np.array([round(v[axis] * 2) for v in vals], dtype=np.int64)
        bins, counts = np.unique(keys, return_counts=True)
        order = sorted(
            range(len(bins)), key=lambda i: (-counts[i], abs(bins[i]), bins[i])
        )
        modal = bins[order[0]]
        picked = [v[axis] for v, k in zip(vals, keys) if abs(k - modal) <= 1]
        result.append(float(np.mean(picked)))
    return (result[0], result[1])


def flows_to_matches(flows: list[FlowVector]) -> list[TrackedMatch]:
    """Valid flow vectors as tracked matches for rigid-body estimation."""
    return [
        TrackedMatch(f.x, f.y, f.x + f.du, f.y + f.dv)
        for f in flows
        if f.valid
    ]
