"""Independent reference implementations and scene generators for tests.

Everything here is deliberately written against the plain textbook
definitions (float arithmetic, direct convolution, per-pixel loops) so the
fixed-point production code can be checked against an implementation that
shares no code with it.
"""

import math

import numpy as np
from scipy.signal import correlate2d

from downvio.imgproc import Image8

RING = [
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
]

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)


def fast_oracle(data, threshold):
    """Exhaustive per-pixel segment test; returns {(x, y): score}."""
    h, w = data.shape
    found = {}
    for y in range(16, h - 16):
        for x in range(16, w - 16):
            c = int(data[y, x])
            ring = [int(data[y + dy, x + dx]) for dx, dy in RING]
            for sign in (1, -1):
                flags = [sign * (r - c) > threshold for r in ring]
                best_len, best_start = 0, 0
                run, start = 0, 0
                for i, v in enumerate(flags + flags):
                    if v:
                        if run == 0:
                            start = i
                        run += 1
                        if run > best_len:
                            best_len, best_start = run, start
                    else:
                        run = 0
                if min(best_len, 16) >= 9:
                    idx = {(best_start + t) % 16 for t in range(min(best_len, 16))}
                    found[(x, y)] = sum(abs(ring[k] - c) for k in idx)
                    break
    return found


def harris_float_oracle(data, corners):
    """Floating-point Harris response with the same Sobel and 7x7 patch.

    Returns one (score, mxx, mxy, myy) tuple per corner, with the structure
    tensor entries already divided by 2048 so they live on the same scale as
    the production code's requantized integers.
    """
    p = data.astype(np.float64)
    gx = correlate2d(p, SOBEL_X, mode="same", boundary="fill")
    gy = correlate2d(p, SOBEL_X.T, mode="same", boundary="fill")
    out = []
    for c in corners:
        sl = np.s_[c.y - 3 : c.y + 4, c.x - 3 : c.x + 4]
        mxx = np.sum(gx[sl] ** 2) / 2048.0
        mxy = np.sum(gx[sl] * gy[sl]) / 2048.0
        myy = np.sum(gy[sl] ** 2) / 2048.0
        score = mxx * myy - mxy**2 - (41.0 / 1024.0) * (mxx + myy) ** 2
        out.append((score, mxx, mxy, myy))
    return out


def harris_error_bound(a, b, c):
    """Worst-case integer-vs-float score gap from the four rounding steps."""
    a, b, c = abs(a), abs(b), abs(c)
    return (
        0.5 * (a + b + 0.5)
        + 0.5 * (2 * c + 0.5)
        + (41.0 / 1024.0) * (2 * (a + b) + 1)
        + 0.5
    )


def ladder_scene(rng, size=64):
    """3x3 grid of axis-aligned bright squares on a contrast ladder.

    Every square contributes four mirror-symmetric corners (exactly tied in
    any arithmetic, so tie-breaking is deterministic), while distinct squares
    are separated by large score gaps. Suited to ranking-stability checks.
    """
    data = np.full((size, size), 20, dtype=np.uint8)
    order = rng.permutation(9)
    for slot in range(9):
        gy, gx = divmod(slot, 3)
        x0 = 15 + 11 * gx + int(rng.integers(-1, 2))
        y0 = 15 + 11 * gy + int(rng.integers(-1, 2))
        data[y0 : y0 + 5, x0 : x0 + 5] = 45 + 22 * int(order[slot])
    return Image8(data)


class GaussianField:
    """Smooth analytic intensity field; exact under rotation."""

    def __init__(self, rng, n_blobs=14, extent=40.0):
        self.cx = rng.uniform(-extent, extent, n_blobs)
        self.cy = rng.uniform(-extent, extent, n_blobs)
        self.amp = rng.uniform(60, 120, n_blobs)
        self.sig = rng.uniform(2.0, 6.0, n_blobs)

    def render(self, width, height, center, rot=0.0):
        """Sample on the pixel grid, optionally rotating the field about
        ``center`` by ``rot`` radians first."""
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        dx = xs - center[0]
        dy = ys - center[1]
        co, si = math.cos(-rot), math.sin(-rot)
        rx = co * dx - si * dy + center[0]
        ry = si * dx + co * dy + center[1]
        acc = np.full(rx.shape, 30.0)
        for cx, cy, amp, sig in zip(self.cx, self.cy, self.amp, self.sig):
            d2 = (rx - (center[0] + cx)) ** 2 + (ry - (center[1] + cy)) ** 2
            acc += amp * np.exp(-d2 / (2 * sig * sig))
        return Image8(np.clip(acc, 0, 255).astype(np.uint8))
