"""Integer ORB feature detection, description, and Hamming matching.

The whole detection path runs in fixed-point arithmetic: corner tests and
scores on raw 8-bit intensities, the structure tensor accumulated in 32-bit
and requantized to 16-bit, descriptor rotation in Q7.8. Matching is
brute-force on 256-bit descriptors with a hard Hamming-distance acceptance
threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .imgproc import Image8, ImageSizeError, gaussian_blur5, sobel3
from .orb_pattern import PATTERN
from .rigid import TrackedMatch, to_center_origin

# Bresenham circle of radius 3, clockwise from the top pixel: (dx, dy).
RING_OFFSETS = (
    (0, -3), (1, -3), (2, -2), (3, -1),
    (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1),
    (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)

# A corner needs this many contiguous ring pixels past the threshold.
FAST_ARC_MIN = 9

# Keep-out border so the 31x31 description patch always fits.
PATCH_MARGIN = 16

# 7x7 structure-tensor patch plus the 1-px Sobel border.
HARRIS_MARGIN = 4

# Intensity-centroid disc radius for the orientation estimate.
ORIENT_RADIUS = 15

# Matches with a larger Hamming distance are rejected.
HAMMING_MAX = 20

_ORIENT_SPAN = np.arange(-ORIENT_RADIUS, ORIENT_RADIUS + 1)
_ORIENT_XX, _ORIENT_YY = np.meshgrid(_ORIENT_SPAN, _ORIENT_SPAN)
_ORIENT_MASK = _ORIENT_XX**2 + _ORIENT_YY**2 <= ORIENT_RADIUS**2
_ORIENT_WX = np.where(_ORIENT_MASK, _ORIENT_XX, 0).astype(np.int64)
_ORIENT_WY = np.where(_ORIENT_MASK, _ORIENT_YY, 0).astype(np.int64)


@dataclass(frozen=True)
class Corner:
    """Detected corner with its detector responses."""

    x: int
    y: int
    fast_score: int = 0
    harris_score: int = 0


@dataclass
class OrbFeature:
    """Oriented feature with a packed 256-bit descriptor.

    ``descriptor`` is a (32,) uint8 array; bit k lives in byte k // 8 at bit
    position k % 8.
    """

    x: int
    y: int
    angle: float
    descriptor: np.ndarray


@dataclass(frozen=True)
class DetectorThresholds:
    """Hysteresis state for the FAST / Harris threshold pair.

    Both thresholds step together: additively for FAST, multiplicatively for
    Harris. The controller targets a descriptor count inside
    [target_min, target_max] with a hard cap applied after sorting.
    """

    fast_threshold: int = 20
    harris_threshold: int = 4096
    fast_min: int = 10
    fast_max: int = 60
    fast_step: int = 5
    harris_min: int = 1 << 10
    harris_max: int = 1 << 20
    harris_factor: int = 2
    target_min: int = 150
    target_max: int = 200
    hard_cap: int = 512

    def step_up(self) -> "DetectorThresholds":
        return replace(
            self,
            fast_threshold=min(self.fast_threshold + self.fast_step, self.fast_max),
            harris_threshold=min(
                self.harris_threshold * self.harris_factor, self.harris_max
            ),
        )

    def step_down(self) -> "DetectorThresholds":
        return replace(
            self,
            fast_threshold=max(self.fast_threshold - self.fast_step, self.fast_min),
            harris_threshold=max(
                self.harris_threshold // self.harris_factor, self.harris_min
            ),
        )


def _run_mask(flags: np.ndarray) -> np.ndarray:
    """True where a circular run of >= FAST_ARC_MIN ring pixels is set.

    flags has shape (16, ...) indexed by ring position.
    """
    out = np.zeros(flags.shape[1:], dtype=bool)
    for start in range(len(RING_OFFSETS)):
        run = flags[start].copy()
        for i in range(1, FAST_ARC_MIN):
            run &= flags[(start + i) % len(RING_OFFSETS)]
        out |= run
    return out


def _arc_score(ring: np.ndarray, center: int, flags: np.ndarray) -> int:
    """Sum |ring - center| over the maximal contiguous run in flags.

    Only one polarity can hold a run of >= 9 on a 16-pixel ring, so the
    maximal run is unique.
    """
    n = len(RING_OFFSETS)
    doubled = np.concatenate([flags, flags])
    best_len = 0
    best_start = 0
    i = 0
    while i < n:
        if doubled[i]:
            j = i
            while j < i + n and doubled[j]:
                j += 1
            if j - i > best_len:
                best_len, best_start = j - i, i
            i = j + 1
        else:
            i += 1
    idx = [(best_start + t) % n for t in range(min(best_len, n))]
    return int(sum(abs(int(ring[k]) - center) for k in idx))


def fast_detect(img: Image8, threshold: int, nms: bool = True) -> list[Corner]:
    """Segment-test corner detection on the 16-pixel ring.

    A pixel is a corner when at least ``FAST_ARC_MIN`` contiguous ring pixels
    are all brighter than center + threshold or all darker than
    center - threshold. The score is the sum of absolute differences over the
    qualifying arc. With ``nms`` a corner must also be the score maximum of
    its 3x3 neighborhood (ties broken toward smaller y, then smaller x).
    Only corners with the full description patch inside the image are
    returned.
    """
    h, w = img.height, img.width
    if h < 2 * PATCH_MARGIN or w < 2 * PATCH_MARGIN:
        raise ImageSizeError(f"need at least 32x32 pixels, got {w}x{h}")
    p = img.data.astype(np.int16)
    m = PATCH_MARGIN
    center = p[m : h - m, m : w - m]
    if center.size == 0:
        return []
    ring = np.stack(
        [p[m + dy : h - m + dy, m + dx : w - m + dx] for dx, dy in RING_OFFSETS]
    )
    bright = ring > center + threshold
    dark = ring < center - threshold
    detected = _run_mask(bright) | _run_mask(dark)
    ys, xs = np.nonzero(detected)
    if len(ys) == 0:
        return []

    scores = np.zeros(center.shape, dtype=np.uint16)
    for y, x in zip(ys, xs):
        flags = bright[:, y, x] if _has_run(bright[:, y, x]) else dark[:, y, x]
        scores[y, x] = _arc_score(ring[:, y, x], int(center[y, x]), flags)

    if nms:
        keep = _nms3(scores, detected)
    else:
        keep = detected
    ys, xs = np.nonzero(keep)
    return [
        Corner(x=int(x + m), y=int(y + m), fast_score=int(scores[y, x]))
        for y, x in zip(ys, xs)
    ]


def _has_run(flags: np.ndarray) -> bool:
    doubled = np.concatenate([flags, flags])
    run = 0
    for v in doubled:
        run = run + 1 if v else 0
        if run >= FAST_ARC_MIN:
            return True
    return False


def _nms3(scores: np.ndarray, detected: np.ndarray) -> np.ndarray:
    """3x3 non-maximum suppression; equal scores keep the raster-first pixel."""
    keep = detected.copy()
    padded = np.pad(scores, 1)
    h, w = scores.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            neigh = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            if (dy, dx) < (0, 0):
                keep &= scores > neigh
            else:
                keep &= scores >= neigh
    return keep


def harris_refine(img: Image8, corners: list[Corner]) -> list[Corner]:
    """Fill in the requantized structure-tensor corner response.

    The 7x7 sums of Ix^2, IxIy, Iy^2 are accumulated in 32-bit, shifted right
    by 11 with rounding into 16-bit entries, and scored as
    det(M) - (41 * trace(M)^2) >> 10, a 32-bit integer.
    """
    if not corners:
        return []
    g = sobel3(img)
    ix = g.ix.astype(np.int64)
    iy = g.iy.astype(np.int64)
    h, w = img.height, img.width
    out = []
    for c in corners:
        if not (
            HARRIS_MARGIN <= c.x < w - HARRIS_MARGIN
            and HARRIS_MARGIN <= c.y < h - HARRIS_MARGIN
        ):
            raise ValueError(f"corner ({c.x}, {c.y}) too close to the border")
        sl = np.s_[c.y - 3 : c.y + 4, c.x - 3 : c.x + 4]
        px, py = ix[sl], iy[sl]
        # 49 * 1020^2 < 2^31: the raw sums stay inside 32-bit
        mxx = int(np.sum(px * px))
        mxy = int(np.sum(px * py))
        myy = int(np.sum(py * py))
        a = (mxx + 1024) >> 11
        b = (myy + 1024) >> 11
        cc = (mxy + 1024) >> 11  # arithmetic shift rounds toward +inf at .5
        score = a * b - cc * cc - ((41 * (a + b) * (a + b) + 512) >> 10)
        out.append(replace(c, harris_score=int(np.int32(score))))
    return out


def select_features(
    corners: list[Corner], thresholds: DetectorThresholds
) -> tuple[list[Corner], DetectorThresholds]:
    """Threshold, rank, and cap corners; adjust the hysteresis state.

    Corners below the Harris threshold are dropped, survivors are sorted by
    (score desc, y asc, x asc) and truncated at the hard cap. The threshold
    pair steps up when the survivor count exceeds target_max and down when it
    falls below target_min.
    """
    survivors = [c for c in corners if c.harris_score >= thresholds.harris_threshold]
    survivors.sort(key=lambda c: (-c.harris_score, c.y, c.x))
    selected = survivors[: thresholds.hard_cap]
    if len(survivors) > thresholds.target_max:
        thresholds = thresholds.step_up()
    elif len(survivors) < thresholds.target_min:
        thresholds = thresholds.step_down()
    return selected, thresholds


def orientation(blurred: Image8, c: Corner) -> float:
    """Intensity-centroid angle over the radius-15 disc around the corner.

    Returns atan2(m01, m10) with both moments accumulated as 32-bit sums;
    a fully symmetric patch (both moments zero) maps to angle 0.
    """
    h, w = blurred.height, blurred.width
    r = ORIENT_RADIUS
    if not (r <= c.x < w - r and r <= c.y < h - r):
        raise ValueError(f"orientation patch for ({c.x}, {c.y}) leaves the image")
    patch = blurred.data[c.y - r : c.y + r + 1, c.x - r : c.x + r + 1].astype(np.int64)
    m10 = int(np.sum(_ORIENT_WX * patch))
    m01 = int(np.sum(_ORIENT_WY * patch))
    if m10 == 0 and m01 == 0:
        return 0.0
    return math.atan2(m01, m10)


def _q78_round(v: np.ndarray) -> np.ndarray:
    """Round a Q7.8 value to the nearest integer, halves away from zero."""
    mag = (np.abs(v) + 128) >> 8
    return np.where(v < 0, -mag, mag)


def describe(blurred: Image8, c: Corner, angle: float) -> np.ndarray:
    """256-bit descriptor from the rotated comparison pattern.

    cos/sin are quantized to Q7.8 (rounding half away from zero), pattern
    offsets are rotated and rounded in that fixed-point grid, and bit k is
    set when the first sample of pair k is darker than the second. Rotated
    samples can leave the nominal patch by a few pixels; sampling clamps to
    the image bounds.
    """
    cq = int(math.floor(abs(math.cos(angle)) * 256 + 0.5))
    sq = int(math.floor(abs(math.sin(angle)) * 256 + 0.5))
    if math.cos(angle) < 0:
        cq = -cq
    if math.sin(angle) < 0:
        sq = -sq
    xs = PATTERN[:, (0, 2)].astype(np.int64)
    ys = PATTERN[:, (1, 3)].astype(np.int64)
    xr = _q78_round(xs * cq - ys * sq)
    yr = _q78_round(xs * sq + ys * cq)
    h, w = blurred.height, blurred.width
    sx = np.clip(c.x + xr, 0, w - 1)
    sy = np.clip(c.y + yr, 0, h - 1)
    vals = blurred.data[sy, sx]
    bits = vals[:, 0] < vals[:, 1]
    return np.packbits(bits, bitorder="little")


def detect_and_describe(
    img: Image8, thresholds: DetectorThresholds
) -> tuple[list[OrbFeature], DetectorThresholds]:
    """Full single-frame feature extraction.

    Detection and the Harris response run on the raw image; orientation and
    description run on the blurred image.
    """
    corners = fast_detect(img, thresholds.fast_threshold)
    corners = harris_refine(img, corners)
    selected, thresholds = select_features(corners, thresholds)
    blurred = gaussian_blur5(img)
    features = []
    for c in selected:
        angle = orientation(blurred, c)
        features.append(OrbFeature(c.x, c.y, angle, describe(blurred, c, angle)))
    return features, thresholds


def hamming_distances(prev: list[OrbFeature], cur: list[OrbFeature]) -> np.ndarray:
    """(len(cur), len(prev)) matrix of descriptor Hamming distances."""
    dp = np.stack([f.descriptor for f in prev])
    dc = np.stack([f.descriptor for f in cur])
    xor = dc[:, None, :] ^ dp[None, :, :]
    return np.bitwise_count(xor).sum(axis=2, dtype=np.int32)


def match_hamming(
    prev: list[OrbFeature],
    cur: list[OrbFeature],
    width: int,
    height: int,
) -> list[TrackedMatch]:
    """Brute-force nearest-descriptor matching with a hard distance gate.

    Each current feature matches its minimum-Hamming-distance previous
    feature (ties keep the earliest previous feature); pairs farther than
    ``HAMMING_MAX`` are dropped. Positions are emitted in center-origin
    pixel coordinates.
    """
    if not prev or not cur:
        return []
    dist = hamming_distances(prev, cur)
    best = np.argmin(dist, axis=1)
    matches = []
    for j, i in enumerate(best):
        if dist[j, i] > HAMMING_MAX:
            continue
        px, py = to_center_origin(prev[i].x, prev[i].y, width, height)
        cx, cy = to_center_origin(cur[j].x, cur[j].y, width, height)
        matches.append(TrackedMatch(px, py, cx, cy))
    return matches
