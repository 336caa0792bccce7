"""Decoding and matching of precomputed keypoint-network output tensors.

The network itself runs elsewhere; this module consumes its quantized
output files: a per-cell keypoint heatmap on a 20x15 grid (64 channels,
one per pixel of the 8x8 cell, optionally plus a 65th no-keypoint channel)
and a 256-channel coarse descriptor field. Keypoints decode to full-frame
pixel positions; descriptors are sampled bilinearly at keypoint locations
and kept in signed 8-bit form. Matching is mutual-nearest-neighbor under
cosine similarity on the integer vectors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rigid import TrackedMatch, to_center_origin

CELL = 8
GRID_X = 20
GRID_Y = 15
DESC_DIM = 256

DEFAULT_NMS_RADIUS = 4.0
DEFAULT_MIN_SIMILARITY = 0.75
MAX_KEYPOINTS = 512

_SPT_MAGIC = b"SPT1"
_SPT_HEADER = struct.Struct("<4siiidi")


class SpShapeError(ValueError):
    """Tensor dimensions do not match the expected grid layout."""


class SptFormatError(ValueError):
    """A tensor file is malformed."""


class MissingTensorError(FileNotFoundError):
    """A required tensor file does not exist."""


@dataclass(frozen=True)
class SpOutput:
    """One frame's network output: quantized heatmap and descriptor field.

    Dequantization is (value - zero_point) * scale per tensor. The heatmap
    may carry 64 channels or 65 (trailing no-keypoint channel, ignored).
    """

    heatmap: np.ndarray
    heat_scale: float
    heat_zero: int
    descriptors: np.ndarray
    desc_scale: float
    desc_zero: int

    def __post_init__(self) -> None:
        if self.heatmap.shape not in (
            (CELL * CELL, GRID_X, GRID_Y),
            (CELL * CELL + 1, GRID_X, GRID_Y),
        ):
            raise SpShapeError(f"heatmap shape {self.heatmap.shape}")
        if self.descriptors.shape != (DESC_DIM, GRID_X, GRID_Y):
            raise SpShapeError(f"descriptor shape {self.descriptors.shape}")


@dataclass
class SpFeature:
    """Decoded keypoint with its sampled signed 8-bit descriptor."""

    x: int
    y: int
    score: float
    descriptor: np.ndarray


def decode_keypoints(
    out: SpOutput,
    score_threshold: float,
    nms_radius: float = DEFAULT_NMS_RADIUS,
) -> list[tuple[int, int, float]]:
    """Heatmap cells to pixel keypoints with greedy NMS.

    Channel c of cell (i, j) is pixel (8j + c % 8, 8i + c // 8). Scores are
    dequantized, thresholded, sorted descending (ties toward smaller y then
    x), and greedily suppressed within ``nms_radius`` (Euclidean). At most
    ``MAX_KEYPOINTS`` survive.
    """
    heat = out.heatmap[: CELL * CELL]  # drop the no-keypoint channel if any
    scores = (heat.astype(np.float64) - out.heat_zero) * out.heat_scale
    cs, js, is_ = np.nonzero(scores >= score_threshold)
    if len(cs) == 0:
        return []
    xs = CELL * js + cs % CELL
    ys = CELL * is_ + cs // CELL
    vals = scores[cs, js, is_]
    order = np.lexsort((xs, ys, -vals))
    kept: list[tuple[int, int, float]] = []
    r2 = nms_radius * nms_radius
    for idx in order:
        x, y, v = int(xs[idx]), int(ys[idx]), float(vals[idx])
        if any((x - kx) ** 2 + (y - ky) ** 2 <= r2 for kx, ky, _ in kept):
            continue
        kept.append((x, y, v))
        if len(kept) == MAX_KEYPOINTS:
            break
    return kept


def sample_descriptors(
    out: SpOutput, keypoints: list[tuple[int, int, float]]
) -> list[SpFeature]:
    """Bilinear descriptor lookup at each keypoint, requantized to int8.

    The coarse grid is sampled at (x / 8 - 0.5, y / 8 - 0.5) with edge
    clamping; the interpolated float vector is rounded (halves away from
    zero) back onto the stored quantization grid.
    """
    desc = (out.descriptors.astype(np.float64) - out.desc_zero) * out.desc_scale
    features = []
    for x, y, score in keypoints:
        gx = min(max(x / CELL - 0.5, 0.0), GRID_X - 1.0)
        gy = min(max(y / CELL - 0.5, 0.0), GRID_Y - 1.0)
        j0 = min(int(gx), GRID_X - 2)
        i0 = min(int(gy), GRID_Y - 2)
        fx = gx - j0
        fy = gy - i0
        v = (
            desc[:, j0, i0] * (1 - fx) * (1 - fy)
            + desc[:, j0 + 1, i0] * fx * (1 - fy)
            + desc[:, j0, i0 + 1] * (1 - fx) * fy
            + desc[:, j0 + 1, i0 + 1] * fx * fy
        )
        q = v / out.desc_scale + out.desc_zero
        q = np.sign(q) * np.floor(np.abs(q) + 0.5)
        q = np.clip(q, -128, 127).astype(np.int8)
        features.append(SpFeature(x, y, score, q))
    return features


def match_cosine(
    prev: list[SpFeature],
    cur: list[SpFeature],
    min_similarity: float = DEFAULT_MIN_SIMILARITY,
    width: int = CELL * GRID_X,
    height: int = CELL * GRID_Y,
) -> list[TrackedMatch]:
    """Mutual nearest neighbors under cosine similarity.

    Dot products run on the integer descriptors; a zero-norm descriptor
    never matches. A pair is emitted only when each side is the other's
    best and the similarity clears ``min_similarity``. Positions come out
    in center-origin pixel coordinates.
    """
    if not prev or not cur:
        return []
    dp = np.stack([f.descriptor for f in prev]).astype(np.int32)
    dc = np.stack([f.descriptor for f in cur]).astype(np.int32)
    norm_p = np.sqrt((dp * dp).sum(axis=1).astype(np.float64))
    norm_c = np.sqrt((dc * dc).sum(axis=1).astype(np.float64))
    sim = dc @ dp.T  # (cur, prev) integer dot products
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = sim / np.outer(norm_c, norm_p)
    sim = np.where(np.isfinite(sim), sim, -np.inf)
    best_prev = np.argmax(sim, axis=1)
    best_cur = np.argmax(sim, axis=0)
    matches = []
    for j, i in enumerate(best_prev):
        if best_cur[i] != j:
            continue
        if sim[j, i] < min_similarity:
            continue
        px, py = to_center_origin(prev[i].x, prev[i].y, width, height)
        cx, cy = to_center_origin(cur[j].x, cur[j].y, width, height)
        matches.append(TrackedMatch(px, py, cx, cy))
    return matches


def write_spt(path: Path | str, array: np.ndarray, scale: float, zero_point: int) -> None:
    """Write a 3-d 8-bit tensor file: magic, dims, scale, zero point, payload."""
    if array.ndim != 3 or array.dtype not in (np.dtype(np.int8), np.dtype(np.uint8)):
        raise ValueError("expected a 3-d int8/uint8 array")
    d0, d1, d2 = array.shape
    header = _SPT_HEADER.pack(_SPT_MAGIC, d0, d1, d2, float(scale), int(zero_point))
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(array).tobytes())


def read_spt(path: Path | str, signed: bool) -> tuple[np.ndarray, float, int]:
    """Read a tensor file written by ``write_spt``.

    Returns (array, scale, zero_point); ``signed`` selects int8 vs uint8
    payload interpretation.
    """
    path = Path(path)
    if not path.exists():
        raise MissingTensorError(str(path))
    raw = path.read_bytes()
    if len(raw) < _SPT_HEADER.size:
        raise SptFormatError(f"{path}: truncated header")
    magic, d0, d1, d2, scale, zero = _SPT_HEADER.unpack_from(raw)
    if magic != _SPT_MAGIC:
        raise SptFormatError(f"{path}: bad magic {magic!r}")
    if min(d0, d1, d2) <= 0:
        raise SptFormatError(f"{path}: bad dims {(d0, d1, d2)}")
    expected = _SPT_HEADER.size + d0 * d1 * d2
    if len(raw) != expected:
        raise SptFormatError(f"{path}: payload is {len(raw) - _SPT_HEADER.size} "
                             f"bytes, expected {d0 * d1 * d2}")
    dtype = np.int8 if signed else np.uint8
    array = np.frombuffer(raw, dtype=dtype, offset=_SPT_HEADER.size)
    return array.reshape(d0, d1, d2).copy(), scale, zero


def load_sp_output(directory: Path | str, frame_index: int) -> SpOutput:
    """Load the heatmap/descriptor tensor pair for one frame."""
    directory = Path(directory)
    heat_path = directory / f"{frame_index:010d}.heat.spt"
    desc_path = directory / f"{frame_index:010d}.desc.spt"
    heat, h_scale, h_zero = read_spt(heat_path, signed=False)
    desc, d_scale, d_zero = read_spt(desc_path, signed=True)
    return SpOutput(heat, h_scale, h_zero, desc, d_scale, d_zero)
