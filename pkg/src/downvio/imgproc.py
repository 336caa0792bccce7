"""Integer-exact low-level image operations shared by the feature trackers.

Everything here is computed in integer arithmetic with fixed, documented
rounding so that results are bit-identical across platforms and across any
row partitioning a caller may apply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Image8",
    "GradientPair",
    "ImageSizeError",
    "BLUR_WEIGHTS",
    "sobel3",
    "gaussian_blur5",
    "round_half_away",
]

# 1-D binomial weights; outer product sums to 256 so a 5x5 accumulation of
# 8-bit pixels never exceeds 65280 and fits a 16-bit unsigned accumulator.
BLUR_WEIGHTS = np.array([1, 4, 6, 4, 1], dtype=np.int32)


class ImageSizeError(ValueError):
    """Raised when an image is too small for the requested kernel."""


@dataclass(frozen=True)
class Image8:
    """Row-major 8-bit grayscale frame; the unit all trackers consume.

    ``data`` is a (height, width) uint8 array.
    """

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if not isinstance(d, np.ndarray) or d.ndim != 2:
            raise ValueError("Image8.data must be a 2-D array")
        if d.dtype != np.uint8:
            raise ValueError(f"Image8.data must be uint8, got {d.dtype}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_array(cls, a) -> "Image8":
        """Build an Image8 from any array-like of intensities in [0, 255]."""
        arr = np.asarray(a)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array")
        if arr.dtype != np.uint8:
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        return cls(np.ascontiguousarray(arr))


@dataclass(frozen=True)
class GradientPair:
    """Signed 16-bit per-pixel horizontal/vertical gradient maps.

    Same dimensions as the source image; |values| <= 4*255 = 1020
    (3x3 first-order Sobel bound on 8-bit input).
    """

    ix: np.ndarray
    iy: np.ndarray


def round_half_away(v):
    """Round to nearest integer, halves away from zero. Works elementwise."""
    v = np.asarray(v)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def sobel3(img: Image8) -> GradientPair:
    """3x3 first-order Sobel gradients.

    Interior pixels hold the exact integer Sobel response; the 1-pixel
    border is zero (Harris only evaluates interior candidates).
    """
    if img.width < 3 or img.height < 3:
        raise ImageSizeError(
            f"sobel3 needs at least 3x3, got {img.width}x{img.height}"
        )
    p = img.data.astype(np.int32)
    ix = np.zeros(p.shape, dtype=np.int16)
    iy = np.zeros(p.shape, dtype=np.int16)
    # Correlation with [[-1,0,1],[-2,0,2],[-1,0,1]] and its transpose.
    right = p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]
    left = p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2]
    ix[1:-1, 1:-1] = (right - left).astype(np.int16)
    bottom = p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]
    top = p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:]
    iy[1:-1, 1:-1] = (bottom - top).astype(np.int16)
    return GradientPair(ix=ix, iy=iy)


def gaussian_blur5(img: Image8) -> Image8:
    """Approximated 5x5 Gaussian blur with an integer kernel summing to 256.

    Interior output is round-half-up((sum kernel*pixel) / 256); the 2-pixel
    border copies the original pixel values (no padding is applied).
    """
    if img.width < 5 or img.height < 5:
        raise ImageSizeError(
            f"gaussian_blur5 needs at least 5x5, got {img.width}x{img.height}"
        )
    p = img.data.astype(np.int32)
    w = BLUR_WEIGHTS
    # Separable passes; the horizontal pass peaks at 255*16 = 4080 and the
    # vertical accumulation at 4080*16 = 65280 < 2^16.
    acc_h = sum(int(w[k]) * p[:, k : p.shape[1] - 4 + k] for k in range(5))
    acc = sum(int(w[k]) * acc_h[k : p.shape[0] - 4 + k, :] for k in range(5))
    out = img.data.copy()
    out[2:-2, 2:-2] = ((acc + 128) >> 8).astype(np.uint8)
    return Image8(out)
