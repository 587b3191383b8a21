"""Canny edge extraction for structure views.

Classic pipeline, fully deterministic: Gaussian smoothing, Sobel
gradients, non-maximum suppression along the quantized gradient
direction, then double-threshold hysteresis with 8-connectivity.

Conventions fixed here (and relied on by the conditioning backend):

    - RGB input is reduced to BT.601 luma (0.299 R + 0.587 G + 0.114 B).
    - Gradients use correlation with the standard 3x3 Sobel kernels; +y
      points down (increasing row index).
    - Smoothing and gradient stages pad symmetrically; the 1-pixel image
      border never carries edges (suppression needs both neighbors).
    - Thresholds apply to the raw gradient magnitude of the 8-bit input;
      no renormalization.

Edge maps are uint8 rasters with values in {0, 255}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=float)

DEFAULT_SIGMA = 1.4
DEFAULT_LOW = 100.0
DEFAULT_HIGH = 200.0


@dataclass(frozen=True)
class EdgeMap:
    """Binary edge raster plus the parameters that produced it."""

    raster: np.ndarray
    params: Tuple[float, float, float]  # (gaussian_sigma, low, high)

    @property
    def sigma(self) -> float:
        return self.params[0]

    @property
    def low(self) -> float:
        return self.params[1]

    @property
    def high(self) -> float:
        return self.params[2]


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled, normalized 2-D Gaussian; radius round(1.5 * sigma), so the
    default sigma 1.4 yields a 5x5 kernel."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = max(1, int(round(1.5 * sigma)))
    ax = np.arange(-radius, radius + 1, dtype=float)
    xx, yy = np.meshgrid(ax, ax)
    kernel = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def to_grayscale(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=float)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr[:, :, 0] * 0.299 + arr[:, :, 1] * 0.587 + arr[:, :, 2] * 0.114
    raise ValueError(f"image must be HxW or HxWx3, got shape {arr.shape}")


def sobel_gradients(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(gx, gy) by correlation with the 3x3 Sobel kernels, symmetric padding."""
    gray = to_grayscale(image)
    gx = ndimage.correlate(gray, SOBEL_X, mode="reflect")
    gy = ndimage.correlate(gray, SOBEL_Y, mode="reflect")
    return gx, gy


def _nonmax_suppress(magnitude: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Keep pixels that are >= both neighbors along the gradient direction.

    Directions are quantized to 4 bins (0, 45, 90, 135 degrees, mod 180).
    The 1-pixel border is suppressed.
    """
    theta = np.rad2deg(direction) % 180.0
    bin0 = (theta < 22.5) | (theta >= 157.5)  # horizontal gradient
    bin1 = (theta >= 22.5) & (theta < 67.5)  # down-right gradient
    bin2 = (theta >= 67.5) & (theta < 112.5)  # vertical gradient
    bin3 = (theta >= 112.5) & (theta < 157.5)  # down-left gradient

    padded = np.pad(magnitude, 1, mode="constant")
    center = padded[1:-1, 1:-1]

    def shifted(di, dj):
        return padded[1 + di : padded.shape[0] - 1 + di, 1 + dj : padded.shape[1] - 1 + dj]

    keep = np.zeros_like(magnitude, dtype=bool)
    keep |= bin0 & (center >= shifted(0, 1)) & (center >= shifted(0, -1))
    keep |= bin1 & (center >= shifted(1, 1)) & (center >= shifted(-1, -1))
    keep |= bin2 & (center >= shifted(1, 0)) & (center >= shifted(-1, 0))
    keep |= bin3 & (center >= shifted(1, -1)) & (center >= shifted(-1, 1))

    out = np.where(keep, magnitude, 0.0)
    out[0, :] = 0.0
    out[-1, :] = 0.0
    out[:, 0] = 0.0
    out[:, -1] = 0.0
    return out


def canny(
    image: np.ndarray,
    sigma: float = DEFAULT_SIGMA,
    low: float = DEFAULT_LOW,
    high: float = DEFAULT_HIGH,
) -> EdgeMap:
    """Edge map of ``image`` with thresholds (low, high) on gradient magnitude.

    Strong pixels (>= high) are edges; weak pixels (>= low) survive only if
    8-connected to a strong pixel through other weak/strong pixels.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if low < 0 or high < low:
        raise ValueError(f"need high >= low >= 0, got low={low}, high={high}")

    gray = to_grayscale(image)
    smoothed = ndimage.correlate(gray, gaussian_kernel(sigma), mode="reflect")
    gx = ndimage.correlate(smoothed, SOBEL_X, mode="reflect")
    gy = ndimage.correlate(smoothed, SOBEL_Y, mode="reflect")
    magnitude = np.hypot(gx, gy)
    direction = np.arctan2(gy, gx)

    thinned = _nonmax_suppress(magnitude, direction)
    strong = thinned >= high
    weak = (thinned >= low) & ~strong

    # Components of strong|weak that touch a strong pixel; equivalent to
    # breadth-first growth from strong pixels through weak ones.
    candidates = strong | weak
    labels, n_labels = ndimage.label(candidates, structure=np.ones((3, 3), int))
    edges = np.zeros_like(candidates)
    if n_labels:
        strong_labels = np.unique(labels[strong])
        strong_labels = strong_labels[strong_labels > 0]
        if strong_labels.size:
            edges = np.isin(labels, strong_labels)

    raster = np.where(edges, 255, 0).astype(np.uint8)
    return EdgeMap(raster=raster, params=(float(sigma), float(low), float(high)))
