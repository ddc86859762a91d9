"""CIELAB conversion and mean/std stain normalization.

LAB is CIE 1976 L*a*b* under sRGB primaries and the D65 white point, the
universal convention.  Stain normalization matches each LAB channel's mean
and population standard deviation to a preselected target tile, a cheap
stand-in for proper stain deconvolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .slides import Tile

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class LabStats:
    """Per-channel LAB mean and population standard deviation."""

    mean_l: float
    mean_a: float
    mean_b: float
    std_l: float
    std_a: float
    std_b: float

    def __post_init__(self):
        vals = (self.mean_l, self.mean_a, self.mean_b, self.std_l, self.std_a, self.std_b)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("LAB statistics must be finite")
        if self.std_l < 0 or self.std_a < 0 or self.std_b < 0:
            raise ValueError("standard deviations must be non-negative")

    @property
    def means(self) -> np.ndarray:
        return np.array([self.mean_l, self.mean_a, self.mean_b])

    @property
    def stds(self) -> np.ndarray:
        return np.array([self.std_l, self.std_a, self.std_b])


def rgb_to_lab(rgb: tuple[float, float, float]) -> tuple[float, float, float]:
    """One 8-bit RGB triple to LAB; L spans [0, 100]."""
    arr = np.asarray(rgb, dtype=np.float64).reshape(1, 3) / 255.0
    out = kernels.rgb01_to_lab(arr)
    return float(out[0, 0]), float(out[0, 1]), float(out[0, 2])


def lab_to_rgb(lab: tuple[float, float, float]) -> tuple[int, int, int]:
    """Inverse conversion; out-of-gamut values clamp, never fail."""
    arr = np.asarray(lab, dtype=np.float64).reshape(1, 3)
    rgb01 = kernels.lab_to_rgb01(arr)
    q = np.floor(rgb01[0] * 255.0 + 0.5).astype(np.int64)
    return int(q[0]), int(q[1]), int(q[2])


def lab_image(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 raster to (H, W, 3) float64 LAB."""
    h, w, _ = rgb.shape
    flat = rgb.reshape(-1, 3).astype(np.float64) / 255.0
    return kernels.rgb01_to_lab(flat).reshape(h, w, 3)


def rgb_image(lab: np.ndarray) -> np.ndarray:
    """(H, W, 3) float64 LAB back to uint8 RGB with clamping."""
    h, w, _ = lab.shape
    rgb01 = kernels.lab_to_rgb01(np.ascontiguousarray(lab.reshape(-1, 3)))
    return np.floor(rgb01 * 255.0 + 0.5).astype(np.uint8).reshape(h, w, 3)


def stats_of_raster(rgb: np.ndarray) -> LabStats:
    """LAB channel statistics of any (H, W, 3) uint8 raster."""
    lab = lab_image(rgb).reshape(-1, 3)
    means = lab.mean(axis=0)
    stds = lab.std(axis=0)
    return LabStats(
        mean_l=float(means[0]),
        mean_a=float(means[1]),
        mean_b=float(means[2]),
        std_l=float(stds[0]),
        std_a=float(stds[1]),
        std_b=float(stds[2]),
    )


def channel_stats(tile: Tile) -> LabStats:
    """Mean and population std of each LAB channel over all tile pixels."""
    return stats_of_raster(tile.rgb)


def stain_normalize(tile: Tile, target: LabStats) -> Tile:
    """Affine-match the tile's LAB channel statistics to the target.

    Channels with source std below STD_FLOOR shift to the target mean
    without amplification (scale fixed at 1).
    """
    lab = lab_image(tile.rgb)
    src = channel_stats(tile)
    safe = np.where(src.stds < STD_FLOOR, 1.0, src.stds)
    scale = np.where(src.stds < STD_FLOOR, 1.0, target.stds / safe)
    out = (lab - src.means) * scale + target.means
    return Tile(coord=tile.coord, size=tile.size, rgb=rgb_image(out))
