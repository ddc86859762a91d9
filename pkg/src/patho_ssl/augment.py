"""Training-time tile augmentation: flips, bounded rotation, color jitter.

Applied in a fixed order with draws from one substream, so a (config,
draw_seed) pair always produces the same output tile.  Rotation resamples
bilinearly with symmetric reflect padding; brightness and saturation are
multiplicative factors in [1-j, 1+j], hue shifts additively by a fraction
of the hue circle in [-j, +j].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .rng import STREAM_AUGMENT, Stream
from .slides import Tile


@dataclass(frozen=True)
class AugmentConfig:
    h_flip: bool = True
    v_flip: bool = True
    max_rotation_deg: float = 20.0
    jitter: float = 0.075
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise ValueError("max_rotation_deg must be non-negative")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


def _rgb_to_hsv(rgb01: np.ndarray):
    r, g, b = rgb01[..., 0], rgb01[..., 1], rgb01[..., 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    v = maxc
    rng = maxc - minc
    safe = np.where(maxc > 0.0, maxc, 1.0)
    s = np.where(maxc > 0.0, rng / safe, 0.0)
    safe_rng = np.where(rng > 0.0, rng, 1.0)
    rc = (maxc - r) / safe_rng
    gc = (maxc - g) / safe_rng
    bc = (maxc - b) / safe_rng
    h = np.where(
        rng == 0.0,
        0.0,
        np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc)),
    )
    h = (h / 6.0) % 1.0
    return h, s, v


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    im = i.astype(np.int64) % 6
    r = np.choose(im, [v, q, p, p, t, v])
    g = np.choose(im, [t, v, v, q, p, p])
    b = np.choose(im, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def augment(tile: Tile, cfg: AugmentConfig, draw_seed: int) -> Tile:
    """Flips, rotation, color jitter; identity when every knob is off."""
    if tile.rgb.shape[0] != tile.rgb.shape[1]:
        raise ValueError("augmentation expects square tiles")
    stream = Stream(cfg.rng_seed, STREAM_AUGMENT, draw_seed)

    rgb = tile.rgb
    if cfg.h_flip and stream.uniform() < 0.5:
        rgb = rgb[:, ::-1, :]
    if cfg.v_flip and stream.uniform() < 0.5:
        rgb = rgb[::-1, :, :]

    angle_deg = 0.0
    if cfg.max_rotation_deg > 0.0:
        angle_deg = (2.0 * stream.uniform() - 1.0) * cfg.max_rotation_deg
    fb = fs = 1.0
    dh = 0.0
    if cfg.jitter > 0.0:
        fb = 1.0 + (2.0 * stream.uniform() - 1.0) * cfg.jitter
        fs = 1.0 + (2.0 * stream.uniform() - 1.0) * cfg.jitter
        dh = (2.0 * stream.uniform() - 1.0) * cfg.jitter

    if angle_deg == 0.0 and fb == 1.0 and fs == 1.0 and dh == 0.0:
        return Tile(coord=tile.coord, size=tile.size, rgb=np.ascontiguousarray(rgb))

    work = rgb.astype(np.float64)
    if angle_deg != 0.0:
        rad = math.radians(angle_deg)
        work = kernels.rotate_bilinear_reflect(work, math.cos(rad), math.sin(rad))
    if fb != 1.0 or fs != 1.0 or dh != 0.0:
        h, s, v = _rgb_to_hsv(work / 255.0)
        v = np.clip(v * fb, 0.0, 1.0)
        s = np.clip(s * fs, 0.0, 1.0)
        h = (h + dh) % 1.0
        work = _hsv_to_rgb(h, s, v) * 255.0
    out = np.floor(np.clip(work, 0.0, 255.0) + 0.5).astype(np.uint8)
    return Tile(coord=tile.coord, size=tile.size, rgb=out)
