"""Slides, tiles and synthetic slide generation.

A slide is an 8-bit RGB raster with an aligned per-pixel region-label mask
(0 = background glass, 1 = normal tissue, 2 = tumor).  Synthetic slides are
carved from a low-frequency value-noise field so that regions are contiguous
and spatially continuous, mimicking stained tissue at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import kernels
from .rng import STREAM_SLIDE_FIELD, STREAM_SLIDE_TEXTURE, derive_key, hash_uniform_array


class RegionLabel(IntEnum):
    BACKGROUND = 0
    NORMAL = 1
    TUMOR = 2


@dataclass
class Slide:
    """An RGB raster plus optional per-pixel region labels.

    pixels is (height, width, 3) uint8; labels, when present, is
    (height, width) uint8 with values from RegionLabel.  Label masks are
    optional so that training code paths can load pixels only.
    """

    slide_id: int
    width: int
    height: int
    pixels: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.slide_id < 0:
            raise ValueError("slide_id must be non-negative")
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel raster shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if self.labels is not None and self.labels.shape != (self.height, self.width):
            raise ValueError("label mask shape does not match slide dimensions")


@dataclass(frozen=True)
class TileCoord:
    """Top-left corner of a square tile within a slide."""

    slide_id: int
    x: int
    y: int


@dataclass
class Tile:
    coord: TileCoord
    size: int
    rgb: np.ndarray

    def __post_init__(self):
        if self.rgb.shape != (self.size, self.size, 3):
            raise ValueError("tile raster shape does not match size")


@dataclass(frozen=True)
class ClassTexture:
    """Rendering parameters for one region class."""

    base_rgb: tuple[float, float, float]
    noise_amplitude: float
    spot_density: float


# Hematoxylin/eosin flavored defaults: glass, pink tissue, purple tumor.
DEFAULT_TEXTURES = (
    ClassTexture(base_rgb=(242.0, 240.0, 243.0), noise_amplitude=0.015, spot_density=0.0),
    ClassTexture(base_rgb=(214.0, 154.0, 188.0), noise_amplitude=0.10, spot_density=0.10),
    ClassTexture(base_rgb=(140.0, 90.0, 164.0), noise_amplitude=0.12, spot_density=0.30),
)

_SPOT_RGB = np.array([58.0, 44.0, 110.0])
_FINE_CELL = 9.0
_SPOT_CELL = 3.0

# Region-field wavelength relative to min_region_diameter, and the relative
# amplitude of the half-wavelength detail octave.  Tuned so that grid tiles
# closer than min_region_diameter/2 share a majority label >= 90% of the
# time while boundaries stay organic.
_REGION_CELL_MULT = 2.5
_REGION_DETAIL_AMP = 0.15

# Normal tissue is carved into discrete visual sub-types (stroma-like,
# fatty, lymphoid-like, plain) that recur across slides.  Distant tiles then
# usually look different (different sub-type) while neighbors match, which
# is the spatial-continuity premise; and because sub-types repeat on every
# slide, appearance stays informative for cross-slide retrieval.
_SUBTYPE_BRIGHT = (1.10, 1.00, 0.90, 1.04)
_SUBTYPE_TINT = (0.10, 0.00, -0.09, 0.04)
_SUBTYPE_SPOT_MULT = (0.35, 1.00, 1.70, 0.70)

# Weak slide-scale brightness/tint drift on top, for stain-like variation.
_APPEARANCE_WAVELENGTH_FRAC = 0.6
_APPEARANCE_BRIGHTNESS_DEPTH = 0.06
_APPEARANCE_TINT_DEPTH = 0.04


@dataclass(frozen=True)
class SyntheticSlideSpec:
    """Recipe for one synthetic slide.

    tumor_fraction and background_fraction are target pixel fractions; the
    remainder is normal tissue.  min_region_diameter controls the feature
    size of the carved regions and should be at least twice the tile size
    used downstream so that nearby tiles usually share a region.
    """

    width: int
    height: int
    tumor_fraction: float
    background_fraction: float
    min_region_diameter: int
    rng_seed: int
    textures: tuple[ClassTexture, ClassTexture, ClassTexture] = DEFAULT_TEXTURES

    def __post_init__(self):
        if not (0.0 <= self.tumor_fraction <= 1.0 and 0.0 <= self.background_fraction <= 1.0):
            raise ValueError("class fractions must lie in [0, 1]")
        if self.tumor_fraction + self.background_fraction >= 1.0:
            raise ValueError("tumor_fraction + background_fraction must be < 1")
        if self.min_region_diameter < 2:
            raise ValueError("min_region_diameter must be at least 2 pixels")
        if self.width < self.min_region_diameter or self.height < self.min_region_diameter:
            raise ValueError("slide dimensions must be at least min_region_diameter")


def _noise_field(seed: int, stream: int, tag: int, cell: float, height: int, width: int) -> np.ndarray:
    """Value noise in [0, 1] with lattice values hashed from (seed, stream, tag)."""
    key = derive_key(seed, stream, tag)
    gh = int(height / cell) + 2
    gw = int(width / cell) + 2
    counters = np.arange(gh * gw, dtype=np.uint64)
    lattice = hash_uniform_array(key, counters).reshape(gh, gw)
    return kernels.value_noise_bilerp(lattice, cell, height, width)


def generate_synthetic_slide(spec: SyntheticSlideSpec, slide_id: int = 0) -> Slide:
    """Deterministically render a labeled synthetic slide.

    Regions come from thresholding a two-octave value-noise field at the
    quantiles matching the requested class fractions: low values become
    background, high values tumor, the middle normal tissue.  Because the
    field is continuous, tumor regions sit inside tissue and all regions
    are contiguous with feature size near min_region_diameter.
    """
    h, w = spec.height, spec.width
    cell = _REGION_CELL_MULT * spec.min_region_diameter
    base = _noise_field(spec.rng_seed, STREAM_SLIDE_FIELD, 0, cell, h, w)
    detail = _noise_field(spec.rng_seed, STREAM_SLIDE_FIELD, 1, cell / 2.0, h, w)
    fld = (base + _REGION_DETAIL_AMP * detail) / (1.0 + _REGION_DETAIL_AMP)

    labels = np.ones((h, w), dtype=np.uint8)
    if spec.background_fraction > 0.0:
        t_bg = np.quantile(fld, spec.background_fraction)
        labels[fld < t_bg] = RegionLabel.BACKGROUND
    if spec.tumor_fraction > 0.0:
        t_tu = np.quantile(fld, 1.0 - spec.tumor_fraction)
        labels[fld > t_tu] = RegionLabel.TUMOR

    fine = _noise_field(spec.rng_seed, STREAM_SLIDE_TEXTURE, 0, _FINE_CELL, h, w)
    spots = _noise_field(spec.rng_seed, STREAM_SLIDE_TEXTURE, 1, _SPOT_CELL, h, w)

    wl = _APPEARANCE_WAVELENGTH_FRAC * max(h, w)
    drift_b = 2.0 * _noise_field(spec.rng_seed, STREAM_SLIDE_TEXTURE, 2, wl, h, w) - 1.0
    drift_t = 2.0 * _noise_field(spec.rng_seed, STREAM_SLIDE_TEXTURE, 3, wl, h, w) - 1.0
    sub = _noise_field(spec.rng_seed, STREAM_SLIDE_TEXTURE, 5, cell, h, w)
    band = np.digitize(sub, np.quantile(sub, [0.25, 0.5, 0.75]))

    rgb = np.empty((h, w, 3), dtype=np.float64)
    mod = 2.0 * fine - 1.0
    for cls, tex in enumerate(spec.textures):
        mask = labels == cls
        if not mask.any():
            continue
        shade = 1.0 + tex.noise_amplitude * mod[mask]
        px = np.asarray(tex.base_rgb)[None, :] * shade[:, None]
        density = np.full(px.shape[0], tex.spot_density)
        if cls == RegionLabel.NORMAL:
            b = band[mask]
            bright = np.take(_SUBTYPE_BRIGHT, b)
            tint = np.take(_SUBTYPE_TINT, b)
            px[:, 0] *= bright + tint
            px[:, 1] *= bright
            px[:, 2] *= bright - tint
            density = density * np.take(_SUBTYPE_SPOT_MULT, b)
        if cls != RegionLabel.BACKGROUND:
            bright = 1.0 + _APPEARANCE_BRIGHTNESS_DEPTH * drift_b[mask]
            tint = _APPEARANCE_TINT_DEPTH * drift_t[mask]
            px[:, 0] *= bright + tint
            px[:, 1] *= bright
            px[:, 2] *= bright - tint
        if tex.spot_density > 0.0:
            spotted = spots[mask] > 1.0 - density
            blend = 0.75
            px[spotted] = (1.0 - blend) * px[spotted] + blend * _SPOT_RGB[None, :]
        rgb[mask] = px

    pixels = np.floor(np.clip(rgb, 0.0, 255.0) + 0.5).astype(np.uint8)
    return Slide(slide_id=slide_id, width=w, height=h, pixels=pixels, labels=labels)


def tile_grid(slide: Slide, tile_size: int) -> list[TileCoord]:
    """Non-overlapping grid coords in row-major order; remainder pixels drop."""
    if tile_size < 1:
        raise ValueError("tile_size must be at least 1")
    nx = slide.width // tile_size
    ny = slide.height // tile_size
    return [
        TileCoord(slide.slide_id, x * tile_size, y * tile_size)
        for y in range(ny)
        for x in range(nx)
    ]


def _check_bounds(slide: Slide, coord: TileCoord, tile_size: int):
    if coord.x < 0 or coord.y < 0 or coord.x + tile_size > slide.width or coord.y + tile_size > slide.height:
        raise ValueError(
            f"tile at ({coord.x}, {coord.y}) size {tile_size} exceeds "
            f"slide {slide.slide_id} bounds {slide.width}x{slide.height}"
        )


def extract_tile(slide: Slide, coord: TileCoord, tile_size: int) -> Tile:
    """Copy the exact sub-raster at coord; no resampling."""
    _check_bounds(slide, coord, tile_size)
    rgb = slide.pixels[coord.y : coord.y + tile_size, coord.x : coord.x + tile_size, :].copy()
    return Tile(coord=coord, size=tile_size, rgb=rgb)


def tile_label(
    slide: Slide, coord: TileCoord, tile_size: int, background_threshold: float = 0.8
) -> RegionLabel:
    """Classify a tile from the label mask.

    TUMOR only when every pixel is tumor; otherwise BACKGROUND when the
    background pixel fraction exceeds background_threshold, else NORMAL.
    """
    if slide.labels is None:
        raise ValueError("slide has no label mask")
    if not 0.0 <= background_threshold <= 1.0:
        raise ValueError("background_threshold must lie in [0, 1]")
    _check_bounds(slide, coord, tile_size)
    crop = slide.labels[coord.y : coord.y + tile_size, coord.x : coord.x + tile_size]
    if (crop == RegionLabel.TUMOR).all():
        return RegionLabel.TUMOR
    bg_frac = (crop == RegionLabel.BACKGROUND).mean()
    if bg_frac > background_threshold:
        return RegionLabel.BACKGROUND
    return RegionLabel.NORMAL


def majority_label(slide: Slide, coord: TileCoord, tile_size: int) -> RegionLabel:
    """Most frequent region label within the tile, ties to the lower value."""
    if slide.labels is None:
        raise ValueError("slide has no label mask")
    _check_bounds(slide, coord, tile_size)
    crop = slide.labels[coord.y : coord.y + tile_size, coord.x : coord.x + tile_size]
    return RegionLabel(int(np.bincount(crop.ravel(), minlength=3).argmax()))
