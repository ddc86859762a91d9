"""Tile grids, extraction, labeling rules and the synthetic generator."""

import numpy as np
import pytest

from patho_ssl.rng import Stream
from patho_ssl.slides import (
    RegionLabel,
    Slide,
    SyntheticSlideSpec,
    TileCoord,
    extract_tile,
    generate_synthetic_slide,
    majority_label,
    tile_grid,
    tile_label,
)

from conftest import make_slide


class TestTileGrid:
    def test_exact_fit(self):
        coords = tile_grid(make_slide(448, 448), 224)
        assert [(c.x, c.y) for c in coords] == [(0, 0), (224, 0), (0, 224), (224, 224)]

    def test_remainder_dropped(self):
        coords = tile_grid(make_slide(450, 450), 224)
        assert len(coords) == 4

    def test_single_tile(self):
        coords = tile_grid(make_slide(224, 224), 224)
        assert [(c.x, c.y) for c in coords] == [(0, 0)]

    def test_tile_larger_than_slide_gives_empty(self):
        assert tile_grid(make_slide(100, 100), 224) == []

    def test_bad_tile_size(self):
        with pytest.raises(ValueError):
            tile_grid(make_slide(), 0)

    def test_grid_reconstructs_cropped_slide(self, synthetic_slide):
        ts = 96
        nx = synthetic_slide.width // ts
        ny = synthetic_slide.height // ts
        rebuilt = np.zeros((ny * ts, nx * ts, 3), dtype=np.uint8)
        for c in tile_grid(synthetic_slide, ts):
            t = extract_tile(synthetic_slide, c, ts)
            rebuilt[c.y : c.y + ts, c.x : c.x + ts] = t.rgb
        assert np.array_equal(rebuilt, synthetic_slide.pixels[: ny * ts, : nx * ts])


class TestExtractTile:
    def test_uniform_color(self):
        slide = make_slide(color=(10, 20, 30))
        t = extract_tile(slide, TileCoord(0, 0, 0), 32)
        assert (t.rgb == np.array([10, 20, 30])).all()

    def test_matches_manual_pixel_copy(self, synthetic_slide):
        # brute-force oracle: copy pixel by pixel with plain loops
        ts = 16
        coord = TileCoord(0, 48, 32)
        t = extract_tile(synthetic_slide, coord, ts)
        for yy in range(ts):
            for xx in range(ts):
                expect = synthetic_slide.pixels[coord.y + yy, coord.x + xx]
                assert (t.rgb[yy, xx] == expect).all()

    def test_out_of_bounds(self):
        slide = make_slide(64, 64)
        with pytest.raises(ValueError):
            extract_tile(slide, TileCoord(0, 64, 0), 32)
        with pytest.raises(ValueError):
            extract_tile(slide, TileCoord(0, 0, -1), 32)


class TestTileLabel:
    def _slide_with_labels(self, labels):
        h, w = labels.shape
        pixels = np.zeros((h, w, 3), dtype=np.uint8)
        return Slide(slide_id=0, width=w, height=h, pixels=pixels, labels=labels.astype(np.uint8))

    def test_fully_tumor(self):
        slide = self._slide_with_labels(np.full((8, 8), 2))
        assert tile_label(slide, TileCoord(0, 0, 0), 8) == RegionLabel.TUMOR

    def test_one_normal_pixel_breaks_tumor(self):
        labels = np.full((8, 8), 2)
        labels[3, 5] = 1
        slide = self._slide_with_labels(labels)
        assert tile_label(slide, TileCoord(0, 0, 0), 8) == RegionLabel.NORMAL

    def test_background_threshold(self):
        labels = np.zeros((10, 10))
        labels[0, :] = 1  # 90% background
        slide = self._slide_with_labels(labels)
        assert tile_label(slide, TileCoord(0, 0, 0), 10, 0.8) == RegionLabel.BACKGROUND
        assert tile_label(slide, TileCoord(0, 0, 0), 10, 0.95) == RegionLabel.NORMAL

    def test_requires_mask(self):
        slide = make_slide()
        slide.labels = None
        with pytest.raises(ValueError):
            tile_label(slide, TileCoord(0, 0, 0), 8)

    def test_majority_ties_take_lower_value(self):
        labels = np.zeros((8, 8))
        labels[:, 4:] = 2  # exactly half background, half tumor
        slide = self._slide_with_labels(labels)
        assert majority_label(slide, TileCoord(0, 0, 0), 8) == RegionLabel.BACKGROUND


class TestGenerator:
    def test_zero_tumor_fraction_has_no_tumor(self):
        spec = SyntheticSlideSpec(256, 256, 0.0, 0.2, 64, rng_seed=5)
        slide = generate_synthetic_slide(spec)
        assert not (slide.labels == RegionLabel.TUMOR).any()

    def test_deterministic(self):
        spec = SyntheticSlideSpec(256, 256, 0.1, 0.2, 64, rng_seed=11)
        a = generate_synthetic_slide(spec)
        b = generate_synthetic_slide(spec)
        assert np.array_equal(a.pixels, b.pixels)
        assert np.array_equal(a.labels, b.labels)

    def test_realized_tumor_fraction(self):
        # quantile thresholding tracks the requested fraction almost exactly;
        # frozen realized value from running this generator configuration
        spec = SyntheticSlideSpec(2048, 2048, 0.03, 0.2, 256, rng_seed=7)
        slide = generate_synthetic_slide(spec)
        frac = (slide.labels == RegionLabel.TUMOR).mean()
        assert 0.0 <= frac <= 0.13
        assert frac == pytest.approx(0.03, abs=0.002)

    def test_fraction_targets_hold_for_all_classes(self):
        spec = SyntheticSlideSpec(1024, 1024, 0.08, 0.25, 128, rng_seed=3)
        slide = generate_synthetic_slide(spec)
        fracs = np.bincount(slide.labels.ravel(), minlength=3) / slide.labels.size
        assert fracs[0] == pytest.approx(0.25, abs=0.1)
        assert fracs[2] == pytest.approx(0.08, abs=0.1)

    def test_textures_visually_distinct(self, synthetic_slide):
        means = []
        for cls in (0, 1, 2):
            mask = synthetic_slide.labels == cls
            means.append(synthetic_slide.pixels[mask].mean(axis=0))
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.abs(means[i] - means[j]).max() > 20

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSlideSpec(128, 128, 0.5, 0.5, 64, rng_seed=0)
        with pytest.raises(ValueError):
            SyntheticSlideSpec(32, 32, 0.1, 0.2, 64, rng_seed=0)
        with pytest.raises(ValueError):
            SyntheticSlideSpec(128, 128, -0.1, 0.2, 64, rng_seed=0)

    def test_spatial_continuity_of_nearby_tiles(self):
        # tiles closer than half the region diameter should usually agree
        spec = SyntheticSlideSpec(2048, 2048, 0.03, 0.2, 256, rng_seed=7)
        slide = generate_synthetic_slide(spec)
        ts = 32
        coords = tile_grid(slide, ts)
        maj = {(c.x, c.y): majority_label(slide, c, ts) for c in coords}
        stream = Stream(123, 99)
        radius = spec.min_region_diameter / 2
        same = pairs = tries = 0
        while pairs < 1000 and tries < 200_000:
            tries += 1
            i = stream.randint(len(coords))
            j = stream.randint(len(coords))
            a, b = coords[i], coords[j]
            d = np.hypot(a.x - b.x, a.y - b.y)
            if 0 < d <= radius:
                pairs += 1
                same += maj[(a.x, a.y)] == maj[(b.x, b.y)]
        assert pairs == 1000
        assert same / pairs >= 0.9


class TestSlideInvariants:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            Slide(0, 8, 8, np.zeros((8, 9, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            Slide(0, 8, 8, np.zeros((8, 8, 3), dtype=np.uint8), np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            Slide(-1, 8, 8, np.zeros((8, 8, 3), dtype=np.uint8))
