"""Descriptor sets, metrics, nearest neighbor search and PCA export."""

import numpy as np
import pytest

from patho_ssl.color import channel_stats, stain_normalize
from patho_ssl.errors import DataFormatError
from patho_ssl.net import init_params, forward
from patho_ssl.pairs import PairLabel
from patho_ssl.retrieval import (
    DescriptorSet,
    EvalPairSet,
    addr,
    build_eval_pairs,
    embed_all,
    load_descriptors,
    nearest_neighbor,
    pca_project,
    retrieval_ratio,
    save_descriptors,
    write_metrics_csv,
)
from patho_ssl.slides import (
    RegionLabel,
    SyntheticSlideSpec,
    TileCoord,
    extract_tile,
    generate_synthetic_slide,
    tile_grid,
    tile_label,
)

TUMOR = int(RegionLabel.TUMOR)
NORMAL = int(RegionLabel.NORMAL)


def _ds(emb, slide_ids, labels):
    n = len(slide_ids)
    return DescriptorSet(
        slide_ids=np.asarray(slide_ids, dtype=np.int32),
        xs=np.arange(n, dtype=np.int32) * 32,
        ys=np.zeros(n, dtype=np.int32),
        labels=np.asarray(labels, dtype=np.uint8),
        emb=np.asarray(emb, dtype=np.float32),
    )


def _pairs(ia, ib, labels):
    return EvalPairSet(
        ia=np.asarray(ia, dtype=np.int64),
        ib=np.asarray(ib, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.uint8),
    )


@pytest.fixture(scope="module")
def eval_slides():
    slides = {}
    for i in range(3):
        spec = SyntheticSlideSpec(256, 256, 0.15, 0.1, 64, rng_seed=400 + i)
        slides[i] = generate_synthetic_slide(spec, slide_id=i)
    return slides


class TestEmbedAll:
    def test_count_matches_surviving_tiles(self, eval_slides):
        params = init_params(0)
        ts = 32
        target = channel_stats(extract_tile(eval_slides[0], TileCoord(0, 0, 0), ts))
        ds = embed_all(params, eval_slides, ts, target)
        expected = sum(
            1
            for sl in eval_slides.values()
            for c in tile_grid(sl, ts)
            if tile_label(sl, c, ts) != RegionLabel.BACKGROUND
        )
        assert len(ds) == expected
        assert ds.emb.shape == (expected, 128)

    def test_duplicate_slides_embed_identically(self, eval_slides):
        params = init_params(0)
        ts = 32
        sl = eval_slides[0]
        clone = type(sl)(1, sl.width, sl.height, sl.pixels.copy(), sl.labels.copy())
        target = channel_stats(extract_tile(sl, TileCoord(0, 0, 0), ts))
        ds = embed_all(params, {0: sl, 1: clone}, ts, target)
        a = ds.emb[ds.slide_ids == 0]
        b = ds.emb[ds.slide_ids == 1]
        assert np.array_equal(a, b)

    def test_matches_standalone_forward(self, eval_slides):
        params = init_params(1)
        ts = 32
        sl = eval_slides[0]
        target = channel_stats(extract_tile(sl, TileCoord(0, 0, 0), ts))
        ds = embed_all(params, {0: sl}, ts, target)
        coord = TileCoord(0, int(ds.xs[0]), int(ds.ys[0]))
        tile = stain_normalize(extract_tile(sl, coord, ts), target)
        ref = forward(params, tile.rgb.astype(np.float32) / np.float32(255.0))
        assert np.array_equal(ds.emb[0], ref.astype(np.float32))

    def test_workers_do_not_change_output(self, eval_slides):
        params = init_params(2)
        ts = 32
        target = channel_stats(extract_tile(eval_slides[0], TileCoord(0, 0, 0), ts))
        a = embed_all(params, eval_slides, ts, target, workers=1)
        b = embed_all(params, eval_slides, ts, target, workers=4)
        assert np.array_equal(a.emb, b.emb)
        assert np.array_equal(a.labels, b.labels)


class TestAddr:
    def test_equal_distances_give_one(self):
        emb = np.zeros((4, 128))
        emb[1, 0] = emb[3, 1] = 2.0
        ds = _ds(emb, [0, 1, 0, 1], [TUMOR, TUMOR, TUMOR, NORMAL])
        pairs = _pairs([0, 0], [1, 3], [PairLabel.SIMILAR, PairLabel.DISSIMILAR])
        assert addr(ds, pairs) == pytest.approx(1.0)

    def test_hand_computed_ratio(self):
        # similar distances {1, 1}, dissimilar {2, 4} -> 3/1 = 3.0
        emb = np.zeros((5, 128))
        emb[1, 0] = 1.0
        emb[2, 1] = 1.0
        emb[3, 2] = 2.0
        emb[4, 3] = 4.0
        ds = _ds(emb, [0] * 5, [TUMOR] * 5)
        pairs = _pairs([0, 0, 0, 0], [1, 2, 3, 4], [0, 0, 1, 1])
        assert addr(ds, pairs) == pytest.approx(3.0)

    def test_permutation_and_swap_invariance(self):
        rng = np.random.default_rng(0)
        emb = rng.standard_normal((20, 128))
        ds = _ds(emb, [0] * 20, [TUMOR] * 20)
        ia = np.arange(10)
        ib = np.arange(10, 20)
        labels = np.array([0, 1] * 5, dtype=np.uint8)
        base = addr(ds, _pairs(ia, ib, labels))
        perm = np.random.default_rng(1).permutation(10)
        assert addr(ds, _pairs(ia[perm], ib[perm], labels[perm])) == pytest.approx(base, rel=1e-12)
        assert addr(ds, _pairs(ib, ia, labels)) == pytest.approx(base, rel=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        emb = rng.standard_normal((10, 128)).astype(np.float32)
        ds1 = _ds(emb, [0] * 10, [TUMOR] * 10)
        ds2 = _ds(emb * 7.5, [0] * 10, [TUMOR] * 10)
        pairs = _pairs([0, 1, 2, 3], [4, 5, 6, 7], [0, 0, 1, 1])
        assert addr(ds2, pairs) == pytest.approx(addr(ds1, pairs), rel=1e-5)

    def test_error_cases(self):
        emb = np.zeros((3, 128))
        ds = _ds(emb, [0, 0, 0], [TUMOR] * 3)
        with pytest.raises(ValueError, match="both"):
            addr(ds, _pairs([0], [1], [0]))
        with pytest.raises(ValueError, match="undefined"):
            addr(ds, _pairs([0, 0], [1, 2], [0, 1]))


class TestNearestNeighbor:
    def test_exact_duplicate_on_other_slide(self):
        rng = np.random.default_rng(1)
        emb = rng.standard_normal((10, 128))
        emb[7] = emb[2]
        ds = _ds(emb, [0, 0, 0, 1, 1, 1, 1, 1, 0, 0], [TUMOR] * 10)
        assert nearest_neighbor(2, ds) == 7

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(42)
        n = 200
        emb = rng.standard_normal((n, 16))
        slides = rng.integers(0, 5, size=n)
        ds = _ds(emb, slides, [TUMOR] * n)

        def oracle(q):
            best, best_d = -1, float("inf")
            for j in range(n):
                if slides[j] == slides[q]:
                    continue
                d = 0.0
                for k in range(16):
                    d += (float(emb[q, k]) - float(emb[j, k])) ** 2
                if d < best_d:
                    best, best_d = j, d
            return best

        got = [nearest_neighbor(q, ds) for q in range(n)]
        assert got == [oracle(q) for q in range(n)]

    def test_own_slide_minimum_excluded(self):
        emb = np.zeros((3, 128))
        emb[0, 0] = 0.0
        emb[1, 0] = 0.001  # same slide, global minimum distance
        emb[2, 0] = 5.0
        ds = _ds(emb, [0, 0, 1], [TUMOR] * 3)
        assert nearest_neighbor(0, ds) == 2

    def test_tie_breaks_to_lowest_index(self):
        emb = np.zeros((4, 128))
        emb[2, 0] = emb[3, 0] = 1.0  # identical candidates on other slides
        ds = _ds(emb, [0, 0, 1, 2], [TUMOR] * 4)
        assert nearest_neighbor(0, ds) == 2

    def test_no_cross_slide_candidates(self):
        ds = _ds(np.zeros((2, 128)), [0, 0], [TUMOR, TUMOR])
        with pytest.raises(ValueError, match="cross-slide"):
            nearest_neighbor(0, ds)


class TestRetrievalRatio:
    def test_perfectly_separated_classes(self):
        rng = np.random.default_rng(3)
        n = 40
        labels = np.array([TUMOR] * 10 + [NORMAL] * 30)
        emb = rng.standard_normal((n, 128)) * 0.01
        emb[labels == TUMOR, 0] += 100.0
        slides = np.tile([0, 1, 2, 3], 10)
        ds = _ds(emb, slides, labels)
        assert retrieval_ratio(ds) == 1.0

    def test_random_embeddings_track_prevalence(self):
        # with structureless embeddings the hit rate approaches the tumor
        # prevalence; 0.03 here, averaged over 5 seeds
        ratios = []
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            n = 3000
            emb = rng.standard_normal((n, 32))
            labels = np.where(rng.random(n) < 0.03, TUMOR, NORMAL)
            if not (labels == TUMOR).any():
                labels[0] = TUMOR
            slides = rng.integers(0, 6, size=n)
            ratios.append(retrieval_ratio(_ds(emb, slides, labels)))
        assert abs(float(np.mean(ratios)) - 0.03) <= 0.02

    def test_workers_agree(self):
        rng = np.random.default_rng(8)
        n = 100
        ds = _ds(rng.standard_normal((n, 64)), rng.integers(0, 4, n),
                 np.where(rng.random(n) < 0.2, TUMOR, NORMAL))
        assert retrieval_ratio(ds, workers=1) == retrieval_ratio(ds, workers=3)

    def test_no_tumor_tiles_rejected(self):
        ds = _ds(np.zeros((3, 128)), [0, 1, 2], [NORMAL] * 3)
        with pytest.raises(ValueError, match="tumor"):
            retrieval_ratio(ds)


class TestPcaProject:
    def test_collinear_data_has_flat_second_component(self):
        t = np.linspace(-2, 2, 50)
        direction = np.zeros(128)
        direction[3] = 1.0
        emb = t[:, None] * direction[None, :]
        ds = _ds(emb, [0] * 50, [TUMOR] * 50)
        coords = pca_project(ds, dims=2)
        assert coords[:, 1].var() < 1e-9

    def test_component_variances_descend(self):
        rng = np.random.default_rng(4)
        emb = rng.standard_normal((100, 128)) * np.linspace(3, 0.1, 128)
        ds = _ds(emb, [0] * 100, [TUMOR] * 100)
        coords = pca_project(ds, dims=2)
        assert coords[:, 0].var() >= coords[:, 1].var()

    def test_planar_data_preserves_pairwise_distances(self):
        rng = np.random.default_rng(5)
        basis = np.linalg.qr(rng.standard_normal((128, 2)))[0].T
        plane = rng.standard_normal((40, 2)) @ basis  # exact 2-D subspace
        ds = _ds(plane, [0] * 40, [TUMOR] * 40)
        coords = pca_project(ds, dims=2)
        d_orig = np.linalg.norm(plane[:, None] - plane[None, :], axis=2)
        d_proj = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
        np.testing.assert_allclose(d_proj, d_orig, rtol=1e-5, atol=1e-5)

    def test_needs_more_points_than_dims(self):
        ds = _ds(np.zeros((2, 128)), [0, 0], [TUMOR] * 2)
        with pytest.raises(ValueError):
            pca_project(ds, dims=2)


class TestDescriptorFile:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        ds = _ds(rng.standard_normal((17, 128)), rng.integers(0, 3, 17),
                 rng.integers(0, 3, 17))
        p = str(tmp_path / "d.ssdf")
        save_descriptors(ds, p)
        back = load_descriptors(p)
        assert np.array_equal(back.emb, ds.emb)
        assert np.array_equal(back.slide_ids, ds.slide_ids)
        assert np.array_equal(back.labels, ds.labels)
        assert open(p, "rb").read()[:4] == b"SSDF"

    def test_bad_magic_and_size(self, tmp_path):
        p = tmp_path / "x.ssdf"
        p.write_bytes(b"JUNK" + bytes(16))
        with pytest.raises(DataFormatError):
            load_descriptors(str(p))
        good = tmp_path / "g.ssdf"
        ds = _ds(np.zeros((2, 8)), [0, 1], [1, 2])
        save_descriptors(ds, str(good))
        cut = tmp_path / "cut.ssdf"
        cut.write_bytes(good.read_bytes()[:-3])
        with pytest.raises(DataFormatError):
            load_descriptors(str(cut))


class TestBuildEvalPairs:
    def test_label_mode_assigns_by_class(self, eval_slides):
        params = init_params(0)
        ts = 32
        target = channel_stats(extract_tile(eval_slides[0], TileCoord(0, 0, 0), ts))
        ds = embed_all(params, eval_slides, ts, target)
        pairs = build_eval_pairs(ds, d_near=64.0, d_far=180.0, k_near=4, k_far=4, seed=2)
        assert len(pairs) > 0
        for i in range(len(pairs)):
            assert ds.labels[pairs.ia[i]] == RegionLabel.TUMOR
            want = (
                PairLabel.SIMILAR
                if ds.labels[pairs.ib[i]] == RegionLabel.TUMOR
                else PairLabel.DISSIMILAR
            )
            assert pairs.labels[i] == want

    def test_spatial_mode_labels_by_band(self, eval_slides):
        params = init_params(0)
        ts = 32
        target = channel_stats(extract_tile(eval_slides[0], TileCoord(0, 0, 0), ts))
        ds = embed_all(params, eval_slides, ts, target)
        pairs = build_eval_pairs(ds, d_near=64.0, d_far=180.0, k_near=2, k_far=2,
                                 seed=2, mode="spatial")
        for i in range(len(pairs)):
            a, b = pairs.ia[i], pairs.ib[i]
            d = np.hypot(float(ds.xs[a] - ds.xs[b]), float(ds.ys[a] - ds.ys[b]))
            if pairs.labels[i] == PairLabel.SIMILAR:
                assert 0.0 < d <= 64.0
            else:
                assert d >= 180.0

    def test_deterministic(self, eval_slides):
        params = init_params(0)
        ts = 32
        target = channel_stats(extract_tile(eval_slides[0], TileCoord(0, 0, 0), ts))
        ds = embed_all(params, eval_slides, ts, target)
        a = build_eval_pairs(ds, 64.0, 180.0, seed=5)
        b = build_eval_pairs(ds, 64.0, 180.0, seed=5)
        assert np.array_equal(a.ia, b.ia) and np.array_equal(a.labels, b.labels)

    def test_unknown_mode(self):
        ds = _ds(np.zeros((3, 8)), [0, 0, 0], [TUMOR] * 3)
        with pytest.raises(ValueError):
            build_eval_pairs(ds, 1.0, 2.0, mode="nope")


def test_metrics_csv_layout(tmp_path):
    p = tmp_path / "m.csv"
    write_metrics_csv(str(p), {"addr": 1.25, "retrieval_ratio": 0.4375})
    assert p.read_text() == "metric,value\naddr,1.25\nretrieval_ratio,0.4375\n"


def test_descriptor_set_rejects_duplicate_ids():
    with pytest.raises(ValueError, match="unique"):
        DescriptorSet(
            slide_ids=np.array([0, 0], dtype=np.int32),
            xs=np.array([0, 0], dtype=np.int32),
            ys=np.array([0, 0], dtype=np.int32),
            labels=np.array([1, 1], dtype=np.uint8),
            emb=np.zeros((2, 8), dtype=np.float32),
        )
