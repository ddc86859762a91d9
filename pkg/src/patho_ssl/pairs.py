"""Self-supervised pair sampling by spatial proximity.

Tiles closer than d_near are labeled similar, tiles at least d_far apart
dissimilar, and the band in between is a dead zone that emits nothing.
Distances are Euclidean between tile centers; for a shared tile size the
center offset cancels, so grid coordinates are compared directly.  All
pairs are intra-slide.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import kernels
from .errors import DataFormatError
from .rng import STREAM_PAIR_SAMPLER, Stream
from .slides import TileCoord

PAIRS_CSV_HEADER = "slide_a,x_a,y_a,slide_b,x_b,y_b,label"

# Grid-relative proximity thresholds: 1792 px and 9408 px at 224 px tiles,
# i.e. 8 and 42 tile widths, rescaled to whatever tile size is in use.
NEAR_TILE_UNITS = 8.0
FAR_TILE_UNITS = 42.0


class PairLabel(IntEnum):
    SIMILAR = 0
    DISSIMILAR = 1


@dataclass(frozen=True)
class SamplerConfig:
    """Proximity thresholds and per-anchor sample counts."""

    d_near: float
    d_far: float
    k_near: int
    k_far: int
    rng_seed: int
    exclude_background: bool = True

    def __post_init__(self):
        if not 0.0 < self.d_near < self.d_far:
            raise ValueError("thresholds must satisfy 0 < d_near < d_far")
        if self.k_near < 0 or self.k_far < 0:
            raise ValueError("pair counts must be non-negative")

    @classmethod
    def for_tile_size(
        cls,
        tile_size: int,
        k_near: int = 8,
        k_far: int = 8,
        rng_seed: int = 0,
        exclude_background: bool = True,
    ) -> "SamplerConfig":
        """Thresholds scaled so their tile-width ratio is size-independent."""
        return cls(
            d_near=NEAR_TILE_UNITS * tile_size,
            d_far=FAR_TILE_UNITS * tile_size,
            k_near=k_near,
            k_far=k_far,
            rng_seed=rng_seed,
            exclude_background=exclude_background,
        )


@dataclass(frozen=True)
class PairRecord:
    a: TileCoord
    b: TileCoord
    label: PairLabel

    def __post_init__(self):
        if self.a.slide_id != self.b.slide_id:
            raise ValueError("pairs must be intra-slide")
        if self.a == self.b:
            raise ValueError("a pair cannot join a tile with itself")


def center_distance(a: TileCoord, b: TileCoord, tile_size: int) -> float:
    """Euclidean distance between tile centers (x + s/2, y + s/2)."""
    if a.slide_id != b.slide_id:
        raise ValueError("center distance is defined for tiles on the same slide")
    dx = (a.x + tile_size / 2.0) - (b.x + tile_size / 2.0)
    dy = (a.y + tile_size / 2.0) - (b.y + tile_size / 2.0)
    return float(np.hypot(dx, dy))


def label_for_distance(d: float, cfg: SamplerConfig) -> PairLabel | None:
    """SIMILAR below d_near, DISSIMILAR at or beyond d_far, None in between."""
    if d < 0.0:
        raise ValueError("distance must be non-negative")
    if 0.0 < d <= cfg.d_near:
        return PairLabel.SIMILAR
    if d >= cfg.d_far:
        return PairLabel.DISSIMILAR
    return None


class PairManifest:
    """Column-array pair list; heavy consumers index the arrays directly."""

    def __init__(self, slide, ax, ay, bx, by, label):
        n = len(slide)
        for arr in (ax, ay, bx, by, label):
            if len(arr) != n:
                raise ValueError("manifest columns must have equal length")
        self.slide = np.asarray(slide, dtype=np.int64)
        self.ax = np.asarray(ax, dtype=np.int64)
        self.ay = np.asarray(ay, dtype=np.int64)
        self.bx = np.asarray(bx, dtype=np.int64)
        self.by = np.asarray(by, dtype=np.int64)
        self.label = np.asarray(label, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.slide)

    def record(self, i: int) -> PairRecord:
        sid = int(self.slide[i])
        return PairRecord(
            a=TileCoord(sid, int(self.ax[i]), int(self.ay[i])),
            b=TileCoord(sid, int(self.bx[i]), int(self.by[i])),
            label=PairLabel(int(self.label[i])),
        )

    def records(self):
        for i in range(len(self)):
            yield self.record(i)

    @staticmethod
    def empty() -> "PairManifest":
        z = np.zeros(0, dtype=np.int64)
        return PairManifest(z, z, z, z, z, np.zeros(0, dtype=np.uint8))


def _sample_anchor(cx, cy, i, dn2, df2, cfg, slide_id):
    """Partner indices and labels for one anchor tile."""
    near_idx, far_idx = kernels.band_candidates(cx, cy, i, dn2, df2)
    stream = Stream(cfg.rng_seed, STREAM_PAIR_SAMPLER, slide_id, i)
    near_pick = stream.sample_without_replacement(near_idx, cfg.k_near)
    far_pick = stream.sample_without_replacement(far_idx, cfg.k_far)
    partners = np.concatenate([near_pick, far_pick])
    labels = np.concatenate(
        [
            np.full(len(near_pick), PairLabel.SIMILAR, dtype=np.uint8),
            np.full(len(far_pick), PairLabel.DISSIMILAR, dtype=np.uint8),
        ]
    )
    return partners, labels


def sample_pairs(
    tiles_by_slide: dict[int, list[TileCoord]], cfg: SamplerConfig, workers: int = 1
) -> PairManifest:
    """Draw up to k_near similar and k_far dissimilar partners per anchor.

    Candidates are sampled uniformly without replacement within each band;
    anchors with smaller candidate sets contribute fewer pairs.  Each
    anchor's draw is seeded from (rng_seed, slide_id, anchor index), so the
    output is independent of worker scheduling and identical across reruns.
    """
    cols_slide, cols_ax, cols_ay, cols_bx, cols_by, cols_lab = [], [], [], [], [], []
    for slide_id in sorted(tiles_by_slide):
        tiles = tiles_by_slide[slide_id]
        n = len(tiles)
        if n < 2:
            continue
        xs = np.fromiter((t.x for t in tiles), dtype=np.float64, count=n)
        ys = np.fromiter((t.y for t in tiles), dtype=np.float64, count=n)
        dn2 = cfg.d_near * cfg.d_near
        df2 = cfg.d_far * cfg.d_far

        def run(i):
            return _sample_anchor(xs, ys, i, dn2, df2, cfg, slide_id)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                per_anchor = list(pool.map(run, range(n)))
        else:
            per_anchor = [run(i) for i in range(n)]

        for i, (partners, labels) in enumerate(per_anchor):
            if len(partners) == 0:
                continue
            cols_slide.append(np.full(len(partners), slide_id, dtype=np.int64))
            cols_ax.append(np.full(len(partners), int(xs[i]), dtype=np.int64))
            cols_ay.append(np.full(len(partners), int(ys[i]), dtype=np.int64))
            cols_bx.append(xs[partners].astype(np.int64))
            cols_by.append(ys[partners].astype(np.int64))
            cols_lab.append(labels)

    if not cols_slide:
        return PairManifest.empty()
    return PairManifest(
        np.concatenate(cols_slide),
        np.concatenate(cols_ax),
        np.concatenate(cols_ay),
        np.concatenate(cols_bx),
        np.concatenate(cols_by),
        np.concatenate(cols_lab),
    )


def write_pairs_csv(manifest: PairManifest, path: str):
    """UTF-8 CSV with LF endings; byte-identical for identical manifests."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(PAIRS_CSV_HEADER + "\n")
        cols = (manifest.slide, manifest.ax, manifest.ay, manifest.slide, manifest.bx, manifest.by, manifest.label)
        for row in zip(*cols):
            f.write(",".join(str(int(v)) for v in row) + "\n")


def read_pairs_csv(path: str) -> PairManifest:
    slide, ax, ay, bx, by, lab = [], [], [], [], [], []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != PAIRS_CSV_HEADER:
            raise DataFormatError(f"{path}:1: bad header {header!r}")
        for ln, raw in enumerate(f, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise DataFormatError(f"{path}:{ln}: expected 7 fields, got {len(parts)}")
            try:
                vals = [int(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{ln}: non-integer field") from exc
            if vals[0] != vals[3]:
                raise DataFormatError(f"{path}:{ln}: cross-slide pair")
            if vals[6] not in (0, 1):
                raise DataFormatError(f"{path}:{ln}: label must be 0 or 1")
            slide.append(vals[0])
            ax.append(vals[1])
            ay.append(vals[2])
            bx.append(vals[4])
            by.append(vals[5])
            lab.append(vals[6])
    if not slide:
        return PairManifest.empty()
    return PairManifest(
        np.array(slide, dtype=np.int64),
        np.array(ax, dtype=np.int64),
        np.array(ay, dtype=np.int64),
        np.array(bx, dtype=np.int64),
        np.array(by, dtype=np.int64),
        np.array(lab, dtype=np.uint8),
    )
