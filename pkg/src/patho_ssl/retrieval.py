"""Descriptor sets, distance-ratio and retrieval metrics, PCA export.

Descriptors are built by stain-normalizing every kept grid tile to a target
tile's LAB statistics and embedding it with the trained network.  The two
headline metrics: the average descriptor distance ratio (mean dissimilar
pair distance over mean similar pair distance) and the fraction of tumor
tiles whose nearest cross-slide neighbor is also tumor.  Nearest neighbor
search is exact brute force; distances accumulate in float64.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .color import LabStats, stain_normalize
from .errors import DataFormatError
from .net import NetParams, forward
from .pairs import PairLabel
from .rng import STREAM_EVAL_PAIRS, Stream
from .slides import RegionLabel, Slide, TileCoord, extract_tile, tile_grid, tile_label

DESCRIPTOR_MAGIC = b"SSDF"
DESCRIPTOR_VERSION = 1


@dataclass
class DescriptorSet:
    """Parallel arrays: tile identity, ground-truth class, embedding."""

    slide_ids: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    labels: np.ndarray
    emb: np.ndarray

    def __post_init__(self):
        n = len(self.slide_ids)
        if not (len(self.xs) == len(self.ys) == len(self.labels) == self.emb.shape[0] == n):
            raise ValueError("descriptor columns must have equal length")
        ids = np.stack([self.slide_ids, self.xs, self.ys], axis=1)
        if len(np.unique(ids, axis=0)) != n:
            raise ValueError("descriptor tile ids must be unique")

    def __len__(self) -> int:
        return len(self.slide_ids)


@dataclass
class EvalPairSet:
    """Index pairs into a DescriptorSet with similar/dissimilar labels."""

    ia: np.ndarray
    ib: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.ia)


def embed_all(
    params: NetParams,
    slides,
    tile_size: int,
    target_stats: LabStats,
    background_threshold: float = 0.8,
    include_background: bool = False,
    batch_size: int = 256,
    workers: int = 1,
) -> DescriptorSet:
    """Embed every grid tile that survives background exclusion.

    Tiles are stain-normalized to target_stats, scaled to [0, 1] and run
    through the network in batches.  Class labels come from the slide label
    masks; worker count affects throughput only, never output.
    """
    slide_list = sorted(slides.values() if isinstance(slides, dict) else slides, key=lambda s: s.slide_id)
    kept: list[tuple[Slide, int, int, int]] = []
    for sl in slide_list:
        for coord in tile_grid(sl, tile_size):
            lab = tile_label(sl, coord, tile_size, background_threshold)
            if lab == RegionLabel.BACKGROUND and not include_background:
                continue
            kept.append((sl, coord.x, coord.y, int(lab)))
    n = len(kept)
    if n == 0:
        raise ValueError("no tiles survive background exclusion")

    x = np.empty((n, tile_size, tile_size, 3), dtype=np.float32)

    def prep(i):
        sl, cx, cy, _ = kept[i]
        tile = extract_tile(sl, TileCoord(sl.slide_id, cx, cy), tile_size)
        tile = stain_normalize(tile, target_stats)
        x[i] = tile.rgb.astype(np.float32) / np.float32(255.0)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(prep, range(n)))
    else:
        for i in range(n):
            prep(i)

    dim = params.embed_dim
    emb = np.empty((n, dim), dtype=np.float32)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        emb[lo:hi] = forward(params, x[lo:hi])

    return DescriptorSet(
        slide_ids=np.array([k[0].slide_id for k in kept], dtype=np.int32),
        xs=np.array([k[1] for k in kept], dtype=np.int32),
        ys=np.array([k[2] for k in kept], dtype=np.int32),
        labels=np.array([k[3] for k in kept], dtype=np.uint8),
        emb=emb,
    )


def build_eval_pairs(
    ds: DescriptorSet,
    d_near: float,
    d_far: float,
    k_near: int = 8,
    k_far: int = 8,
    seed: int = 0,
    mode: str = "label",
) -> EvalPairSet:
    """Sample near/far partners per anchor and label the pairs.

    mode "label" (the evaluation protocol): anchors are tumor tiles and a
    pair is similar exactly when the partner is also tumor.  mode "spatial"
    uses every tile as an anchor and labels by distance band, matching the
    training-time sampler.
    """
    if mode not in ("label", "spatial"):
        raise ValueError(f"unknown eval pair mode {mode!r}")
    dn2 = d_near * d_near
    df2 = d_far * d_far
    ia, ib, labels = [], [], []
    for sid in np.unique(ds.slide_ids):
        sel = np.nonzero(ds.slide_ids == sid)[0]
        cx = ds.xs[sel].astype(np.float64)
        cy = ds.ys[sel].astype(np.float64)
        for local, gidx in enumerate(sel):
            if mode == "label" and ds.labels[gidx] != RegionLabel.TUMOR:
                continue
            near_loc, far_loc = kernels.band_candidates(cx, cy, local, dn2, df2)
            stream = Stream(seed, STREAM_EVAL_PAIRS, int(sid), int(gidx))
            near_pick = stream.sample_without_replacement(near_loc, k_near)
            far_pick = stream.sample_without_replacement(far_loc, k_far)
            for pick, is_near in ((near_pick, True), (far_pick, False)):
                for lp in pick:
                    g = int(sel[lp])
                    ia.append(int(gidx))
                    ib.append(g)
                    sim = (ds.labels[g] == RegionLabel.TUMOR) if mode == "label" else is_near
                    labels.append(PairLabel.SIMILAR if sim else PairLabel.DISSIMILAR)
    return EvalPairSet(
        ia=np.array(ia, dtype=np.int64),
        ib=np.array(ib, dtype=np.int64),
        labels=np.array(labels, dtype=np.uint8),
    )


def addr(ds: DescriptorSet, pairs: EvalPairSet) -> float:
    """Mean dissimilar-pair distance divided by mean similar-pair distance."""
    sim = pairs.labels == PairLabel.SIMILAR
    dis = pairs.labels == PairLabel.DISSIMILAR
    if not sim.any() or not dis.any():
        raise ValueError("pair set must contain both similar and dissimilar pairs")
    e = ds.emb.astype(np.float64)
    diff = e[pairs.ia] - e[pairs.ib]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    mean_sim = float(d[sim].mean())
    if mean_sim == 0.0:
        raise ValueError("mean similar distance is zero; distance ratio undefined")
    return float(d[dis].mean()) / mean_sim


def nearest_neighbor(query_index: int, ds: DescriptorSet) -> int:
    """Closest descriptor on a different slide; ties go to the lowest index."""
    out = kernels.nn_search_other_slide(
        ds.emb.astype(np.float64),
        ds.slide_ids.astype(np.int32),
        np.array([query_index], dtype=np.int64),
    )
    if out[0] < 0:
        raise ValueError(f"no cross-slide candidates for query {query_index}")
    return int(out[0])


def retrieval_ratio(ds: DescriptorSet, workers: int = 1) -> float:
    """Fraction of tumor tiles whose nearest cross-slide neighbor is tumor."""
    queries = np.nonzero(ds.labels == RegionLabel.TUMOR)[0].astype(np.int64)
    if len(queries) == 0:
        raise ValueError("descriptor set contains no tumor tiles")
    emb = ds.emb.astype(np.float64)
    sids = ds.slide_ids.astype(np.int32)
    if workers > 1:
        chunks = np.array_split(queries, workers)
        nn = np.empty(len(queries), dtype=np.int64)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ch: kernels.nn_search_other_slide(emb, sids, ch), chunks))
        nn = np.concatenate(parts)
    else:
        nn = kernels.nn_search_other_slide(emb, sids, queries)
    if (nn < 0).any():
        raise ValueError("some tumor queries have no cross-slide candidates")
    return float((ds.labels[nn] == RegionLabel.TUMOR).mean())


def pca_project(ds: DescriptorSet, dims: int = 2) -> np.ndarray:
    """Project embeddings onto the top principal components.

    Components are ordered by descending variance with each component's
    largest-magnitude loading made positive, so the projection is unique.
    """
    n = len(ds)
    if n <= dims:
        raise ValueError(f"need more than {dims} descriptors, have {n}")
    e = ds.emb.astype(np.float64)
    centered = e - e.mean(axis=0)
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:dims]
    comps = evecs[:, order].T
    for k in range(dims):
        j = int(np.argmax(np.abs(comps[k])))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    return centered @ comps.T


def save_descriptors(ds: DescriptorSet, path: str):
    """Binary descriptor file, little-endian, layout documented in README."""
    import struct

    with open(path, "wb") as f:
        f.write(DESCRIPTOR_MAGIC)
        f.write(struct.pack("<IIQ", DESCRIPTOR_VERSION, ds.emb.shape[1], len(ds)))
        for i in range(len(ds)):
            f.write(
                struct.pack(
                    "<IIIB", int(ds.slide_ids[i]), int(ds.xs[i]), int(ds.ys[i]), int(ds.labels[i])
                )
            )
            f.write(np.ascontiguousarray(ds.emb[i], dtype="<f4").tobytes())


def load_descriptors(path: str) -> DescriptorSet:
    import struct

    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != DESCRIPTOR_MAGIC:
        raise DataFormatError(f"{path}: not a descriptor file (bad magic)")
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != DESCRIPTOR_VERSION:
        raise DataFormatError(f"{path}: unsupported descriptor version {version}")
    rec = 13 + 4 * dim
    expect = 20 + rec * count
    if len(data) != expect:
        raise DataFormatError(f"{path}: expected {expect} bytes, got {len(data)}")
    sids = np.empty(count, dtype=np.int32)
    xs = np.empty(count, dtype=np.int32)
    ys = np.empty(count, dtype=np.int32)
    labels = np.empty(count, dtype=np.uint8)
    emb = np.empty((count, dim), dtype=np.float32)
    pos = 20
    for i in range(count):
        s, x, y, lab = struct.unpack_from("<IIIB", data, pos)
        sids[i], xs[i], ys[i], labels[i] = s, x, y, lab
        emb[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos + 13)
        pos += rec
    return DescriptorSet(slide_ids=sids, xs=xs, ys=ys, labels=labels, emb=emb)


def write_metrics_csv(path: str, metrics: dict[str, float]):
    with open(path, "w", newline="\n") as f:
        f.write("metric,value\n")
        for k, v in metrics.items():
            f.write(f"{k},{v:.12g}\n")


def write_projection_csv(path: str, ds: DescriptorSet, coords: np.ndarray):
    with open(path, "w", newline="\n") as f:
        f.write("slide_id,x,y,label,c1,c2\n")
        for i in range(len(ds)):
            f.write(
                f"{int(ds.slide_ids[i])},{int(ds.xs[i])},{int(ds.ys[i])},"
                f"{int(ds.labels[i])},{coords[i, 0]:.9g},{coords[i, 1]:.9g}\n"
            )
