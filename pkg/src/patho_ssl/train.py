"""End-to-end training loop over a pair manifest.

Each step draws the next batch from a seeded per-epoch shuffle, augments
both tiles of every pair independently, and applies one Adam update.
Every source of randomness is a pure function of (seed, step, pair slot,
branch), so a run is fully determined by its config and inputs, resuming
from a checkpoint is bit-identical to training straight through, and
worker count never changes results.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adam import AdamState, adam_step, init_adam_state
from .augment import AugmentConfig, augment
from .checkpoint import Checkpoint, save_checkpoint
from .color import LabStats, stain_normalize
from .net import LossHyper, NetParams, backward
from .pairs import PairManifest
from .rng import STREAM_SHUFFLE, Stream, derive_key
from .slides import Slide, Tile, TileCoord, extract_tile


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run; batch_size counts pairs per batch."""

    batch_size: int = 64
    max_steps: int = 100
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossHyper = field(default_factory=LossHyper)
    seed: int = 0
    checkpoint_every: int = 0
    normalize_in_training: bool = False

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ValueError("batch_size must be an even integer of at least 2")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")


class TrainLog:
    """Per-step (step, mean loss, elapsed seconds) records."""

    def __init__(self):
        self.rows: list[tuple[int, float, float]] = []

    def append(self, step: int, loss: float, seconds: float):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError("steps must be strictly increasing")
        self.rows.append((step, loss, seconds))

    def write_csv(self, path: str):
        with open(path, "w", newline="\n") as f:
            f.write("step,loss,seconds\n")
            for step, loss, sec in self.rows:
                f.write(f"{step},{loss:.9g},{sec:.6f}\n")


def _slide_map(slides) -> dict[int, Slide]:
    if isinstance(slides, dict):
        return slides
    return {s.slide_id: s for s in slides}


def _check_manifest_bounds(manifest: PairManifest, slides: dict[int, Slide], tile_size: int):
    for sid in np.unique(manifest.slide):
        if int(sid) not in slides:
            raise ValueError(f"manifest references missing slide {int(sid)}")
    for xcol, ycol in ((manifest.ax, manifest.ay), (manifest.bx, manifest.by)):
        for sid in np.unique(manifest.slide):
            sl = slides[int(sid)]
            sel = manifest.slide == sid
            if (xcol[sel] < 0).any() or (ycol[sel] < 0).any():
                raise ValueError("manifest contains negative tile coordinates")
            if (xcol[sel] + tile_size > sl.width).any() or (ycol[sel] + tile_size > sl.height).any():
                raise ValueError(f"manifest tile exceeds bounds of slide {int(sid)}")


def _prep_tile(
    slide: Slide,
    x: int,
    y: int,
    tile_size: int,
    cfg: TrainConfig,
    target_stats: LabStats | None,
    draw_seed: int,
) -> np.ndarray:
    tile = extract_tile(slide, TileCoord(slide.slide_id, x, y), tile_size)
    if cfg.normalize_in_training:
        tile = stain_normalize(tile, target_stats)
    tile = augment(tile, cfg.augment, draw_seed)
    return tile.rgb.astype(np.float32) / np.float32(255.0)


def train(
    manifest: PairManifest,
    slides,
    cfg: TrainConfig,
    init: NetParams | Checkpoint,
    tile_size: int,
    target_stats: LabStats | None = None,
    checkpoint_path: str | None = None,
    workers: int = 1,
):
    """Run Adam steps start..max_steps; returns (Checkpoint, TrainLog).

    init may be fresh NetParams or a Checkpoint to continue from.  When a
    checkpoint path is given, the file is refreshed every checkpoint_every
    steps and at termination; on divergence the last written checkpoint is
    left in place and DivergenceError propagates.
    """
    if len(manifest) == 0:
        raise ValueError("pair manifest is empty")
    if cfg.normalize_in_training and target_stats is None:
        raise ValueError("normalize_in_training requires target_stats")
    slides = _slide_map(slides)
    _check_manifest_bounds(manifest, slides, tile_size)

    if isinstance(init, Checkpoint):
        if init.tile_size != tile_size:
            raise ValueError(
                f"checkpoint tile size {init.tile_size} does not match configured {tile_size}"
            )
        if init.batch_size is not None and init.batch_size != cfg.batch_size:
            raise ValueError(
                f"checkpoint batch size {init.batch_size} does not match configured {cfg.batch_size}"
            )
        if init.train_seed is not None and init.train_seed != cfg.seed:
            raise ValueError("checkpoint training seed does not match configured seed")
        params = init.params.copy()
        state = init.adam if init.adam is not None else init_adam_state(init.params)
    else:
        params = init.copy()
        state = init_adam_state(init)
    start_step = state.t
    if start_step > cfg.max_steps:
        raise ValueError(f"checkpoint is already at step {start_step} > max_steps {cfg.max_steps}")

    n = len(manifest)
    b_eff = min(cfg.batch_size, n)
    batches_per_epoch = n // b_eff
    s = tile_size

    log = TrainLog()
    t0 = time.perf_counter()
    perm = None
    perm_epoch = -1
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for step in range(start_step + 1, cfg.max_steps + 1):
            epoch = (step - 1) // batches_per_epoch
            slot = (step - 1) % batches_per_epoch
            if epoch != perm_epoch:
                perm = Stream(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
                perm_epoch = epoch
            idxs = perm[slot * b_eff : slot * b_eff + b_eff]

            xa = np.empty((b_eff, s, s, 3), dtype=np.float32)
            xb = np.empty((b_eff, s, s, 3), dtype=np.float32)
            y = manifest.label[idxs]

            def fill(j, pair_idx=None):
                pi = idxs[j] if pair_idx is None else pair_idx
                sid = int(manifest.slide[pi])
                sl = slides[sid]
                xa[j] = _prep_tile(
                    sl, int(manifest.ax[pi]), int(manifest.ay[pi]), s, cfg, target_stats,
                    derive_key(cfg.seed, step, j, 0),
                )
                xb[j] = _prep_tile(
                    sl, int(manifest.bx[pi]), int(manifest.by[pi]), s, cfg, target_stats,
                    derive_key(cfg.seed, step, j, 1),
                )

            if pool is not None:
                list(pool.map(fill, range(b_eff)))
            else:
                for j in range(b_eff):
                    fill(j)

            grads, loss = backward(params, xa, xb, y, cfg.loss)
            params, state = adam_step(params, grads, state)
            log.append(step, loss, time.perf_counter() - t0)

            if (
                checkpoint_path
                and cfg.checkpoint_every
                and step % cfg.checkpoint_every == 0
                and step < cfg.max_steps
            ):
                save_checkpoint(_to_checkpoint(params, state, tile_size, cfg), checkpoint_path)
    finally:
        if pool is not None:
            pool.shutdown()

    final = _to_checkpoint(params, state, tile_size, cfg)
    if checkpoint_path:
        save_checkpoint(final, checkpoint_path)
    return final, log


def resume(
    cp: Checkpoint,
    manifest: PairManifest,
    slides,
    cfg: TrainConfig,
    tile_size: int,
    **kwargs,
):
    """Continue training from a checkpoint's stored step counter."""
    return train(manifest, slides, cfg, cp, tile_size, **kwargs)


def _to_checkpoint(params: NetParams, state: AdamState, tile_size: int, cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(
        params=params,
        tile_size=tile_size,
        adam=state,
        batch_size=cfg.batch_size,
        train_seed=cfg.seed,
    )
