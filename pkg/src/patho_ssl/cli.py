"""Command line pipeline: gen-slides, make-pairs, train, embed, eval.

One executable with one subcommand per stage.  Flags can come from a
key=value config file via --config, with explicit flags taking precedence.
Seeds default to the PATHO_SSL_SEED environment variable when set.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
divergence during training.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .augment import AugmentConfig
from .checkpoint import load_checkpoint
from .color import LabStats, channel_stats, stats_of_raster
from .errors import DataFormatError, DivergenceError
from .net import LossHyper, init_params
from .pairs import (
    FAR_TILE_UNITS,
    NEAR_TILE_UNITS,
    PairLabel,
    SamplerConfig,
    read_pairs_csv,
    sample_pairs,
    write_pairs_csv,
)
from .retrieval import (
    addr,
    build_eval_pairs,
    embed_all,
    load_descriptors,
    pca_project,
    retrieval_ratio,
    save_descriptors,
    write_metrics_csv,
    write_projection_csv,
)
from .rng import derive_key
from .slide_io import load_slides, read_manifest, read_ppm, save_slide, write_manifest
from .slides import (
    RegionLabel,
    Slide,
    SyntheticSlideSpec,
    TileCoord,
    extract_tile,
    generate_synthetic_slide,
    tile_grid,
    tile_label,
)
from .train import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this pipeline reserves 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_seed() -> int:
    env = os.environ.get("PATHO_SSL_SEED")
    return int(env) if env else 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="FILE", help="key=value file supplying flag defaults")
    p.add_argument("--seed", type=int, default=_default_seed(),
                   help="RNG seed (default: $PATHO_SSL_SEED or 0)")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads; results are identical for any value (default 1)")


def build_parser() -> _Parser:
    parser = _Parser(prog="patho-ssl", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-slides", help="write synthetic labeled slides and a manifest")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n-slides", type=int, default=8)
    g.add_argument("--width", type=int, default=1024)
    g.add_argument("--height", type=int, default=1024)
    g.add_argument("--tumor-fraction", type=float, default=0.1)
    g.add_argument("--background-fraction", type=float, default=0.15)
    g.add_argument("--min-region-diameter", type=int, default=256)
    g.add_argument("--tile-size", type=int, default=32,
                   help="downstream tile size; regions must span at least two tiles")
    _add_common(g)
    g.set_defaults(func=cmd_gen_slides)

    m = sub.add_parser("make-pairs", help="sample similar/dissimilar tile pairs into a CSV")
    m.add_argument("--slides", required=True, metavar="MANIFEST")
    m.add_argument("--out", required=True, metavar="CSV")
    m.add_argument("--tile-size", type=int, default=32)
    m.add_argument("--k-near", type=int, default=8)
    m.add_argument("--k-far", type=int, default=8)
    m.add_argument("--d-near", type=float, default=None,
                   help=f"similar threshold in px (default {NEAR_TILE_UNITS:g} * tile size)")
    m.add_argument("--d-far", type=float, default=None,
                   help=f"dissimilar threshold in px (default {FAR_TILE_UNITS:g} * tile size)")
    m.add_argument("--include-background", action="store_true",
                   help="keep mostly-glass tiles as anchors and partners")
    m.add_argument("--background-threshold", type=float, default=0.8)
    _add_common(m)
    m.set_defaults(func=cmd_make_pairs)

    t = sub.add_parser("train", help="train the siamese embedding net on a pair manifest")
    t.add_argument("--slides", required=True, metavar="MANIFEST")
    t.add_argument("--pairs", required=True, metavar="CSV")
    t.add_argument("--out", required=True, metavar="CHECKPOINT")
    t.add_argument("--tile-size", type=int, default=32)
    t.add_argument("--batch-size", type=int, default=64, help="pairs per batch")
    t.add_argument("--max-steps", type=int, default=300)
    t.add_argument("--margin", type=float, default=1.0)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--log-out", metavar="CSV", help="write per-step loss log")
    t.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint")
    t.add_argument("--no-h-flip", action="store_true")
    t.add_argument("--no-v-flip", action="store_true")
    t.add_argument("--max-rotation", type=float, default=20.0)
    t.add_argument("--jitter", type=float, default=0.075)
    t.add_argument("--no-augment", action="store_true", help="disable all augmentation")
    t.add_argument("--normalize-in-training", action="store_true")
    t.add_argument("--target-tile", metavar="PPM",
                   help="stain target (default: first tile of first slide)")
    _add_common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="embed all grid tiles into a descriptor file")
    e.add_argument("--slides", required=True, metavar="MANIFEST")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True, metavar="SSDF")
    e.add_argument("--target-tile", metavar="PPM",
                   help="stain target (default: first tile of first slide)")
    e.add_argument("--background-threshold", type=float, default=0.8)
    e.add_argument("--include-background", action="store_true")
    e.add_argument("--batch-size", type=int, default=256)
    _add_common(e)
    e.set_defaults(func=cmd_embed)

    v = sub.add_parser("eval", help="distance-ratio and retrieval metrics from descriptors")
    v.add_argument("--descriptors", required=True, metavar="SSDF")
    v.add_argument("--metrics-out", required=True, metavar="CSV")
    v.add_argument("--projection-out", metavar="CSV", help="2-D PCA coordinates per tile")
    v.add_argument("--mode", choices=("label", "spatial"), default="label",
                   help="pair labeling for the distance ratio (default label)")
    v.add_argument("--tile-size", type=int, default=32)
    v.add_argument("--k-near", type=int, default=8)
    v.add_argument("--k-far", type=int, default=8)
    v.add_argument("--d-near", type=float, default=None)
    v.add_argument("--d-far", type=float, default=None)
    _add_common(v)
    v.set_defaults(func=cmd_eval)

    return parser


def _load_config_flags(path: str) -> list[str]:
    flags = []
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{ln}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip().replace("_", "-")
            value = value.strip()
            if value.lower() == "true":
                flags.append(f"--{key}")
            elif value.lower() == "false":
                continue
            else:
                flags.extend([f"--{key}", value])
    return flags


def _inject_config(argv: list[str]) -> list[str]:
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2 :]
    if not rest:
        return argv
    return [rest[0]] + _load_config_flags(path) + rest[1:]


def _target_stats(path: str | None, slides: list[Slide], tile_size: int) -> LabStats:
    if path:
        return stats_of_raster(read_ppm(path))
    if not slides:
        raise ValueError("no slides available to pick a stain target from")
    first = slides[0]
    return channel_stats(extract_tile(first, TileCoord(first.slide_id, 0, 0), tile_size))


def cmd_gen_slides(args) -> int:
    if args.min_region_diameter < 2 * args.tile_size:
        raise ValueError(
            f"min-region-diameter {args.min_region_diameter} must be at least "
            f"twice the tile size ({2 * args.tile_size})"
        )
    os.makedirs(args.out_dir, exist_ok=True)
    names = []
    for i in range(args.n_slides):
        spec = SyntheticSlideSpec(
            width=args.width,
            height=args.height,
            tumor_fraction=args.tumor_fraction,
            background_fraction=args.background_fraction,
            min_region_diameter=args.min_region_diameter,
            rng_seed=derive_key(args.seed, i),
        )
        slide = generate_synthetic_slide(spec, slide_id=i)
        name = f"slide_{i:03d}.ppm"
        save_slide(slide, os.path.join(args.out_dir, name))
        names.append(name)
        counts = np.bincount(slide.labels.ravel(), minlength=3) / slide.labels.size
        print(f"{name}: background {counts[0]:.4f} normal {counts[1]:.4f} tumor {counts[2]:.4f}")
    manifest = os.path.join(args.out_dir, "slides.txt")
    write_manifest(manifest, names)
    print(f"wrote {len(names)} slides to {manifest}")
    return 0


def _grid_tiles(slides, tile_size, exclude_background, background_threshold):
    tiles_by_slide = {}
    for sl in slides:
        coords = tile_grid(sl, tile_size)
        if exclude_background:
            coords = [
                c
                for c in coords
                if tile_label(sl, c, tile_size, background_threshold) != RegionLabel.BACKGROUND
            ]
        tiles_by_slide[sl.slide_id] = coords
    return tiles_by_slide


def cmd_make_pairs(args) -> int:
    exclude = not args.include_background
    slides = load_slides(args.slides, with_labels=exclude)
    cfg = SamplerConfig(
        d_near=args.d_near if args.d_near is not None else NEAR_TILE_UNITS * args.tile_size,
        d_far=args.d_far if args.d_far is not None else FAR_TILE_UNITS * args.tile_size,
        k_near=args.k_near,
        k_far=args.k_far,
        rng_seed=args.seed,
        exclude_background=exclude,
    )
    tiles = _grid_tiles(slides, args.tile_size, exclude, args.background_threshold)
    manifest = sample_pairs(tiles, cfg, workers=args.workers)
    write_pairs_csv(manifest, args.out)
    n_sim = int((manifest.label == PairLabel.SIMILAR).sum())
    n_dis = int((manifest.label == PairLabel.DISSIMILAR).sum())
    print(f"wrote {len(manifest)} pairs ({n_sim} similar, {n_dis} dissimilar) to {args.out}")
    return 0


def cmd_train(args) -> int:
    slides = load_slides(args.slides, with_labels=False)
    manifest = read_pairs_csv(args.pairs)
    if args.no_augment:
        aug = AugmentConfig(h_flip=False, v_flip=False, max_rotation_deg=0.0, jitter=0.0,
                            rng_seed=args.seed)
    else:
        aug = AugmentConfig(
            h_flip=not args.no_h_flip,
            v_flip=not args.no_v_flip,
            max_rotation_deg=args.max_rotation,
            jitter=args.jitter,
            rng_seed=args.seed,
        )
    cfg = TrainConfig(
        batch_size=args.batch_size,
        max_steps=args.max_steps,
        augment=aug,
        loss=LossHyper(margin=args.margin),
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        normalize_in_training=args.normalize_in_training,
    )
    target = None
    if args.normalize_in_training:
        target = _target_stats(args.target_tile, slides, args.tile_size)
    init = load_checkpoint(args.resume) if args.resume else init_params(args.seed)
    cp, log = train(
        manifest, slides, cfg, init, args.tile_size,
        target_stats=target, checkpoint_path=args.out, workers=args.workers,
    )
    if args.log_out:
        log.write_csv(args.log_out)
    final_loss = log.rows[-1][1] if log.rows else float("nan")
    print(f"trained to step {cp.step}, final batch loss {final_loss:.6f}, checkpoint {args.out}")
    return 0


def cmd_embed(args) -> int:
    slides = load_slides(args.slides, with_labels=True)
    for sl in slides:
        if sl.labels is None:
            raise DataFormatError(f"slide {sl.slide_id} has no label mask; embed requires masks")
    cp = load_checkpoint(args.checkpoint)
    target = _target_stats(args.target_tile, slides, cp.tile_size)
    ds = embed_all(
        cp.params,
        slides,
        cp.tile_size,
        target,
        background_threshold=args.background_threshold,
        include_background=args.include_background,
        batch_size=args.batch_size,
        workers=args.workers,
    )
    save_descriptors(ds, args.out)
    print(f"embedded {len(ds)} tiles at dim {ds.emb.shape[1]} into {args.out}")
    return 0


def cmd_eval(args) -> int:
    ds = load_descriptors(args.descriptors)
    d_near = args.d_near if args.d_near is not None else NEAR_TILE_UNITS * args.tile_size
    d_far = args.d_far if args.d_far is not None else FAR_TILE_UNITS * args.tile_size
    pairs = build_eval_pairs(
        ds, d_near, d_far, k_near=args.k_near, k_far=args.k_far, seed=args.seed, mode=args.mode
    )
    metrics = {
        "addr": addr(ds, pairs),
        "retrieval_ratio": retrieval_ratio(ds, workers=args.workers),
    }
    write_metrics_csv(args.metrics_out, metrics)
    for k, v in metrics.items():
        print(f"{k} = {v:.6f}")
    if args.projection_out:
        coords = pca_project(ds, dims=2)
        write_projection_csv(args.projection_out, ds, coords)
        print(f"wrote projection to {args.projection_out}")
    return 0


def main(argv=None) -> int:
    raw = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv_full = _inject_config(raw)
        args = parser.parse_args(argv_full)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DataFormatError as exc:
        print(f"patho-ssl: error: {exc}", file=sys.stderr)
        return 2
    if not getattr(args, "command", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"patho-ssl: divergence: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, OSError, ValueError, KeyError) as exc:
        print(f"patho-ssl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
