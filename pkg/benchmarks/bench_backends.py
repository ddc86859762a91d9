"""Time the numba kernels against the pure numpy fallbacks.

Run from the repository root:

    python3 benchmarks/bench_backends.py

Prints one row per kernel with both timings and the speedup.  Numba timings
exclude JIT compilation (one warmup call per kernel).
"""

import time

import numpy as np

from patho_ssl.kernels import numpy_impl

try:
    from patho_ssl.kernels import numba_impl
except ImportError:
    numba_impl = None


def bench(fn, args, repeat=5):
    fn(*args)  # warmup / JIT
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)

    lattice = rng.random((20, 20))
    img = rng.random((224, 224, 3)) * 255.0
    rgb = rng.random((224 * 224, 3))
    lab = numpy_impl.rgb01_to_lab(rgb)
    x32 = rng.random((64, 32, 32, 3)).astype(np.float32)
    w1 = (rng.standard_normal((3, 3, 3, 8)) * 0.2).astype(np.float32)
    b1 = np.zeros(8, dtype=np.float32)
    xp = np.zeros((64, 34, 34, 3))
    xp[:, 1:-1, 1:-1, :] = rng.random((64, 32, 32, 3))
    dy = rng.standard_normal((64, 32, 32, 8))
    emb = rng.standard_normal((4000, 128))
    sids = rng.integers(0, 8, 4000).astype(np.int32)
    queries = np.arange(256, dtype=np.int64)
    cx = rng.integers(0, 2048, 4096).astype(np.float64)
    cy = rng.integers(0, 2048, 4096).astype(np.float64)

    cases = [
        ("value_noise 2048x2048", "value_noise_bilerp", (lattice, 256.0, 2048, 2048)),
        ("rotate 224px tile", "rotate_bilinear_reflect", (img, np.cos(0.3), np.sin(0.3))),
        ("rgb->lab 50k px", "rgb01_to_lab", (rgb,)),
        ("lab->rgb 50k px", "lab_to_rgb01", (lab,)),
        ("conv3x3 fwd f32 (64,32,32,3)->8", "conv3x3_forward", (x32, w1, b1)),
        ("conv3x3 bwd f64", "conv3x3_backward", (xp, w1.astype(np.float64), dy)),
        ("maxpool fwd", "maxpool2_forward", (x32,)),
        ("nn search 256q over 4k x 128d", "nn_search_other_slide", (emb, sids, queries)),
        ("band scan 1 anchor over 4k tiles", "band_candidates", (cx, cy, 0, 256.0**2, 1344.0**2)),
    ]

    print(f"{'kernel':38s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for label, name, args in cases:
        t_np = bench(getattr(numpy_impl, name), args)
        if numba_impl is None:
            print(f"{label:38s} {t_np * 1e3:9.2f}ms {'n/a':>10s} {'n/a':>8s}")
            continue
        t_nb = bench(getattr(numba_impl, name), args)
        print(f"{label:38s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms {t_np / t_nb:7.1f}x")

    if numba_impl is None:
        print("\nnumba not importable; only the fallback path was timed")


if __name__ == "__main__":
    main()
