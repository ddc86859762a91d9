"""Pure numpy implementations of the hot kernels.

Fallback path for environments without numba (or with PATHO_SSL_BACKEND set
to "numpy").  Each function here has a loop-based twin in numba_impl with the
same name, signature and semantics.  Elementwise kernels (noise, rotation,
pooling, candidate scans) produce bit-identical results on both backends;
matmul-backed kernels (convolution, nearest neighbor) may differ in the last
ulps because summation order differs.
"""

from __future__ import annotations

import numpy as np

# sRGB <-> CIELAB constants: D65 white point and the IEC 61966-2-1 primaries.
_XN, _YN, _ZN = 0.95047, 1.0, 1.08883
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ2RGB = np.array(
    [
        [3.2404542, -1.5371385, -0.4985314],
        [-0.9692660, 1.8760108, 0.0415560],
        [0.0556434, -0.2040259, 1.0572252],
    ]
)
_EPS = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0


def value_noise_bilerp(lattice: np.ndarray, cell: float, height: int, width: int) -> np.ndarray:
    """Sample smooth value noise on a pixel grid.

    lattice holds uniform values at integer grid points; pixel (y, x) samples
    grid coordinate (y/cell, x/cell) with quintic-fade bilinear interpolation.
    """
    gx = np.arange(width, dtype=np.float64) / cell
    gy = np.arange(height, dtype=np.float64) / cell
    ix = np.floor(gx).astype(np.int64)
    iy = np.floor(gy).astype(np.int64)
    tx = gx - ix
    ty = gy - iy
    fx = tx * tx * tx * (tx * (tx * 6.0 - 15.0) + 10.0)
    fy = ty * ty * ty * (ty * (ty * 6.0 - 15.0) + 10.0)

    iy_m = iy[:, None]
    ix_m = ix[None, :]
    v00 = lattice[iy_m, ix_m]
    v01 = lattice[iy_m, ix_m + 1]
    v10 = lattice[iy_m + 1, ix_m]
    v11 = lattice[iy_m + 1, ix_m + 1]

    fx_m = fx[None, :]
    top = v00 + fx_m * (v01 - v00)
    bot = v10 + fx_m * (v11 - v10)
    return top + fy[:, None] * (bot - top)


def rgb01_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB in [0, 1] (shape (n, 3)) to CIELAB, D65 white point."""
    c = rgb
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T
    xr = xyz[:, 0] / _XN
    yr = xyz[:, 1] / _YN
    zr = xyz[:, 2] / _ZN
    fx = np.where(xr > _EPS, np.cbrt(xr), (_KAPPA * xr + 16.0) / 116.0)
    fy = np.where(yr > _EPS, np.cbrt(yr), (_KAPPA * yr + 16.0) / 116.0)
    fz = np.where(zr > _EPS, np.cbrt(zr), (_KAPPA * zr + 16.0) / 116.0)
    out = np.empty_like(rgb)
    out[:, 0] = 116.0 * fy - 16.0
    out[:, 1] = 500.0 * (fx - fy)
    out[:, 2] = 200.0 * (fy - fz)
    return out


def lab_to_rgb01(lab: np.ndarray) -> np.ndarray:
    """CIELAB (shape (n, 3)) back to sRGB, clamped to [0, 1]."""
    L = lab[:, 0]
    fy = (L + 16.0) / 116.0
    fx = fy + lab[:, 1] / 500.0
    fz = fy - lab[:, 2] / 200.0
    xr = np.where(fx**3 > _EPS, fx**3, (116.0 * fx - 16.0) / _KAPPA)
    yr = np.where(L > _KAPPA * _EPS, fy**3, L / _KAPPA)
    zr = np.where(fz**3 > _EPS, fz**3, (116.0 * fz - 16.0) / _KAPPA)
    xyz = np.stack([xr * _XN, yr * _YN, zr * _ZN], axis=1)
    lin = xyz @ _XYZ2RGB.T
    # Negative linear values take the linear branch, so no NaN from pow.
    enc = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * np.maximum(lin, 0.0) ** (1.0 / 2.4) - 0.055)
    return np.clip(enc, 0.0, 1.0)


def rotate_bilinear_reflect(img: np.ndarray, cos_t: float, sin_t: float) -> np.ndarray:
    """Rotate (H, W, C) float image about its center, symmetric reflect padding."""
    h, w = img.shape[0], img.shape[1]
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ux = jj - cx
    uy = ii - cy
    xs = cos_t * ux + sin_t * uy + cx
    ys = -sin_t * ux + cos_t * uy + cy
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    tx = xs - x0
    ty = ys - y0

    def _reflect(idx, n):
        q = np.remainder(idx, 2 * n)
        return np.where(q >= n, 2 * n - 1 - q, q)

    x0r = _reflect(x0, w)
    x1r = _reflect(x0 + 1, w)
    y0r = _reflect(y0, h)
    y1r = _reflect(y0 + 1, h)
    p00 = img[y0r, x0r]
    p01 = img[y0r, x1r]
    p10 = img[y1r, x0r]
    p11 = img[y1r, x1r]
    txe = tx[..., None]
    tye = ty[..., None]
    top = p00 + txe * (p01 - p00)
    bot = p10 + txe * (p11 - p10)
    return top + tye * (bot - top)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 convolution, stride 1, zero padding 1.

    x: (N, H, W, C), w: (3, 3, C, O), b: (O,).  Returns (N, H, W, O).
    """
    n, h, wd, _ = x.shape
    xp = np.zeros((n, h + 2, wd + 2, x.shape[3]), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    y = np.broadcast_to(b, (n, h, wd, b.shape[0])).astype(x.dtype).copy()
    for ky in range(3):
        for kx in range(3):
            y += xp[:, ky : ky + h, kx : kx + wd, :] @ w[ky, kx]
    return y


def conv3x3_backward(xp: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of conv3x3_forward.

    xp is the zero-padded input (N, H+2, W+2, C); dy is (N, H, W, O).
    Returns (dx, dw, db) with dx cropped back to (N, H, W, C).
    """
    n, h, wd, o = dy.shape
    c = xp.shape[3]
    dxp = np.zeros_like(xp)
    dw = np.empty((3, 3, c, o), dtype=dy.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky : ky + h, kx : kx + wd, :] += dy @ w[ky, kx].T
            dw[ky, kx] = np.tensordot(xp[:, ky : ky + h, kx : kx + wd, :], dy, axes=([0, 1, 2], [0, 1, 2]))
    db = dy.sum(axis=(0, 1, 2))
    return dxp[:, 1:-1, 1:-1, :], dw, db


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling, stride 2, trailing odd row/col dropped.

    Returns (pooled, idx) where idx in 0..3 encodes the winning position as
    ky*2+kx, first maximum in scan order.
    """
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, : 2 * h2, : 2 * w2, :]
    cand = v.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h2, w2, 4, c)
    idx = cand.argmax(axis=3).astype(np.uint8)
    y = np.take_along_axis(cand, idx[:, :, :, None, :].astype(np.int64), axis=3)[:, :, :, 0, :]
    return y, idx


def maxpool2_backward(dy: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    """Route pooled gradients back to the argmax positions."""
    n, h2, w2, c = dy.shape
    d4 = np.zeros((n, h2, w2, 4, c), dtype=dy.dtype)
    np.put_along_axis(d4, idx[:, :, :, None, :].astype(np.int64), dy[:, :, :, None, :], axis=3)
    dv = d4.reshape(n, h2, w2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * h2, 2 * w2, c)
    dx = np.zeros((n, h, w, c), dtype=dy.dtype)
    dx[:, : 2 * h2, : 2 * w2, :] = dv
    return dx


def nn_search_other_slide(emb: np.ndarray, slide_ids: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Exact nearest neighbor in L2, excluding the query's own slide.

    emb: (n, d) float64, slide_ids: (n,) int32, queries: (q,) int64 indices.
    Returns the argmin index per query (ties to the lowest index), or -1
    when no other-slide candidate exists.
    """
    sq = np.einsum("ij,ij->i", emb, emb)
    out = np.empty(len(queries), dtype=np.int64)
    for qi, q in enumerate(queries):
        d2 = sq - 2.0 * (emb @ emb[q]) + sq[q]
        d2[slide_ids == slide_ids[q]] = np.inf
        j = int(np.argmin(d2))
        out[qi] = j if np.isfinite(d2[j]) else -1
    return out


def band_candidates(cx: np.ndarray, cy: np.ndarray, i: int, d_near2: float, d_far2: float):
    """Indices of tiles within the near band / beyond the far bound of tile i.

    Distances are compared squared; near excludes the anchor itself.
    Returns (near_idx, far_idx) as ascending int64 arrays.
    """
    dx = cx - cx[i]
    dyv = cy - cy[i]
    d2 = dx * dx + dyv * dyv
    near = np.nonzero((d2 > 0.0) & (d2 <= d_near2))[0]
    far = np.nonzero(d2 >= d_far2)[0]
    return near.astype(np.int64), far.astype(np.int64)
