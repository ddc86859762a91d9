"""Numba-compiled twins of the kernels in numpy_impl.

Loop formulations of the same math, compiled with @njit.  Elementwise
kernels keep the exact operation order of the numpy path so both backends
produce bit-identical output; convolution and nearest neighbor accumulate
in loop order and may differ from BLAS in the last ulps.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_XN, _YN, _ZN = 0.95047, 1.0, 1.08883
_EPS = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0


@njit(cache=True, nogil=True)
def value_noise_bilerp(lattice, cell, height, width):
    out = np.empty((height, width), dtype=np.float64)
    for y in range(height):
        gy = y / cell
        iy = int(np.floor(gy))
        ty = gy - iy
        fy = ty * ty * ty * (ty * (ty * 6.0 - 15.0) + 10.0)
        for x in range(width):
            gx = x / cell
            ix = int(np.floor(gx))
            tx = gx - ix
            fx = tx * tx * tx * (tx * (tx * 6.0 - 15.0) + 10.0)
            v00 = lattice[iy, ix]
            v01 = lattice[iy, ix + 1]
            v10 = lattice[iy + 1, ix]
            v11 = lattice[iy + 1, ix + 1]
            top = v00 + fx * (v01 - v00)
            bot = v10 + fx * (v11 - v10)
            out[y, x] = top + fy * (bot - top)
    return out


@njit(cache=True, nogil=True)
def rgb01_to_lab(rgb):
    n = rgb.shape[0]
    out = np.empty_like(rgb)
    for i in range(n):
        lin = np.empty(3, dtype=np.float64)
        for k in range(3):
            c = rgb[i, k]
            if c <= 0.04045:
                lin[k] = c / 12.92
            else:
                lin[k] = ((c + 0.055) / 1.055) ** 2.4
        x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2]
        y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2]
        z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2]
        xr = x / _XN
        yr = y / _YN
        zr = z / _ZN
        fx = np.cbrt(xr) if xr > _EPS else (_KAPPA * xr + 16.0) / 116.0
        fy = np.cbrt(yr) if yr > _EPS else (_KAPPA * yr + 16.0) / 116.0
        fz = np.cbrt(zr) if zr > _EPS else (_KAPPA * zr + 16.0) / 116.0
        out[i, 0] = 116.0 * fy - 16.0
        out[i, 1] = 500.0 * (fx - fy)
        out[i, 2] = 200.0 * (fy - fz)
    return out


@njit(cache=True, nogil=True)
def lab_to_rgb01(lab):
    n = lab.shape[0]
    out = np.empty_like(lab)
    for i in range(n):
        L = lab[i, 0]
        fy = (L + 16.0) / 116.0
        fx = fy + lab[i, 1] / 500.0
        fz = fy - lab[i, 2] / 200.0
        xr = fx**3 if fx**3 > _EPS else (116.0 * fx - 16.0) / _KAPPA
        yr = fy**3 if L > _KAPPA * _EPS else L / _KAPPA
        zr = fz**3 if fz**3 > _EPS else (116.0 * fz - 16.0) / _KAPPA
        xyz0 = xr * _XN
        xyz1 = yr * _YN
        xyz2 = zr * _ZN
        r = 3.2404542 * xyz0 + -1.5371385 * xyz1 + -0.4985314 * xyz2
        g = -0.9692660 * xyz0 + 1.8760108 * xyz1 + 0.0415560 * xyz2
        b = 0.0556434 * xyz0 + -0.2040259 * xyz1 + 1.0572252 * xyz2
        for k in range(3):
            lin = r if k == 0 else (g if k == 1 else b)
            if lin <= 0.0031308:
                enc = 12.92 * lin
            else:
                enc = 1.055 * max(lin, 0.0) ** (1.0 / 2.4) - 0.055
            out[i, k] = min(max(enc, 0.0), 1.0)
    return out


@njit(cache=True, nogil=True, inline="always")
def _reflect(idx, n):
    q = idx % (2 * n)
    if q < 0:
        q += 2 * n
    if q >= n:
        q = 2 * n - 1 - q
    return q


@njit(cache=True, nogil=True)
def rotate_bilinear_reflect(img, cos_t, sin_t):
    h, w, c = img.shape
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    out = np.empty_like(img)
    for i in range(h):
        uy = i - cy
        for j in range(w):
            ux = j - cx
            xs = cos_t * ux + sin_t * uy + cx
            ys = -sin_t * ux + cos_t * uy + cy
            x0 = int(np.floor(xs))
            y0 = int(np.floor(ys))
            tx = xs - x0
            ty = ys - y0
            x0r = _reflect(x0, w)
            x1r = _reflect(x0 + 1, w)
            y0r = _reflect(y0, h)
            y1r = _reflect(y0 + 1, h)
            for k in range(c):
                p00 = img[y0r, x0r, k]
                p01 = img[y0r, x1r, k]
                p10 = img[y1r, x0r, k]
                p11 = img[y1r, x1r, k]
                top = p00 + tx * (p01 - p00)
                bot = p10 + tx * (p11 - p10)
                out[i, j, k] = top + ty * (bot - top)
    return out


@njit(cache=True, nogil=True, parallel=True)
def conv3x3_forward(x, w, b):
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = np.zeros((n, h + 2, wd + 2, cin), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    y = np.empty((n, h, wd, cout), dtype=x.dtype)
    for ni in prange(n):
        for i in range(h):
            for j in range(wd):
                for o in range(cout):
                    acc = b[o]
                    for ky in range(3):
                        for kx in range(3):
                            for ci in range(cin):
                                acc += xp[ni, i + ky, j + kx, ci] * w[ky, kx, ci, o]
                    y[ni, i, j, o] = acc
    return y


@njit(cache=True, nogil=True, parallel=True)
def conv3x3_backward(xp, w, dy):
    n, h, wd, cout = dy.shape
    cin = xp.shape[3]
    dxp = np.zeros_like(xp)
    dw = np.empty((3, 3, cin, cout), dtype=dy.dtype)
    db = np.empty(cout, dtype=dy.dtype)
    # Per-sample input gradients; the inner o loop runs over contiguous memory.
    for ni in prange(n):
        for i in range(h):
            for j in range(wd):
                for ky in range(3):
                    for kx in range(3):
                        for ci in range(cin):
                            acc = 0.0
                            for o in range(cout):
                                acc += w[ky, kx, ci, o] * dy[ni, i, j, o]
                            dxp[ni, i + ky, j + kx, ci] += acc
    # Per-output-channel weight gradients into a small local accumulator,
    # summed in fixed (ni, i, j) order so results do not depend on threads.
    for o in prange(cout):
        acc_w = np.zeros((3, 3, cin), dtype=dy.dtype)
        acc_b = 0.0
        for ni in range(n):
            for i in range(h):
                for j in range(wd):
                    g = dy[ni, i, j, o]
                    acc_b += g
                    for ky in range(3):
                        for kx in range(3):
                            for ci in range(cin):
                                acc_w[ky, kx, ci] += xp[ni, i + ky, j + kx, ci] * g
        dw[:, :, :, o] = acc_w
        db[o] = acc_b
    return dxp[:, 1:-1, 1:-1, :], dw, db


@njit(cache=True, nogil=True)
def maxpool2_forward(x):
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    y = np.empty((n, h2, w2, c), dtype=x.dtype)
    idx = np.empty((n, h2, w2, c), dtype=np.uint8)
    for ni in range(n):
        for i in range(h2):
            for j in range(w2):
                for k in range(c):
                    best = x[ni, 2 * i, 2 * j, k]
                    bi = np.uint8(0)
                    for ky in range(2):
                        for kx in range(2):
                            v = x[ni, 2 * i + ky, 2 * j + kx, k]
                            if v > best:
                                best = v
                                bi = np.uint8(ky * 2 + kx)
                    y[ni, i, j, k] = best
                    idx[ni, i, j, k] = bi
    return y, idx


@njit(cache=True, nogil=True)
def maxpool2_backward(dy, idx, h, w):
    n, h2, w2, c = dy.shape
    dx = np.zeros((n, h, w, c), dtype=dy.dtype)
    for ni in range(n):
        for i in range(h2):
            for j in range(w2):
                for k in range(c):
                    p = idx[ni, i, j, k]
                    dx[ni, 2 * i + p // 2, 2 * j + p % 2, k] = dy[ni, i, j, k]
    return dx


@njit(cache=True, nogil=True, parallel=True)
def nn_search_other_slide(emb, slide_ids, queries):
    nq = queries.shape[0]
    n, d = emb.shape
    out = np.empty(nq, dtype=np.int64)
    for qi in prange(nq):
        q = queries[qi]
        best = -1
        best_d2 = np.inf
        for j in range(n):
            if slide_ids[j] == slide_ids[q]:
                continue
            d2 = 0.0
            for k in range(d):
                diff = emb[q, k] - emb[j, k]
                d2 += diff * diff
            if d2 < best_d2:
                best_d2 = d2
                best = j
        out[qi] = best
    return out


@njit(cache=True, nogil=True)
def band_candidates(cx, cy, i, d_near2, d_far2):
    n = cx.shape[0]
    n_near = 0
    n_far = 0
    for j in range(n):
        dx = cx[j] - cx[i]
        dyv = cy[j] - cy[i]
        d2 = dx * dx + dyv * dyv
        if 0.0 < d2 <= d_near2:
            n_near += 1
        if d2 >= d_far2:
            n_far += 1
    near = np.empty(n_near, dtype=np.int64)
    far = np.empty(n_far, dtype=np.int64)
    a = 0
    b = 0
    for j in range(n):
        dx = cx[j] - cx[i]
        dyv = cy[j] - cy[i]
        d2 = dx * dx + dyv * dyv
        if 0.0 < d2 <= d_near2:
            near[a] = j
            a += 1
        if d2 >= d_far2:
            far[b] = j
            b += 1
    return near, far
