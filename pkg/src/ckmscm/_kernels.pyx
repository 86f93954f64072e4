# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels.  Same contracts as ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, pow, floor, fabs, NAN, M_PI

cnp.import_array()

cdef double KEYS_A = -0.5


cdef inline double _keys(double t) nogil:
    t = fabs(t)
    cdef double t2 = t * t
    cdef double t3 = t2 * t
    if t <= 1.0:
        return (KEYS_A + 2.0) * t3 - (KEYS_A + 3.0) * t2 + 1.0
    if t < 2.0:
        return KEYS_A * t3 - 5.0 * KEYS_A * t2 + 8.0 * KEYS_A * t - 4.0 * KEYS_A
    return 0.0


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


def bicubic_upscale(const double[:, :, ::1] src, int scale, bint center):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], C = src.shape[2]
    cdef Py_ssize_t H = h * scale, W = w * scale
    out_arr = np.zeros((H, W, C), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, c, m, n, iy, ix, ry, rx
    cdef double sy, sx, ty, tx, acc
    cdef double wy[4]
    cdef double wx[4]
    with nogil:
        for y in range(H):
            if center:
                sy = (y + 0.5) / scale - 0.5
            else:
                sy = <double>y / scale
            iy = <Py_ssize_t>floor(sy)
            ty = sy - iy
            for m in range(4):
                wy[m] = _keys(ty - (m - 1))
            for x in range(W):
                if center:
                    sx = (x + 0.5) / scale - 0.5
                else:
                    sx = <double>x / scale
                ix = <Py_ssize_t>floor(sx)
                tx = sx - ix
                for n in range(4):
                    wx[n] = _keys(tx - (n - 1))
                for c in range(C):
                    acc = 0.0
                    for m in range(4):
                        ry = _clamp(iy + m - 1, h)
                        for n in range(4):
                            rx = _clamp(ix + n - 1, w)
                            acc = acc + src[ry, rx, c] * wy[m] * wx[n]
                    out[y, x, c] = acc
    return out_arr


def knn_complete(const double[:, :, ::1] obs, int row0, int col0, int stride,
                 int rows, int cols, int k, double power):
    cdef Py_ssize_t h = obs.shape[0], w = obs.shape[1], C = obs.shape[2]
    cdef Py_ssize_t M = h * w
    out_arr = np.empty((rows, cols, C), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    best_key_arr = np.empty(k, dtype=np.int64)
    best_idx_arr = np.empty(k, dtype=np.int64)
    cdef long long[::1] best_key = best_key_arr
    cdef long long[::1] best_idx = best_idx_arr
    cdef Py_ssize_t pr, pc, a, b, j, c, n_best, pos, oi
    cdef long long dr, dc, d2, key
    cdef double wsum, wt, dd
    with nogil:
        for pr in range(rows):
            for pc in range(cols):
                n_best = 0
                for a in range(h):
                    dr = pr - (row0 + stride * a)
                    for b in range(w):
                        dc = pc - (col0 + stride * b)
                        d2 = dr * dr + dc * dc
                        key = d2 * M + a * w + b
                        if n_best == k and key >= best_key[k - 1]:
                            continue
                        pos = n_best if n_best < k else k - 1
                        while pos > 0 and best_key[pos - 1] > key:
                            if pos < k:
                                best_key[pos] = best_key[pos - 1]
                                best_idx[pos] = best_idx[pos - 1]
                            pos -= 1
                        best_key[pos] = key
                        best_idx[pos] = a * w + b
                        if n_best < k:
                            n_best += 1
                if best_key[0] // M == 0:
                    oi = best_idx[0]
                    for c in range(C):
                        out[pr, pc, c] = obs[oi // w, oi % w, c]
                    continue
                for c in range(C):
                    out[pr, pc, c] = 0.0
                wsum = 0.0
                for j in range(n_best):
                    dd = <double>(best_key[j] // M)
                    wt = pow(dd, -0.5 * power)
                    wsum = wsum + wt
                    oi = best_idx[j]
                    for c in range(C):
                        out[pr, pc, c] = out[pr, pc, c] + wt * obs[oi // w, oi % w, c]
                for c in range(C):
                    out[pr, pc, c] = out[pr, pc, c] / wsum
    return out_arr


cdef inline void _lags(const double[:, ::1] p, const double[:, ::1] th, Py_ssize_t i, double scale, int n,
                       double spacing, double *re, double *im) noexcept nogil:
    """Lag sequence of one pixel; each path's phasor advances by a fixed rotation per lag."""
    cdef Py_ssize_t kk, l
    cdef double q, ph, c, s, zr, zi, t
    for kk in range(n):
        re[kk] = 0.0
        im[kk] = 0.0
    for l in range(p.shape[1]):
        q = p[i, l] / scale
        if q == 0.0:
            continue
        ph = 2.0 * M_PI * spacing * cos(th[i, l])
        c = cos(ph)
        s = sin(ph)
        zr = 1.0
        zi = 0.0
        for kk in range(n):
            re[kk] += q * zr
            im[kk] += q * zi
            t = zr * c - zi * s
            zi = zr * s + zi * c
            zr = t


def toeplitz_cosine(const double[:, ::1] pa, const double[:, ::1] ta, const double[:, ::1] pb, const double[:, ::1] tb,
                    int n_antennas, double spacing):
    cdef Py_ssize_t P = pa.shape[0], La = pa.shape[1], Lb = pb.shape[1]
    out_arr = np.empty(P, dtype=np.float64)
    buf_arr = np.empty((4, max(n_antennas, 1)), dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[:, ::1] buf = buf_arr
    cdef double *ar = &buf[0, 0]
    cdef double *ai = &buf[1, 0]
    cdef double *br = &buf[2, 0]
    cdef double *bi = &buf[3, 0]
    cdef Py_ssize_t i, kk, l
    cdef double sa, sb, wk, cross, na, nb
    with nogil:
        for i in range(P):
            sa = 0.0
            for l in range(La):
                if pa[i, l] > sa:
                    sa = pa[i, l]
            sb = 0.0
            for l in range(Lb):
                if pb[i, l] > sb:
                    sb = pb[i, l]
            if sa <= 0.0 or sb <= 0.0:
                out[i] = NAN
                continue
            _lags(pa, ta, i, sa, n_antennas, spacing, ar, ai)
            _lags(pb, tb, i, sb, n_antennas, spacing, br, bi)
            cross = 0.0
            na = 0.0
            nb = 0.0
            for kk in range(n_antennas):
                wk = n_antennas if kk == 0 else 2.0 * (n_antennas - kk)
                cross = cross + wk * (ar[kk] * br[kk] + ai[kk] * bi[kk])
                na = na + wk * (ar[kk] * ar[kk] + ai[kk] * ai[kk])
                nb = nb + wk * (br[kk] * br[kk] + bi[kk] * bi[kk])
            out[i] = cross / (sqrt(na) * sqrt(nb))
    return out_arr
