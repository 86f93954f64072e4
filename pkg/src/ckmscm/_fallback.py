"""Pure numpy implementations of the per-pixel kernels.

Signatures mirror ``_kernels.pyx`` exactly; :mod:`ckmscm._backend` picks one.
All arrays are float64 and C-contiguous.
"""

import numpy as np

KEYS_A = -0.5


def keys_kernel(t, a=KEYS_A):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _axis_weights(n_src, scale, center):
    n_out = n_src * scale
    x = np.arange(n_out, dtype=np.float64)
    src = (x + 0.5) / scale - 0.5 if center else x / scale
    base = np.floor(src)
    t = src - base
    W = np.zeros((n_out, n_src))
    for m in (-1, 0, 1, 2):
        idx = np.clip(base.astype(np.int64) + m, 0, n_src - 1)
        np.add.at(W, (np.arange(n_out), idx), keys_kernel(t - m))
    return W


def bicubic_upscale(src, scale, center):
    """Separable Keys-bicubic enlargement of an (h, w, C) array by ``scale``."""
    h, w, _ = src.shape
    Wy = _axis_weights(h, scale, center)
    Wx = _axis_weights(w, scale, center)
    return np.ascontiguousarray(np.einsum("yi,ijc,xj->yxc", Wy, src, Wx, optimize=True))


def knn_complete(obs, row0, col0, stride, rows, cols, k, power, chunk=2048):
    """Inverse-distance-weighted mean of the k nearest observed lattice points.

    Ranking key is (squared distance, row, col); all distances are exact
    integers so the ordering is platform independent.
    """
    h, w, C = obs.shape
    M = h * w
    orow = (row0 + stride * np.arange(h)).repeat(w).astype(np.int64)
    ocol = np.tile(col0 + stride * np.arange(w), h).astype(np.int64)
    values = obs.reshape(M, C)
    prow, pcol = np.divmod(np.arange(rows * cols, dtype=np.int64), cols)
    out = np.empty((rows * cols, C))
    for s in range(0, rows * cols, chunk):
        pr = prow[s:s + chunk, None]
        pc = pcol[s:s + chunk, None]
        d2 = (pr - orow) ** 2 + (pc - ocol) ** 2
        key = d2 * M + np.arange(M)
        part = np.argpartition(key, k - 1, axis=1)[:, :k] if k < M else np.broadcast_to(np.arange(M), key.shape)
        order = np.take_along_axis(part, np.argsort(np.take_along_axis(key, part, axis=1), axis=1), axis=1)
        dd = np.take_along_axis(d2, order, axis=1).astype(np.float64)
        vals = values[order]  # (n, k, C)
        hit = dd[:, 0] == 0
        wgt = np.where(dd > 0, dd, 1.0) ** (-0.5 * power)
        res = (wgt[:, :, None] * vals).sum(axis=1) / wgt.sum(axis=1)[:, None]
        res[hit] = vals[hit, 0]
        out[s:s + chunk] = res
    return out.reshape(rows, cols, C)


def toeplitz_cosine(pa, ta, pb, tb, n_antennas, spacing):
    """Per-row cosine similarity of two ULA correlation matrices given by paths.

    Uses the Toeplitz identity tr(A B) = sum_k (N - |k|) a(k) b(-k); rows whose
    matrices vanish give NaN.
    """
    N = n_antennas
    k = np.arange(N, dtype=np.float64)
    weight = 2.0 * (N - k)
    weight[0] = N

    def lags(p, th):
        scale = p.max(axis=1, keepdims=True)
        q = p / np.where(scale > 0, scale, 1.0)
        phase = 2.0 * np.pi * spacing * np.cos(th)[:, :, None] * k  # (P, L, N)
        re = (q[:, :, None] * np.cos(phase)).sum(axis=1)
        im = (q[:, :, None] * np.sin(phase)).sum(axis=1)
        return re, im

    ar, ai = lags(pa, ta)
    br, bi = lags(pb, tb)
    cross = (weight * (ar * br + ai * bi)).sum(axis=1)
    na = (weight * (ar * ar + ai * ai)).sum(axis=1)
    nb = (weight * (br * br + bi * bi)).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return cross / (np.sqrt(na) * np.sqrt(nb))
