"""Minimal reverse-mode differentiation over numpy arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients.  ``Tensor.backward`` runs the
closures in reverse topological order.  Feature maps are ``(B, C, H, W)``.
"""

from __future__ import annotations

import math

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    node.grad = None  # free intermediates


def _accum(t: Tensor, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, None, parents, backward)
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), backward)


def concat(ts, axis=1) -> Tensor:
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        for t, part in zip(ts, np.split(g, sizes, axis=axis)):
            _accum(t, part)

    return _result(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


# --- convolution ---------------------------------------------------------------


def _im2col(x, k, dilation):
    """(B, C, H, W) -> (C*k*k, B*H*W) with 'same' zero padding."""
    B, C, H, W = x.shape
    pad = dilation * (k - 1) // 2
    if k == 1:
        return np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(C, B * H * W)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((C, k, k, B, H, W), dtype=x.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i * dilation:i * dilation + H, j * dilation:j * dilation + W]
    return cols.reshape(C * k * k, B * H * W)


def _col2im(dcols, shape, k, dilation):
    B, C, H, W = shape
    if k == 1:
        return dcols.reshape(C, B, H, W).transpose(1, 0, 2, 3)
    pad = dilation * (k - 1) // 2
    dcols = dcols.reshape(C, k, k, B, H, W)
    dxp = np.zeros((C, B, H + 2 * pad, W + 2 * pad), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i * dilation:i * dilation + H, j * dilation:j * dilation + W] += dcols[:, i, j]
    return dxp[:, :, pad:pad + H, pad:pad + W].transpose(1, 0, 2, 3)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, dilation: int = 1) -> Tensor:
    """Stride-1 cross-correlation with 'same' padding dilation*(k-1)/2."""
    B, C, H, W = x.shape
    O, Ci, k, k2 = w.shape
    if Ci != C:
        raise ValueError(f"conv2d: input has {C} channels, weights expect {Ci}")
    if k != k2 or k % 2 == 0:
        raise ValueError("conv2d: kernels must be square with odd size")
    cols = _im2col(x.data, k, dilation)
    w2 = w.data.reshape(O, C * k * k)
    out = (w2 @ cols).reshape(O, B, H, W)
    if b is not None:
        out += b.data[:, None, None, None]
    out = out.transpose(1, 0, 2, 3)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, B * H * W)
        if w.requires_grad:
            _accum(w, (g2 @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=1))
        if x.requires_grad:
            _accum(x, _col2im(w2.T @ g2, (B, C, H, W), k, dilation))

    parents = (x, w) if b is None else (x, w, b)
    return _result(np.ascontiguousarray(out), parents, backward)


# --- activations and normalisation ---------------------------------------------


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    a = slope.data[None, :, None, None]
    pos = x.data >= 0
    out = np.where(pos, x.data, a * x.data)

    def backward(g):
        if x.requires_grad:
            _accum(x, np.where(pos, g, a * g))
        if slope.requires_grad:
            _accum(slope, np.where(pos, 0.0, g * x.data).sum(axis=(0, 2, 3)))

    return _result(out, (x, slope), backward)


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalisation; in training mode the running buffers are updated in place."""
    B, C, H, W = x.shape
    n = B * H * W
    if training:
        if n < 2:
            raise ValueError("batchnorm2d in training mode needs more than one value per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = g * gamma.data[None, :, None, None]
            if training:
                m1 = gx.mean(axis=(0, 2, 3), keepdims=True)
                m2 = (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
                dx = (gx - m1 - xhat * m2) * inv[None, :, None, None]
            else:
                dx = gx * inv[None, :, None, None]
            _accum(x, dx)

    return _result(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward)


# --- attention -------------------------------------------------------------------


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def mha_spatial(x: Tensor, wq, bq, wk, bk, wv, bv, wo, bo, n_heads: int, keep_weights=None) -> Tensor:
    """Multi-head self-attention over the H*W spatial tokens of each image.

    Projection weights are ``(C, C)`` applied as ``tokens @ W.T + b``.  When
    ``keep_weights`` is a list the attention matrices are appended to it.
    """
    B, C, H, W = x.shape
    if C % n_heads:
        raise ValueError(f"{C} channels cannot be split into {n_heads} heads")
    T = H * W
    dh = C // n_heads
    scale = 1.0 / math.sqrt(dh)
    X = np.ascontiguousarray(x.data.reshape(B, C, T).transpose(0, 2, 1))  # (B, T, C)

    def heads(M):
        return M.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)  # (B, h, T, dh)

    Q = heads(X @ wq.data.T + bq.data)
    K = heads(X @ wk.data.T + bk.data)
    V = heads(X @ wv.data.T + bv.data)
    A = softmax((Q @ K.transpose(0, 1, 3, 2)) * scale)
    if keep_weights is not None:
        keep_weights.append(A)
    O = (A @ V).transpose(0, 2, 1, 3).reshape(B, T, C)
    Y = O @ wo.data.T + bo.data
    out = np.ascontiguousarray(Y.transpose(0, 2, 1)).reshape(B, C, H, W)

    def backward(g):
        dY = g.reshape(B, C, T).transpose(0, 2, 1)  # (B, T, C)
        _accum(wo, np.einsum("btc,btd->cd", dY, O))
        _accum(bo, dY.sum(axis=(0, 1)))
        dO = heads(dY @ wo.data)
        dA = dO @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dO
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q

        def merge(M):
            return M.transpose(0, 2, 1, 3).reshape(B, T, C)

        dQ, dK, dV = merge(dQ), merge(dK), merge(dV)
        for dM, wt, bt in ((dQ, wq, bq), (dK, wk, bk), (dV, wv, bv)):
            _accum(wt, np.einsum("btc,btd->cd", dM, X))
            _accum(bt, dM.sum(axis=(0, 1)))
        if x.requires_grad:
            dX = dQ @ wq.data + dK @ wk.data + dV @ wv.data
            _accum(x, np.ascontiguousarray(dX.transpose(0, 2, 1)).reshape(B, C, H, W))

    return _result(out, (x, wq, bq, wk, bk, wv, bv, wo, bo), backward)


# --- resampling ---------------------------------------------------------------------


def avg_pool2d(x: Tensor, p: int) -> Tensor:
    B, C, H, W = x.shape
    if H % p or W % p:
        raise ValueError(f"pooling factor {p} must divide the {H}x{W} map")
    out = x.data.reshape(B, C, H // p, p, W // p, p).mean(axis=(3, 5))

    def backward(g):
        g = np.repeat(np.repeat(g, p, axis=2), p, axis=3) / (p * p)
        _accum(x, g)

    return _result(out, (x,), backward)


def upsample_nearest(x: Tensor, p: int) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, p, axis=2), p, axis=3)

    def backward(g):
        _accum(x, g.reshape(B, C, H, p, W, p).sum(axis=(3, 5)))

    return _result(out, (x,), backward)


def pixel_shuffle_array(x: np.ndarray, r: int) -> np.ndarray:
    """(B, C*r*r, H, W) -> (B, C, H*r, W*r); channel c*r*r + i*r + j lands at (h*r+i, w*r+j)."""
    B, Cr, H, W = x.shape
    if Cr % (r * r):
        raise ValueError(f"{Cr} channels are not divisible by scale^2 = {r * r}")
    C = Cr // (r * r)
    return x.reshape(B, C, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H * r, W * r)


def pixel_unshuffle_array(y: np.ndarray, r: int) -> np.ndarray:
    B, C, Hr, Wr = y.shape
    H, W = Hr // r, Wr // r
    return y.reshape(B, C, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, H, W)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    def backward(g):
        _accum(x, pixel_unshuffle_array(g, r))

    return _result(np.ascontiguousarray(pixel_shuffle_array(x.data, r)), (x,), backward)


# --- loss ----------------------------------------------------------------------------


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != t.shape:
        raise ValueError(f"mse_loss: shapes {pred.shape} and {t.shape} differ")
    diff = pred.data - t
    n = diff.size

    def backward(g):
        _accum(pred, (2.0 / n) * g * diff)

    return _result(np.asarray(np.mean(diff * diff)), (pred,), backward)
