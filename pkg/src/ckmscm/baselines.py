"""Classical completion baselines: Keys bicubic and k-nearest-neighbour IDW.

Both methods are affine-invariant (weights sum to one), so they run directly
on physical values; this equals interpolating in the encoded pixel space
channel by channel, with angles treated as plain values (no unwrapping).
"""

from __future__ import annotations

import logging

import numpy as np

from . import _backend
from .maps import CkmTensor, clip_to_ranges
from .sampling import SamplingGrid

log = logging.getLogger(__name__)

DEFAULT_K = 4
DEFAULT_POWER = 2.0


def bicubic_upscale_array(lr: np.ndarray, scale: int, center_aligned: bool = False, backend=None) -> np.ndarray:
    """Raw (unclamped) bicubic enlargement of an ``(h, w[, C])`` array."""
    if int(scale) != scale or scale < 1:
        raise ValueError(f"scale must be a positive integer, got {scale}")
    arr = np.asarray(lr, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    if arr.size == 0:
        raise ValueError("cannot upscale an empty map")
    out = _backend.get(backend).bicubic_upscale(np.ascontiguousarray(arr), int(scale), bool(center_aligned))
    return out[:, :, 0] if squeeze else out


def knn_complete_array(lr: np.ndarray, grid: SamplingGrid, full_dims: tuple[int, int],
                       k: int = DEFAULT_K, power: float = DEFAULT_POWER, backend=None) -> np.ndarray:
    arr = np.asarray(lr, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    rows, cols = full_dims
    if (arr.shape[0], arr.shape[1]) != grid.lr_shape(rows, cols):
        raise ValueError(f"observation grid {arr.shape[:2]} does not match {full_dims} under {grid}")
    n_obs = arr.shape[0] * arr.shape[1]
    if int(k) != k or k < 1 or k > n_obs:
        raise ValueError(f"k must lie in [1, {n_obs}], got {k}")
    out = _backend.get(backend).knn_complete(
        np.ascontiguousarray(arr), grid.offset[0], grid.offset[1], grid.stride,
        int(rows), int(cols), int(k), float(power),
    )
    return out[:, :, 0] if squeeze else out


def bicubic_upscale(lr: CkmTensor, scale: int, *, center_aligned: bool = False,
                    return_clamped: bool = False, backend=None):
    """Bicubic completion; overshoot beyond each channel's range is clamped.

    With ``return_clamped`` the clamp count is returned alongside the tensor.
    """
    up = bicubic_upscale_array(lr.data, scale, center_aligned, backend)
    up, clamped = clip_to_ranges(up, lr.channels)
    if clamped:
        log.debug("bicubic: clamped %d overshooting values", clamped)
    out = CkmTensor(up, lr.channels, lr.pixel_spacing_m / scale)
    return (out, clamped) if return_clamped else out


def knn_complete(lr: CkmTensor, grid: SamplingGrid, full_dims: tuple[int, int], k: int = DEFAULT_K,
                 power: float = DEFAULT_POWER, backend=None) -> CkmTensor:
    up = knn_complete_array(lr.data, grid, full_dims, k, power, backend)
    return CkmTensor(up, lr.channels, lr.pixel_spacing_m / grid.stride)
