"""Uniform sparse sampling of a full grid and observation-consistency checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maps import CkmTensor


@dataclass(frozen=True)
class SamplingGrid:
    """Observed set {(row0 + a*stride, col0 + b*stride)} clipped to the grid."""

    stride: int = 2
    offset: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError(f"stride must be a positive integer, got {self.stride}")
        r0, c0 = self.offset
        if not (0 <= r0 < self.stride and 0 <= c0 < self.stride):
            raise ValueError(f"offset {self.offset} must satisfy 0 <= offset < stride={self.stride}")
        object.__setattr__(self, "offset", (int(r0), int(c0)))

    def lr_shape(self, rows: int, cols: int) -> tuple[int, int]:
        r0, c0 = self.offset
        return -(-(rows - r0) // self.stride), -(-(cols - c0) // self.stride)

    def observed_rows(self, rows: int) -> np.ndarray:
        return np.arange(self.offset[0], rows, self.stride)

    def observed_cols(self, cols: int) -> np.ndarray:
        return np.arange(self.offset[1], cols, self.stride)

    def observed_mask(self, rows: int, cols: int) -> np.ndarray:
        m = np.zeros((rows, cols), dtype=bool)
        m[self.offset[0]::self.stride, self.offset[1]::self.stride] = True
        return m


def sample_array(full: np.ndarray, grid: SamplingGrid) -> np.ndarray:
    r0, c0 = grid.offset
    return np.ascontiguousarray(full[r0::grid.stride, c0::grid.stride])


def sample(full: CkmTensor, grid: SamplingGrid) -> CkmTensor:
    return CkmTensor(sample_array(full.data, grid), full.channels, full.pixel_spacing_m * grid.stride)


def upsample_duplicate(lr: CkmTensor, grid: SamplingGrid, full_shape: tuple[int, int]) -> CkmTensor:
    """Nearest-lattice replication back onto the full grid (right inverse of ``sample``)."""
    rows, cols = full_shape
    r = np.clip((np.arange(rows) - grid.offset[0]) // grid.stride, 0, lr.height - 1)
    c = np.clip((np.arange(cols) - grid.offset[1]) // grid.stride, 0, lr.width - 1)
    return CkmTensor(lr.data[r][:, c], lr.channels, lr.pixel_spacing_m / grid.stride)


def observation_consistency(completed: CkmTensor, observed: CkmTensor, grid: SamplingGrid) -> np.ndarray:
    """Per-channel max |completed - observed| over the observed locations."""
    expect = grid.lr_shape(completed.height, completed.width)
    if (observed.height, observed.width) != expect or observed.shape[2] != completed.shape[2]:
        raise ValueError(
            f"observed grid {observed.shape} does not match {completed.shape} sampled with {grid}"
        )
    diff = np.abs(sample_array(completed.data, grid).astype(np.float64) - observed.data)
    return diff.reshape(-1, diff.shape[2]).max(axis=0)
