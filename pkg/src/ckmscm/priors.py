"""Auxiliary input maps derived from a path-gain map: LoS, buildings, BS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoCoverageError
from .maps import ChannelKind, CkmTensor, encode_gain_array, is_gain_sentinel

SPEED_OF_LIGHT = 299_792_458.0

DEFAULT_TOL_DB = 1.0
DEFAULT_THRESHOLD_PIXEL = 0.02
DEFAULT_SIGMA_SQ = 5.0


@dataclass(frozen=True)
class SceneMeta:
    bs_height_m: float
    ue_height_m: float
    carrier_hz: float = 28e9
    bs_pixel: tuple[int, int] | None = None

    def __post_init__(self):
        if not (self.carrier_hz > 0):
            raise ValueError(f"carrier_hz must be positive, got {self.carrier_hz}")
        for name in ("bs_height_m", "ue_height_m"):
            v = getattr(self, name)
            if v is None or not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite height >= 0, got {v}")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class PriorBundle:
    los: CkmTensor
    building: CkmTensor
    bs: CkmTensor
    bs_pixel: tuple[int, int]


def _gain_channel(pgm: CkmTensor) -> np.ndarray:
    if ChannelKind.GAIN_DB not in pgm.channels:
        raise ValueError("expected a tensor with a GAIN_DB channel")
    return pgm.channel(ChannelKind.GAIN_DB)


def detect_bs(pgm: CkmTensor) -> tuple[int, int]:
    """Brightest pixel; ties go to the lexicographically smallest (row, col)."""
    g = _gain_channel(pgm)
    if np.all(is_gain_sentinel(g)):
        raise NoCoverageError("every pixel holds the building/no-coverage sentinel")
    # argmax returns the first maximum in row-major order, i.e. smallest (row, col)
    flat = int(np.argmax(g))
    return divmod(flat, g.shape[1])


def friis_gain_db(distance_m, carrier_hz: float):
    """Free-space gain 20 log10(lambda / (4 pi d)) with unit antenna gains."""
    d = np.asarray(distance_m, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValueError("distance must be > 0")
    if not carrier_hz > 0:
        raise ValueError("carrier_hz must be > 0")
    lam = SPEED_OF_LIGHT / carrier_hz
    out = 20.0 * np.log10(lam / (4.0 * np.pi * d))
    return float(out) if out.ndim == 0 else out


def distance_map(shape, bs_pixel, pixel_spacing_m, dh_m) -> np.ndarray:
    rows, cols = np.indices(shape[:2], dtype=np.float64)
    dr = (rows - bs_pixel[0]) * pixel_spacing_m
    dc = (cols - bs_pixel[1]) * pixel_spacing_m
    return np.sqrt(dr * dr + dc * dc + dh_m * dh_m)


def los_map(pgm: CkmTensor, meta: SceneMeta, tol_db: float = DEFAULT_TOL_DB) -> CkmTensor:
    """Label pixels whose strongest-path gain matches free space within ``tol_db``.

    A pixel at zero 3D distance from the BS is labelled LoS.
    """
    if meta.bs_height_m is None or meta.ue_height_m is None:
        raise ValueError("LoS labelling needs BS and UE heights")
    g = _gain_channel(pgm)
    bs = meta.bs_pixel if meta.bs_pixel is not None else detect_bs(pgm)
    d = distance_map(g.shape, bs, pgm.pixel_spacing_m, meta.bs_height_m - meta.ue_height_m)
    zero = d == 0
    free = friis_gain_db(np.where(zero, 1.0, d), meta.carrier_hz)
    los = (np.abs(g - free) <= tol_db) | zero
    los &= ~is_gain_sentinel(g)
    return CkmTensor(los.astype(np.float64), (ChannelKind.LOS_MASK,), pgm.pixel_spacing_m)


def building_map(pgm: CkmTensor, threshold_pixel: float = DEFAULT_THRESHOLD_PIXEL) -> CkmTensor:
    """0 where the encoded gain falls below ``threshold_pixel``, else 1.

    Masks (values in {0, 1}) are thresholded as-is, which makes the operation
    idempotent.
    """
    if not 0.0 <= threshold_pixel <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold_pixel}")
    if pgm.channels == (ChannelKind.BUILDING_MASK,):
        pix = pgm.data[:, :, 0]
    else:
        pix, _ = encode_gain_array(_gain_channel(pgm))
    mask = (pix >= threshold_pixel).astype(np.float64)
    return CkmTensor(mask, (ChannelKind.BUILDING_MASK,), pgm.pixel_spacing_m)


def bs_map(width: int, height: int, bs_pixel, sigma_sq: float = DEFAULT_SIGMA_SQ,
           pixel_spacing_m: float = 1.0) -> CkmTensor:
    """Gaussian bump exp(-|q - bs|^2 / (2 sigma^2)) in pixel units."""
    r0, c0 = bs_pixel
    if not (0 <= r0 < height and 0 <= c0 < width):
        raise ValueError(f"bs_pixel {bs_pixel} outside a {height}x{width} grid")
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be > 0")
    rows, cols = np.indices((height, width), dtype=np.float64)
    d2 = (rows - r0) ** 2 + (cols - c0) ** 2
    return CkmTensor(np.exp(-d2 / (2.0 * sigma_sq)), (ChannelKind.BS_ENCODING,), pixel_spacing_m)


def make_priors(pgm: CkmTensor, meta: SceneMeta, *, sigma_sq: float = DEFAULT_SIGMA_SQ,
                tol_db: float = DEFAULT_TOL_DB, threshold_pixel: float = DEFAULT_THRESHOLD_PIXEL) -> PriorBundle:
    bs = meta.bs_pixel if meta.bs_pixel is not None else detect_bs(pgm)
    meta = SceneMeta(meta.bs_height_m, meta.ue_height_m, meta.carrier_hz, tuple(bs))
    return PriorBundle(
        los=los_map(pgm, meta, tol_db),
        building=building_map(pgm, threshold_pixel),
        bs=bs_map(pgm.width, pgm.height, bs, sigma_sq, pgm.pixel_spacing_m),
        bs_pixel=tuple(bs),
    )
