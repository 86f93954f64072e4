"""Evaluation: building-masked RMSE, per-pixel SCM cosine maps, reports, renders."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .maps import (ChannelKind, CkmTensor, encode_tensor, is_angle_sentinel, is_gain_sentinel, kind_range,
                   write_png_gray)
from .scm import PathSet, SteeringConfig, corr_from_paths, db_to_linear, fold_aoa

COSINE_SENTINEL = -1.0
COSINE_THRESHOLD = 0.8

#: one pixel-space unit of each codec in physical units
CODEC_SLOPE = {ChannelKind.GAIN_DB: 200.0, ChannelKind.ANGLE_DEG: 380.0}


def _valid_mask(building: CkmTensor | np.ndarray, exclude=None) -> np.ndarray:
    if isinstance(building, CkmTensor):
        if building.channels != (ChannelKind.BUILDING_MASK,):
            raise ValueError("building mask must be a single BUILDING_MASK channel")
        m = building.data[:, :, 0] == 1
    else:
        m = np.asarray(building, dtype=bool)
    if exclude is not None:
        m = m & ~np.asarray(exclude, dtype=bool)
    return m


def masked_rmse(pred: CkmTensor, truth: CkmTensor, building, exclude=None) -> np.ndarray:
    """Per-channel RMSE over non-building pixels (mask value 1), in physical units.

    Angle errors are not wrapped.  ``exclude`` removes further pixels (e.g.
    uncovered ones).  A single-channel input still returns a length-1 array.
    """
    if pred.shape != truth.shape or pred.channels != truth.channels:
        raise ValueError(f"pred {pred.shape}/{pred.channels} does not match truth {truth.shape}/{truth.channels}")
    m = _valid_mask(building, exclude)
    if m.shape != pred.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match maps {pred.shape[:2]}")
    if not m.any():
        raise ValueError("no non-building pixels to evaluate")
    d = pred.data.astype(np.float64)[m] - truth.data.astype(np.float64)[m]
    return np.sqrt(np.mean(d * d, axis=0))


def wrapped_angle_rmse(pred_deg: np.ndarray, truth_deg: np.ndarray, mask: np.ndarray) -> float:
    """Diagnostic only: angle error taken on the circle."""
    d = np.mod(np.asarray(pred_deg, np.float64)[mask] - np.asarray(truth_deg, np.float64)[mask] + 180.0, 360.0) - 180.0
    return float(np.sqrt(np.mean(d * d)))


# --- SCM fields ------------------------------------------------------------------------


@dataclass(frozen=True)
class ScmField:
    """Per-pixel path parameters; matrices are built on demand, never stored.

    ``powers`` and ``aoas`` are (H, W, 2); an absent path has power 0.
    ``n_paths`` is 0 at building and uncovered pixels.
    """

    cfg: SteeringConfig
    powers: np.ndarray
    aoas: np.ndarray
    n_paths: np.ndarray
    building: np.ndarray  # True inside buildings

    @property
    def shape(self):
        return self.n_paths.shape

    @property
    def valid(self) -> np.ndarray:
        return self.n_paths > 0

    @property
    def uncovered(self) -> np.ndarray:
        return (self.n_paths == 0) & ~self.building

    def pathset(self, r: int, c: int) -> PathSet:
        keep = self.powers[r, c] > 0
        if not keep.any():
            raise ValueError(f"pixel ({r}, {c}) carries no path")
        return PathSet(tuple(self.powers[r, c][keep]), tuple(self.aoas[r, c][keep]))

    def matrix(self, r: int, c: int) -> np.ndarray:
        return corr_from_paths(self.cfg, self.pathset(r, c))

    def iter_matrices(self):
        for r, c in zip(*np.nonzero(self.valid)):
            yield (int(r), int(c)), self.matrix(r, c)


def scm_map(pgm1: CkmTensor, pam1: CkmTensor, pgm2: CkmTensor, pam2: CkmTensor,
            cfg: SteeringConfig = SteeringConfig(), building=None) -> ScmField:
    """Two-path SCM field from physical-unit maps.

    ``building`` is a BUILDING_MASK tensor (1 = outside buildings) or a boolean
    array (True = inside); by default buildings are read from ``pgm1``.
    """
    shape = pgm1.shape[:2]
    for t in (pam1, pgm2, pam2):
        if t.shape[:2] != shape:
            raise ValueError(f"map sizes differ: {t.shape[:2]} vs {shape}")
    g = np.stack([pgm1.data[:, :, 0], pgm2.data[:, :, 0]], axis=-1).astype(np.float64)
    a = np.stack([pam1.data[:, :, 0], pam2.data[:, :, 0]], axis=-1).astype(np.float64)
    if building is None:
        inside = is_gain_sentinel(g[:, :, 0])
    elif isinstance(building, CkmTensor):
        inside = building.data[:, :, 0] == 0
    else:
        inside = np.asarray(building, dtype=bool)
    present = ~is_gain_sentinel(g) & ~is_angle_sentinel(a) & ~inside[:, :, None]
    powers = np.where(present, db_to_linear(np.where(present, g, 0.0)), 0.0)
    aoas = np.where(present, fold_aoa(np.radians(np.where(present, a, 0.0))), 0.0)
    return ScmField(cfg, powers, aoas, present.sum(axis=-1), inside)


@dataclass(frozen=True)
class CosineMap:
    values: np.ndarray  # (H, W), COSINE_SENTINEL where undefined
    valid: np.ndarray
    threshold: float = COSINE_THRESHOLD

    def summary(self) -> dict:
        v = self.values[self.valid]
        return {
            "mean": float(np.mean(v)),
            "median": float(np.median(v)),
            "fraction_above": float(np.mean(v > self.threshold)),
            "threshold": self.threshold,
            "n_pixels": int(v.size),
        }


def cosine_map(pred: ScmField, truth: ScmField, *, chunk: int = 8192, backend=None,
               threshold: float = COSINE_THRESHOLD) -> CosineMap:
    """Per-pixel cosine similarity over pixels valid in both fields."""
    if pred.shape != truth.shape:
        raise ValueError(f"field shapes differ: {pred.shape} vs {truth.shape}")
    if pred.cfg != truth.cfg:
        raise ValueError("fields use different steering configurations")
    both = pred.valid & truth.valid
    if not both.any():
        raise ValueError("the two fields share no valid pixel")
    k = _backend.get(backend)
    idx = np.flatnonzero(both)
    pa, ta = pred.powers.reshape(-1, 2), pred.aoas.reshape(-1, 2)
    pb, tb = truth.powers.reshape(-1, 2), truth.aoas.reshape(-1, 2)
    out = np.full(both.size, COSINE_SENTINEL)
    for s in range(0, len(idx), chunk):
        sel = idx[s:s + chunk]
        out[sel] = k.toeplitz_cosine(np.ascontiguousarray(pa[sel]), np.ascontiguousarray(ta[sel]),
                                     np.ascontiguousarray(pb[sel]), np.ascontiguousarray(tb[sel]),
                                     pred.cfg.n_antennas, pred.cfg.spacing_ratio)
    return CosineMap(out.reshape(both.shape), both, threshold)


# --- reports -------------------------------------------------------------------------


@dataclass
class EvalReport:
    rmse_gain_db: dict[int, float] = field(default_factory=dict)
    rmse_angle_deg: dict[int, float] = field(default_factory=dict)
    rmse_angle_wrapped_deg: dict[int, float] = field(default_factory=dict)
    cosine: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    observation_consistency: dict[str, float] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    per_scene: list[dict] = field(default_factory=list)
    inputs: list[tuple[str, str]] = field(default_factory=list)  # (path, sha256)

    def __post_init__(self):
        for d in (self.rmse_gain_db, self.rmse_angle_deg):
            if any(not v >= 0 for v in d.values()):
                raise ValueError("RMSE values must be >= 0")

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("# ckmscm evaluation report\n")
        for k, v in sorted(self.manifest.items()):
            buf.write(f"{k}: {v}\n")
        for p in sorted(self.rmse_gain_db):
            buf.write(f"rmse_gain_db_path{p}: {self.rmse_gain_db[p]:.6f}\n")
        for p in sorted(self.rmse_angle_deg):
            buf.write(f"rmse_angle_deg_path{p}: {self.rmse_angle_deg[p]:.6f}\n")
        for p in sorted(self.rmse_angle_wrapped_deg):
            buf.write(f"rmse_angle_wrapped_deg_path{p} (diagnostic): {self.rmse_angle_wrapped_deg[p]:.6f}\n")
        for k, v in self.cosine.items():
            buf.write(f"cosine_{k}: {v:.6f}\n" if isinstance(v, float) else f"cosine_{k}: {v}\n")
        for k, v in self.counts.items():
            buf.write(f"count_{k}: {v}\n")
        for k, v in self.observation_consistency.items():
            buf.write(f"observation_consistency_{k}: {v!r}\n")
        if self.per_scene:
            cols = list(self.per_scene[0])
            buf.write("\n[csv per_scene]\n" + ",".join(cols) + "\n")
            for row in self.per_scene:
                buf.write(",".join(_fmt(row[c]) for c in cols) + "\n")
            buf.write("[/csv]\n")
        if self.inputs:
            buf.write("\n[csv inputs]\npath,sha256\n")
            for p, h in self.inputs:
                buf.write(f"{p},{h}\n")
            buf.write("[/csv]\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def parse_report(text: str) -> dict:
    """Key/value lines of a report (CSV blocks skipped)."""
    out, in_csv = {}, False
    for line in text.splitlines():
        if line.startswith("[csv"):
            in_csv = True
        elif line.startswith("[/csv"):
            in_csv = False
        elif not in_csv and ": " in line and not line.startswith("#"):
            k, v = line.split(": ", 1)
            out[k] = v
    return out


# --- renders ---------------------------------------------------------------------------


def _heat(v: np.ndarray) -> np.ndarray:
    """Black-red-yellow-white ramp on [0, 1]."""
    r = np.clip(3.0 * v, 0.0, 1.0)
    g = np.clip(3.0 * v - 1.0, 0.0, 1.0)
    b = np.clip(3.0 * v - 2.0, 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def render_png(values, path, colormap: str = "gray", *, sentinel=None, vrange=None) -> Path:
    """Write an 8-bit PNG plus a ``.txt`` sidecar describing the value range.

    ``values`` is a single-channel :class:`CkmTensor` (scaled by its codec),
    a :class:`CosineMap` (range [0, 1]) or a 2D array with ``vrange``.
    Sentinel pixels render black.
    """
    from PIL import Image

    if colormap not in ("gray", "heat"):
        raise ValueError(f"unknown colormap {colormap!r}")
    if isinstance(values, CkmTensor):
        if values.shape[2] != 1:
            raise ValueError("render a single channel at a time")
        kind = values.channels[0]
        pix = encode_tensor(values)[0][:, :, 0]
        v = values.data[:, :, 0]
        if kind == ChannelKind.GAIN_DB:
            sent = is_gain_sentinel(v)
        elif kind == ChannelKind.ANGLE_DEG:
            sent = is_angle_sentinel(v)
        else:
            sent = np.zeros(v.shape, dtype=bool)
        lo, hi = kind_range(kind)
        label = kind.name
    elif isinstance(values, CosineMap):
        pix = np.clip(values.values, 0.0, 1.0)
        sent = ~values.valid
        lo, hi, label = 0.0, 1.0, "COSINE"
    else:
        v = np.asarray(values, dtype=np.float64)
        lo, hi = vrange if vrange is not None else (float(np.nanmin(v)), float(np.nanmax(v)))
        span = hi - lo if hi > lo else 1.0
        pix = np.clip((v - lo) / span, 0.0, 1.0)
        sent = ~np.isfinite(v)
        label = "VALUES"
    if sentinel is not None:
        sent = sent | np.asarray(sentinel, dtype=bool)
    pix = np.where(sent, 0.0, np.nan_to_num(pix))
    path = Path(path)
    if colormap == "gray":
        write_png_gray(pix, path, 8)
    else:
        rgb = np.rint(_heat(pix) * 255).astype(np.uint8)
        rgb[sent] = 0
        Image.fromarray(rgb).save(path, format="PNG")
    Path(str(path) + ".txt").write_text(
        f"quantity: {label}\ncolormap: {colormap}\nvalue_at_0: {lo!r}\nvalue_at_255: {hi!r}\n"
        f"sentinel_pixels: {int(sent.sum())} (rendered black)\n"
    )
    return path


def pooled_rmse(sq_sum: float, count: int) -> float:
    if count == 0:
        raise ValueError("no pixels pooled")
    return math.sqrt(sq_sum / count)
