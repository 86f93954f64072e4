"""Scene directories on disk and (input stack, target) training pairs.

A scene directory holds ``pgm1.ckmt pam1.ckmt pgm2.ckmt pam2.ckmt`` plus a
``meta.txt`` of ``key=value`` lines.  Pairs live in encoded pixel space:
inputs are the sampled LR stack (C, h, w), targets the HR [PGM, PAM] (2, H, W).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NoCoverageError
from .maps import (PRIMARY_STACK, SECONDARY_STACK, ChannelKind, CkmTensor, encode_tensor, read_tensor,
                   stack, write_tensor)
from .priors import (DEFAULT_SIGMA_SQ, DEFAULT_THRESHOLD_PIXEL, DEFAULT_TOL_DB, SceneMeta, make_priors)
from .sampling import SamplingGrid, sample

log = logging.getLogger(__name__)

MAP_NAMES = ("pgm1", "pam1", "pgm2", "pam2")
PRIOR_KINDS = {"los": ChannelKind.LOS_MASK, "building": ChannelKind.BUILDING_MASK, "bs": ChannelKind.BS_ENCODING}

_META_KEYS = {
    "scene_id": str,
    "bs_height": float,
    "ue_height": float,
    "carrier_hz": float,
    "pixel_spacing_m": float,
    "bs_row": int,
    "bs_col": int,
}
_META_REQUIRED = ("bs_height", "ue_height")


@dataclass(frozen=True)
class SceneMaps:
    name: str
    pgm1: CkmTensor
    pam1: CkmTensor
    pgm2: CkmTensor
    pam2: CkmTensor
    meta: SceneMeta

    @property
    def pixel_spacing_m(self) -> float:
        return self.pgm1.pixel_spacing_m

    def path(self, which: int) -> tuple[CkmTensor, CkmTensor]:
        if which == 1:
            return self.pgm1, self.pam1
        if which == 2:
            return self.pgm2, self.pam2
        raise ValueError(f"path must be 1 or 2, got {which}")


def parse_metadata(text: str, source="<metadata>") -> dict:
    """Parse ``key=value`` lines; '#' starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}: expected key=value, got {raw!r}", line=n)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _META_KEYS:
            raise FormatError(f"{source}: unknown key {key!r}", line=n)
        try:
            out[key] = _META_KEYS[key](value)
        except ValueError:
            raise FormatError(f"{source}: bad value {value!r} for {key}", line=n) from None
    missing = [k for k in _META_REQUIRED if k not in out]
    if missing:
        raise FormatError(f"{source}: missing required keys {missing}")
    if ("bs_row" in out) != ("bs_col" in out):
        raise FormatError(f"{source}: bs_row and bs_col must be given together")
    return out


def meta_from_dict(d: dict) -> SceneMeta:
    bs = (d["bs_row"], d["bs_col"]) if "bs_row" in d else None
    return SceneMeta(d["bs_height"], d["ue_height"], d.get("carrier_hz", 28e9), bs)


def format_metadata(name: str, meta: SceneMeta, pixel_spacing_m: float) -> str:
    lines = [f"scene_id={name}", f"bs_height={meta.bs_height_m!r}", f"ue_height={meta.ue_height_m!r}",
             f"carrier_hz={meta.carrier_hz!r}", f"pixel_spacing_m={pixel_spacing_m!r}"]
    if meta.bs_pixel is not None:
        lines += [f"bs_row={meta.bs_pixel[0]}", f"bs_col={meta.bs_pixel[1]}"]
    return "\n".join(lines) + "\n"


def write_scene_dir(scene: SceneMaps, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in MAP_NAMES:
        write_tensor(getattr(scene, name), d / f"{name}.ckmt")
    (d / "meta.txt").write_text(format_metadata(scene.name, scene.meta, scene.pixel_spacing_m))
    return d


def read_scene_dir(directory) -> SceneMaps:
    d = Path(directory)
    meta_path = d / "meta.txt"
    if not meta_path.is_file():
        raise FormatError(f"{d}: no meta.txt")
    md = parse_metadata(meta_path.read_text(), meta_path)
    maps = {}
    for name in MAP_NAMES:
        p = d / f"{name}.ckmt"
        if not p.is_file():
            raise FormatError(f"{d}: missing {p.name}")
        maps[name] = read_tensor(p)
    shapes = {m.shape[:2] for m in maps.values()}
    if len(shapes) != 1:
        raise FormatError(f"{d}: maps disagree in size {sorted(shapes)}")
    return SceneMaps(md.get("scene_id", d.name), meta=meta_from_dict(md), **maps)


def list_scene_dirs(root) -> list[Path]:
    root = Path(root)
    if (root / "meta.txt").is_file():
        return [root]
    dirs = sorted(p.parent for p in root.glob("*/meta.txt"))
    if not dirs:
        raise FormatError(f"{root}: no scene directories (expected */meta.txt)")
    return dirs


def from_synthetic(scene, name: str) -> SceneMaps:
    return SceneMaps(name, scene.pgm1, scene.pam1, scene.pgm2, scene.pam2, scene.meta)


# --- training pairs ------------------------------------------------------------------


def input_kinds(path: int, drop=()) -> tuple[ChannelKind, ...]:
    """Channel order of the model input for ``path`` minus ablated priors."""
    base = PRIMARY_STACK if path == 1 else SECONDARY_STACK
    drop = {PRIOR_KINDS[d] if isinstance(d, str) else ChannelKind(d) for d in drop}
    if drop & {ChannelKind.GAIN_DB, ChannelKind.ANGLE_DEG}:
        raise ValueError("only prior channels can be dropped")
    return tuple(k for k in base if k not in drop)


@dataclass(frozen=True)
class Pair:
    inputs: np.ndarray  # (C, h, w) encoded
    target: np.ndarray  # (2, H, W) encoded
    kinds: tuple[ChannelKind, ...]


def scene_priors(scene: SceneMaps, *, sigma_sq=DEFAULT_SIGMA_SQ, tol_db=DEFAULT_TOL_DB,
                 threshold_pixel=DEFAULT_THRESHOLD_PIXEL):
    """Priors from the full-resolution primary-path gain map."""
    return make_priors(scene.pgm1, scene.meta, sigma_sq=sigma_sq, tol_db=tol_db, threshold_pixel=threshold_pixel)


def full_stack(scene: SceneMaps, path: int = 1, drop=(), **prior_kw) -> CkmTensor:
    pgm, pam = scene.path(path)
    pr = scene_priors(scene, **prior_kw)
    by_kind = {ChannelKind.GAIN_DB: pgm, ChannelKind.ANGLE_DEG: pam, ChannelKind.LOS_MASK: pr.los,
               ChannelKind.BUILDING_MASK: pr.building, ChannelKind.BS_ENCODING: pr.bs}
    return stack([by_kind[k] for k in input_kinds(path, drop)])


def make_pair(scene: SceneMaps, path: int = 1, grid: SamplingGrid = SamplingGrid(), drop=(), **prior_kw) -> Pair:
    full = full_stack(scene, path, drop, **prior_kw)
    lr = sample(full, grid)
    x, _ = encode_tensor(lr)
    pgm, pam = scene.path(path)
    y, _ = encode_tensor(stack([pgm, pam]))
    return Pair(np.ascontiguousarray(x.transpose(2, 0, 1)), np.ascontiguousarray(y.transpose(2, 0, 1)), full.channels)


def build_pairs(scenes, path: int = 1, grid: SamplingGrid = SamplingGrid(), drop=(), **prior_kw):
    """Stack pairs into (N, C, h, w) and (N, 2, H, W); scenes without coverage are skipped."""
    xs, ys, kept = [], [], []
    for s in scenes:
        try:
            p = make_pair(s, path, grid, drop, **prior_kw)
        except NoCoverageError as exc:
            log.warning("skipping scene %s: %s", s.name, exc)
            continue
        xs.append(p.inputs)
        ys.append(p.target)
        kept.append(s.name)
    if not xs:
        raise ValueError("no usable scenes")
    return np.stack(xs), np.stack(ys), kept
