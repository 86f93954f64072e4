"""Adapter for datasets stored as per-scene grayscale PNGs plus metadata text.

The expected on-disk layout is described by a small JSON manifest so that
releases with different naming can be remapped without code changes::

    {
      "layout_version": 1,
      "scene_glob": "*",
      "gain": "{scene}/path{path}_gain.png",
      "angle": "{scene}/path{path}_angle.png",
      "metadata": "{scene}/meta.txt",
      "bit_depth": 8
    }

``{scene}`` expands to each directory matched by ``scene_glob`` under the
dataset root and ``{path}`` to 1 and 2.  Every key is optional; the values
above are the defaults.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .dataset import SceneMaps, format_metadata, meta_from_dict, parse_metadata, write_scene_dir
from .errors import FormatError, NoCoverageError
from .maps import ChannelKind, export_png_gray, import_png_gray, sentinel_adjacent_angles
from .priors import SceneMeta, detect_bs

log = logging.getLogger(__name__)

LAYOUT_VERSION = 1


@dataclass(frozen=True)
class Layout:
    layout_version: int = LAYOUT_VERSION
    scene_glob: str = "*"
    gain: str = "{scene}/path{path}_gain.png"
    angle: str = "{scene}/path{path}_angle.png"
    metadata: str = "{scene}/meta.txt"
    bit_depth: int = 8

    @classmethod
    def load(cls, path=None) -> "Layout":
        if path is None:
            return cls()
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: layout manifest is not JSON ({exc.msg})", line=exc.lineno) from None
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise FormatError(f"{path}: unknown layout keys {sorted(unknown)}")
        lay = cls(**d)
        if lay.layout_version != LAYOUT_VERSION:
            raise FormatError(f"{path}: layout_version {lay.layout_version} unsupported")
        if lay.bit_depth not in (8, 16):
            raise FormatError(f"{path}: bit_depth must be 8 or 16")
        return lay


def _need(path: Path, what: str) -> Path:
    if not path.is_file():
        raise FormatError(f"missing {what} file {path}")
    return path


def ingest_scene(gain_png_paths, angle_png_paths, metadata_file, bit_depth: int = 8, name=None) -> SceneMaps:
    """Decode one scene: two gain PNGs, two angle PNGs and a metadata file."""
    if len(gain_png_paths) != 2 or len(angle_png_paths) != 2:
        raise ValueError("expected gain and angle PNGs for paths 1 and 2")
    md_path = _need(Path(metadata_file), "metadata")
    md = parse_metadata(md_path.read_text(), md_path)
    spacing = md.get("pixel_spacing_m", 1.0)
    gains = [import_png_gray(_need(Path(p), "gain"), ChannelKind.GAIN_DB, bit_depth, spacing) for p in gain_png_paths]
    angles = [import_png_gray(_need(Path(p), "angle"), ChannelKind.ANGLE_DEG, bit_depth, spacing)
              for p in angle_png_paths]
    shapes = {t.shape for t in gains + angles}
    if len(shapes) != 1:
        raise FormatError(f"{md_path}: scene images disagree in size {sorted(shapes)}")
    for k, t in enumerate(angles, 1):
        n = int(sentinel_adjacent_angles(t.data).sum())
        if n:
            log.warning("%s: %d path-%d angle pixels decode between -200 and -180 deg; treated as absent",
                        md_path.parent, n, k)
    meta = meta_from_dict(md)
    if meta.bs_pixel is None:
        meta = SceneMeta(meta.bs_height_m, meta.ue_height_m, meta.carrier_hz, detect_bs(gains[0]))
    return SceneMaps(name or md.get("scene_id", md_path.parent.name), gains[0], angles[0], gains[1], angles[1], meta)


def ingest_dataset(root, layout: Layout, out_dir) -> tuple[list[str], list[tuple[str, str]]]:
    """Convert every scene under ``root``; returns (written, skipped-with-reason)."""
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"dataset directory {root} does not exist")
    scenes = sorted(p for p in root.glob(layout.scene_glob) if p.is_dir())
    if not scenes:
        raise FormatError(f"{root}: no scene directories match {layout.scene_glob!r}")
    out_dir = Path(out_dir)
    written, skipped = [], []
    for sdir in scenes:
        rel = sdir.relative_to(root).as_posix()

        def resolve(pattern, path=None):
            return root / pattern.format(scene=rel, path=path)

        try:
            s = ingest_scene([resolve(layout.gain, k) for k in (1, 2)], [resolve(layout.angle, k) for k in (1, 2)],
                             resolve(layout.metadata), layout.bit_depth, name=sdir.name)
        except NoCoverageError as exc:
            log.warning("skipping %s: BS detection failed (%s)", rel, exc)
            skipped.append((rel, f"BS detection failed: {exc}"))
            continue
        write_scene_dir(s, out_dir / sdir.name)
        written.append(sdir.name)
    return written, skipped


def export_scene_pngs(scene: SceneMaps, directory, bit_depth: int = 8) -> Path:
    """Write a scene in the default PNG layout (used for round-trip tests)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k in (1, 2):
        pgm, pam = scene.path(k)
        export_png_gray(pgm, d / f"path{k}_gain.png", bit_depth)
        export_png_gray(pam, d / f"path{k}_angle.png", bit_depth)
    (d / "meta.txt").write_text(format_metadata(scene.name, scene.meta, scene.pixel_spacing_m))
    return d
