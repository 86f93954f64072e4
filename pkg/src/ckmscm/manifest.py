"""Run manifests: flags, seeds, file hashes and library versions."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import _backend

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def hash_tree(path) -> dict[str, str]:
    """sha256 of a file, or of every file under a directory (sorted, manifests excluded)."""
    p = Path(path)
    if p.is_file():
        return {str(p): sha256_file(p)}
    out = {}
    for f in sorted(p.rglob("*")):
        if f.is_file() and not f.name.endswith(MANIFEST_NAME):
            out[str(f)] = sha256_file(f)
    return out


def versions() -> dict[str, str]:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    try:
        pillow = metadata.version("Pillow")
    except metadata.PackageNotFoundError:
        pillow = "absent"
    return {
        "ckmscm": pkg,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "pillow": pillow,
        "kernel_backend": _backend.NAME,
        "platform": platform.platform(),
    }


def manifest_path_for(output) -> Path:
    """``<dir>/manifest.json`` for directories, ``<file>.manifest.json`` otherwise."""
    p = Path(output)
    return p / MANIFEST_NAME if p.is_dir() else p.with_name(p.name + "." + MANIFEST_NAME)


def write_manifest(output, command: str, args: dict, *, seeds=None, inputs=(), outputs=(), extra=None) -> Path:
    record = {
        "command": command,
        "args": {k: _jsonable(v) for k, v in sorted(args.items()) if not callable(v)},
        "seeds": seeds if seeds is not None else {},
        "inputs": {k: v for i in inputs for k, v in hash_tree(i).items()},
        "outputs": {k: v for o in outputs for k, v in hash_tree(o).items()},
        "versions": versions(),
    }
    if extra:
        record.update(extra)
    path = manifest_path_for(output)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(output) -> dict:
    p = manifest_path_for(output)
    return json.loads(p.read_text()) if p.is_file() else {}


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v
