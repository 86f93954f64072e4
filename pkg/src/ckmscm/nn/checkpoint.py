"""``ESRN`` checkpoint files.

Layout (little-endian)::

    magic "ESRN" | version u16 | spec JSON length u32 | spec JSON (utf-8)
    mode u8 (32 or 64) | block count u32
    per block: kind u8 (0 param, 1 buffer) | name length u16 | name
               ndim u8 | dims u32 * ndim | values (float32 or float64)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .model import ModelSpec, ParamStore

MAGIC = b"ESRN"
VERSION = 1


def save_checkpoint(path, spec: ModelSpec, store: ParamStore) -> None:
    bits = 32 if store.mode == "f32" else 64
    dt = "<f4" if bits == 32 else "<f8"
    spec_bytes = spec.to_json().encode()
    blocks = [(0, k, v) for k, v in store.params.items()] + [(1, k, v) for k, v in store.buffers.items()]
    out = [MAGIC, struct.pack("<HI", VERSION, len(spec_bytes)), spec_bytes, struct.pack("<BI", bits, len(blocks))]
    for kind, name, arr in blocks:
        nb = name.encode()
        out.append(struct.pack("<BH", kind, len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path) -> tuple[ModelSpec, ParamStore]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}", offset=0)
    try:
        version, n_spec = struct.unpack_from("<HI", raw, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}", offset=4)
        off = 10
        spec = ModelSpec.from_json(raw[off:off + n_spec].decode())
        off += n_spec
        bits, n_blocks = struct.unpack_from("<BI", raw, off)
        off += 5
        if bits not in (32, 64):
            raise FormatError(f"{path}: unknown numerical mode {bits}", offset=off - 5)
        dt = np.dtype("<f4" if bits == 32 else "<f8")
        store = ParamStore(mode="f32" if bits == 32 else "f64")
        for _ in range(n_blocks):
            kind, n_name = struct.unpack_from("<BH", raw, off)
            off += 3
            name = raw[off:off + n_name].decode()
            off += n_name
            (ndim,) = struct.unpack_from("<B", raw, off)
            shape = struct.unpack_from(f"<{ndim}I", raw, off + 1)
            off += 1 + 4 * ndim
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(raw):
                raise FormatError(f"{path}: block {name!r} truncated", offset=off)
            arr = np.frombuffer(raw, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape)
            off += nbytes
            (store.params if kind == 0 else store.buffers)[name] = arr.astype(dt.newbyteorder("="))
    except (struct.error, UnicodeDecodeError, ValueError, KeyError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: corrupt checkpoint ({exc})", offset=None) from None
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes", offset=off)
    return spec, store
