"""Channel-knowledge grids, pixel codecs and the ``CKMT`` binary format.

Tensors hold physical units (dB, degrees, 0/1 masks, BS encoding in [0, 1])
laid out as ``(rows, cols, channels)``; ``height`` is the row count and
``width`` the column count.  The codecs map physical values to the dataset's
[0, 1] pixel convention.
"""

from __future__ import annotations

import enum
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError

GAIN_MIN_DB = -250.0
GAIN_MAX_DB = -50.0
GAIN_SPAN_DB = GAIN_MAX_DB - GAIN_MIN_DB
ANGLE_MIN_DEG = -200.0
ANGLE_MAX_DEG = 180.0
ANGLE_SPAN_DEG = ANGLE_MAX_DEG - ANGLE_MIN_DEG

GAIN_SENTINEL_DB = GAIN_MIN_DB
ANGLE_SENTINEL_DEG = ANGLE_MIN_DEG


class ChannelKind(enum.IntEnum):
    GAIN_DB = 0
    ANGLE_DEG = 1
    LOS_MASK = 2
    BUILDING_MASK = 3
    BS_ENCODING = 4


#: Channel order of stacked model inputs; the secondary path drops LOS_MASK.
PRIMARY_STACK = (
    ChannelKind.GAIN_DB,
    ChannelKind.ANGLE_DEG,
    ChannelKind.LOS_MASK,
    ChannelKind.BUILDING_MASK,
    ChannelKind.BS_ENCODING,
)
SECONDARY_STACK = (
    ChannelKind.GAIN_DB,
    ChannelKind.ANGLE_DEG,
    ChannelKind.BUILDING_MASK,
    ChannelKind.BS_ENCODING,
)


@dataclass(frozen=True, eq=False)
class CkmTensor:
    data: np.ndarray
    channels: tuple[ChannelKind, ...]
    pixel_spacing_m: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"tensor data must be (rows, cols, channels), got shape {data.shape}")
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        channels = tuple(ChannelKind(c) for c in self.channels)
        if data.shape[2] != len(channels):
            raise ValueError(f"{data.shape[2]} data channels but {len(channels)} channel kinds")
        if not (self.pixel_spacing_m > 0 and math.isfinite(self.pixel_spacing_m)):
            raise ValueError("pixel_spacing_m must be positive")
        data = np.array(data, copy=True)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "pixel_spacing_m", float(self.pixel_spacing_m))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def channel(self, kind_or_index) -> np.ndarray:
        if isinstance(kind_or_index, ChannelKind):
            kind_or_index = self.channels.index(kind_or_index)
        return self.data[:, :, kind_or_index]

    def select(self, kinds: Sequence[ChannelKind]) -> "CkmTensor":
        idx = [self.channels.index(k) for k in kinds]
        return CkmTensor(self.data[:, :, idx], tuple(kinds), self.pixel_spacing_m)

    def validate(self) -> list[str]:
        """Return range violations per channel (empty when the tensor is valid)."""
        problems = []
        for i, kind in enumerate(self.channels):
            v = self.data[:, :, i]
            if not np.all(np.isfinite(v)):
                problems.append(f"channel {i} ({kind.name}) has non-finite values")
                continue
            if kind == ChannelKind.GAIN_DB:
                bad = (v < GAIN_MIN_DB) | (v > GAIN_MAX_DB)
            elif kind == ChannelKind.ANGLE_DEG:
                bad = (v < ANGLE_MIN_DEG) | (v > ANGLE_MAX_DEG)
            elif kind in (ChannelKind.LOS_MASK, ChannelKind.BUILDING_MASK):
                bad = (v != 0) & (v != 1)
            else:
                bad = (v < 0) | (v > 1)
            if bad.any():
                problems.append(f"channel {i} ({kind.name}) has {int(bad.sum())} out-of-range values")
        return problems


def kind_range(kind: ChannelKind) -> tuple[float, float]:
    if kind == ChannelKind.GAIN_DB:
        return GAIN_MIN_DB, GAIN_MAX_DB
    if kind == ChannelKind.ANGLE_DEG:
        return ANGLE_MIN_DEG, ANGLE_MAX_DEG
    return 0.0, 1.0


def clip_to_ranges(data: np.ndarray, channels: Sequence[ChannelKind]) -> tuple[np.ndarray, int]:
    """Clip each channel to its physical range; returns the clipped array and count."""
    lo = np.array([kind_range(k)[0] for k in channels])
    hi = np.array([kind_range(k)[1] for k in channels])
    out = np.clip(data, lo, hi)
    return out, int(np.count_nonzero(out != data))


def stack(tensors: Sequence[CkmTensor]) -> CkmTensor:
    data = np.concatenate([t.data for t in tensors], axis=2)
    kinds = tuple(k for t in tensors for k in t.channels)
    return CkmTensor(data, kinds, tensors[0].pixel_spacing_m)


# --- codecs -----------------------------------------------------------------


def _check_nan(x):
    if np.any(np.isnan(x)):
        raise ValueError("NaN passed to a pixel codec")


def encode_gain_array(gain_db) -> tuple[np.ndarray, int]:
    """Vectorised gain encoder; returns pixels and the number of clamped inputs."""
    g = np.asarray(gain_db, dtype=np.float64)
    _check_nan(g)
    clipped = np.clip(g, GAIN_MIN_DB, GAIN_MAX_DB)
    n = int(np.count_nonzero(clipped != g))
    return (clipped - GAIN_MIN_DB) / GAIN_SPAN_DB, n


def encode_gain(gain_db: float) -> float:
    p, n = encode_gain_array(gain_db)
    if n:
        warnings.warn(f"gain {gain_db} dB clamped to [{GAIN_MIN_DB}, {GAIN_MAX_DB}]", stacklevel=2)
    return float(p)


def _check_pixel(p):
    _check_nan(p)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("pixel values must lie in [0, 1]")


def decode_gain_array(pixel) -> np.ndarray:
    p = np.asarray(pixel, dtype=np.float64)
    _check_pixel(p)
    return GAIN_SPAN_DB * p + GAIN_MIN_DB


def decode_gain(pixel: float) -> float:
    return float(decode_gain_array(pixel))


def encode_angle_array(angle_deg) -> tuple[np.ndarray, int]:
    a = np.asarray(angle_deg, dtype=np.float64)
    _check_nan(a)
    clipped = np.clip(a, ANGLE_MIN_DEG, ANGLE_MAX_DEG)
    n = int(np.count_nonzero(clipped != a))
    return (clipped - ANGLE_MIN_DEG) / ANGLE_SPAN_DEG, n


def encode_angle(angle_deg: float) -> float:
    p, n = encode_angle_array(angle_deg)
    if n:
        warnings.warn(f"angle {angle_deg} deg clamped to [{ANGLE_MIN_DEG}, {ANGLE_MAX_DEG}]", stacklevel=2)
    return float(p)


def decode_angle_array(pixel) -> np.ndarray:
    p = np.asarray(pixel, dtype=np.float64)
    _check_pixel(p)
    return ANGLE_SPAN_DEG * p + ANGLE_MIN_DEG


def decode_angle(pixel: float) -> float:
    return float(decode_angle_array(pixel))


def is_gain_sentinel(gain_db) -> np.ndarray:
    return np.asarray(gain_db) <= GAIN_SENTINEL_DB


def is_angle_sentinel(angle_deg) -> np.ndarray:
    """Angles below -180 deg cannot be physical; they mark buildings."""
    return np.asarray(angle_deg) < -180.0


def sentinel_adjacent_angles(angle_deg) -> np.ndarray:
    """Angles strictly between the sentinel and -180 deg: quantisation noise near a building, not a path."""
    a = np.asarray(angle_deg)
    return (a > ANGLE_SENTINEL_DEG) & (a < -180.0)


def encode_tensor(t: CkmTensor) -> tuple[np.ndarray, int]:
    """Map every channel to [0, 1] pixel space; masks and BS maps pass through."""
    out = np.empty(t.shape, dtype=np.float64)
    clamped = 0
    for i, kind in enumerate(t.channels):
        v = t.data[:, :, i]
        if kind == ChannelKind.GAIN_DB:
            out[:, :, i], n = encode_gain_array(v)
        elif kind == ChannelKind.ANGLE_DEG:
            out[:, :, i], n = encode_angle_array(v)
        else:
            out[:, :, i], n = v, 0
        clamped += n
    return out, clamped


def decode_pixels(pixels: np.ndarray, channels: Sequence[ChannelKind], pixel_spacing_m: float = 1.0,
                  clamp: bool = True) -> CkmTensor:
    """Inverse of :func:`encode_tensor`; ``clamp`` first clips to [0, 1]."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if clamp:
        pixels = np.clip(pixels, 0.0, 1.0)
    out = np.empty(pixels.shape, dtype=np.float64)
    for i, kind in enumerate(channels):
        v = pixels[:, :, i]
        if kind == ChannelKind.GAIN_DB:
            out[:, :, i] = decode_gain_array(v)
        elif kind == ChannelKind.ANGLE_DEG:
            out[:, :, i] = decode_angle_array(v)
        else:
            out[:, :, i] = v
    return CkmTensor(out, tuple(channels), pixel_spacing_m)


# --- binary file format ------------------------------------------------------

MAGIC = b"CKMT"
VERSION = 1
_HEADER = struct.Struct("<4sHIIH")


def write_tensor(tensor: CkmTensor, path) -> None:
    """Write ``tensor`` as little-endian float32; float64 data is rounded."""
    h, w, c = tensor.shape
    header = _HEADER.pack(MAGIC, VERSION, w, h, c)
    kinds = bytes(int(k) for k in tensor.channels)
    spacing = struct.pack("<d", tensor.pixel_spacing_m)
    payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + kinds + spacing + payload)


def read_tensor(path) -> CkmTensor:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header", offset=len(raw))
    magic, version, w, h, c = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    off = _HEADER.size
    if len(raw) < off + c + 8:
        raise FormatError(f"{path}: truncated channel table", offset=len(raw))
    try:
        kinds = tuple(ChannelKind(b) for b in raw[off:off + c])
    except ValueError as exc:
        raise FormatError(f"{path}: unknown channel kind code ({exc})", offset=off) from None
    off += c
    (spacing,) = struct.unpack_from("<d", raw, off)
    off += 8
    expected = w * h * c * 4
    actual = len(raw) - off
    if actual != expected:
        raise FormatError(
            f"{path}: payload holds {actual} bytes but header declares {w}x{h}x{c} float32 = {expected} bytes",
            offset=off,
        )
    data = np.frombuffer(raw, dtype="<f4", offset=off).reshape(h, w, c).astype(np.float32)
    return CkmTensor(data, kinds, spacing)


# --- PNG boundary --------------------------------------------------------------


def read_png_gray(path, bit_depth: int) -> np.ndarray:
    """Grayscale PNG as floats v / (2**bit_depth - 1)."""
    from PIL import Image

    if bit_depth not in (8, 16):
        raise FormatError(f"{path}: unsupported bit depth {bit_depth}")
    with Image.open(path) as im:
        if im.format != "PNG":
            raise FormatError(f"{path}: not a PNG file")
        mode = im.mode
        arr = np.asarray(im)
    if bit_depth == 8 and mode != "L":
        raise FormatError(f"{path}: expected 8-bit grayscale, got mode {mode}")
    if bit_depth == 16 and mode not in ("I;16", "I;16B", "I;16L", "I"):
        raise FormatError(f"{path}: expected 16-bit grayscale, got mode {mode}")
    return arr.astype(np.float64) / (2 ** bit_depth - 1)


def import_png_gray(path, kind: ChannelKind, bit_depth: int = 8, pixel_spacing_m: float = 1.0) -> CkmTensor:
    """Single-channel tensor from a dataset PNG, decoded into physical units."""
    pix = read_png_gray(path, bit_depth)
    return decode_pixels(pix[:, :, None], (ChannelKind(kind),), pixel_spacing_m, clamp=False)


def write_png_gray(pixels: np.ndarray, path, bit_depth: int = 8) -> None:
    from PIL import Image

    pixels = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    if bit_depth == 8:
        im = Image.fromarray(np.rint(pixels * 255).astype(np.uint8))
    elif bit_depth == 16:
        im = Image.fromarray(np.rint(pixels * 65535).astype(np.uint16))
    else:
        raise ValueError(f"unsupported bit depth {bit_depth}")
    im.save(path, format="PNG")


def export_png_gray(tensor: CkmTensor, path, bit_depth: int = 8) -> None:
    if tensor.shape[2] != 1:
        raise ValueError("PNG export takes a single-channel tensor")
    pix, _ = encode_tensor(tensor)
    write_png_gray(pix[:, :, 0], path, bit_depth)
