"""Procedural two-path scenes standing in for a ray-traced corpus.

Geometry is top-down 2D: pixel (row, col) sits at x = col * spacing,
y = row * spacing.  Heights only enter the Friis distance.  Path 1 is the
direct ray, attenuated by a fixed blockage penalty per obstacle it crosses.
Path 2 is the strongest single-bounce image-source reflection off an
obstacle face or a scene boundary wall.  Angles are measured at the BS
against the array axis (the x axis) and folded onto [0, 180] degrees.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .maps import (ANGLE_SENTINEL_DEG, GAIN_MAX_DB, GAIN_MIN_DB, GAIN_SENTINEL_DB, ChannelKind,
                   CkmTensor)
from .priors import SceneMeta, friis_gain_db


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned box in meters: x in [x0, x1], y in [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float
    height_m: float = 20.0

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate obstacle {self}")

    def contains(self, x, y):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


@dataclass(frozen=True)
class SceneSpec:
    rows: int = 64
    cols: int = 64
    pixel_spacing_m: float = 2.0
    carrier_hz: float = 28e9
    bs_xy: tuple[float, float] = (64.0, 64.0)
    bs_height_m: float = 25.0
    ue_height_m: float = 1.5
    obstacles: tuple[Obstacle, ...] = ()
    reflection_loss_db: float = 6.0
    blockage_db: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if not self.carrier_hz > 0:
            raise ValueError("carrier_hz must be > 0")
        if self.rows < 1 or self.cols < 1 or not self.pixel_spacing_m > 0:
            raise ValueError("grid dimensions and spacing must be positive")
        object.__setattr__(self, "obstacles", tuple(
            o if isinstance(o, Obstacle) else Obstacle(**o) for o in self.obstacles))
        object.__setattr__(self, "bs_xy", tuple(float(v) for v in self.bs_xy))
        xmax = (self.cols - 0.5) * self.pixel_spacing_m
        ymax = (self.rows - 0.5) * self.pixel_spacing_m
        lo = -0.5 * self.pixel_spacing_m
        for o in self.obstacles:
            if o.x0 < lo or o.y0 < lo or o.x1 > xmax or o.y1 > ymax:
                raise ValueError(f"obstacle {o} extends outside the grid")
        bx, by = self.bs_xy
        if not (lo <= bx <= xmax and lo <= by <= ymax):
            raise ValueError(f"BS position {self.bs_xy} lies outside the grid")
        if any(o.contains(bx, by) for o in self.obstacles):
            raise ValueError(f"BS position {self.bs_xy} lies inside an obstacle")

    @property
    def bs_pixel(self) -> tuple[int, int]:
        bx, by = self.bs_xy
        r = min(max(int(round(by / self.pixel_spacing_m)), 0), self.rows - 1)
        c = min(max(int(round(bx / self.pixel_spacing_m)), 0), self.cols - 1)
        return r, c

    def meta(self) -> SceneMeta:
        return SceneMeta(self.bs_height_m, self.ue_height_m, self.carrier_hz, self.bs_pixel)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["obstacles"] = tuple(Obstacle(**o) for o in d.get("obstacles", ()))
        d["bs_xy"] = tuple(d.get("bs_xy", cls.bs_xy))
        return cls(**d)


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    pgm1: CkmTensor
    pam1: CkmTensor
    pgm2: CkmTensor
    pam2: CkmTensor
    meta: SceneMeta
    building: np.ndarray  # True inside obstacles
    path2_length_m: np.ndarray  # 2D length of the reflected path, NaN where none
    path2_face: np.ndarray  # index into the face list, -1 where none
    clamp_count: int = 0


@dataclass(frozen=True)
class _Face:
    axis: int  # 0: wall at x = coord, 1: wall at y = coord
    coord: float
    lo: float
    hi: float
    side: float  # +1 / -1: reflecting half-plane is sign(p - coord) == side
    owner: int  # obstacle index, -1 for scene walls


def faces(spec: SceneSpec) -> list[_Face]:
    out = []
    for i, o in enumerate(spec.obstacles):
        out += [
            _Face(0, o.x0, o.y0, o.y1, -1.0, i),
            _Face(0, o.x1, o.y0, o.y1, +1.0, i),
            _Face(1, o.y0, o.x0, o.x1, -1.0, i),
            _Face(1, o.y1, o.x0, o.x1, +1.0, i),
        ]
    sp = spec.pixel_spacing_m
    xmin, ymin = -0.5 * sp, -0.5 * sp
    xmax, ymax = (spec.cols - 0.5) * sp, (spec.rows - 0.5) * sp
    out += [
        _Face(0, xmin, ymin, ymax, +1.0, -1),
        _Face(0, xmax, ymin, ymax, -1.0, -1),
        _Face(1, ymin, xmin, xmax, +1.0, -1),
        _Face(1, ymax, xmin, xmax, -1.0, -1),
    ]
    return out


def segment_hits_box(sx, sy, ex, ey, o: Obstacle) -> np.ndarray:
    """Slab test: does the segment from (sx, sy) to (ex, ey) touch the box?"""
    sx, sy, ex, ey = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (sx, sy, ex, ey)))
    tmin = np.zeros(sx.shape)
    tmax = np.ones(sx.shape)
    ok = np.ones(sx.shape, dtype=bool)
    for s, e, lo, hi in ((sx, ex, o.x0, o.x1), (sy, ey, o.y0, o.y1)):
        d = e - s
        flat = d == 0
        ok &= ~flat | ((s >= lo) & (s <= hi))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - s) / d
            t2 = (hi - s) / d
        tmin = np.where(flat, tmin, np.maximum(tmin, np.minimum(t1, t2)))
        tmax = np.where(flat, tmax, np.minimum(tmax, np.maximum(t1, t2)))
    return ok & (tmin <= tmax)


def _blockages(sx, sy, ex, ey, obstacles, skip=-1):
    n = np.zeros(np.broadcast(sx, sy, ex, ey).shape, dtype=np.int64)
    for i, o in enumerate(obstacles):
        if i != skip:
            n += segment_hits_box(sx, sy, ex, ey, o)
    return n


def _aoa_deg(dx, dy):
    return np.abs(np.degrees(np.arctan2(dy, dx)))


def _friis_or_peak(d3, carrier_hz):
    """Friis gain; zero distance maps to +inf (clamped by the caller)."""
    safe = np.where(d3 > 0, d3, 1.0)
    return np.where(d3 > 0, friis_gain_db(safe, carrier_hz), np.inf)


def generate_scene(spec: SceneSpec) -> Scene:
    sp = spec.pixel_spacing_m
    rows, cols = np.indices((spec.rows, spec.cols), dtype=np.float64)
    px, py = cols * sp, rows * sp
    bx, by = spec.bs_xy
    dh = spec.bs_height_m - spec.ue_height_m
    building = np.zeros(px.shape, dtype=bool)
    for o in spec.obstacles:
        building |= o.contains(px, py)

    # direct path
    d2 = np.hypot(px - bx, py - by)
    g1 = _friis_or_peak(np.sqrt(d2 * d2 + dh * dh), spec.carrier_hz)
    g1 = g1 - spec.blockage_db * _blockages(bx, by, px, py, spec.obstacles)
    a1 = _aoa_deg(px - bx, py - by)

    # single-bounce reflections
    best = np.full(px.shape, -np.inf)
    a2 = np.full(px.shape, ANGLE_SENTINEL_DEG)
    length2 = np.full(px.shape, np.nan)
    face_idx = np.full(px.shape, -1, dtype=np.int64)
    b = (bx, by)
    p = (px, py)
    for fi, f in enumerate(faces(spec)):
        ax, ox = f.axis, 1 - f.axis
        if (b[ax] - f.coord) * f.side <= 0:
            continue  # BS behind this face
        image = [bx, by]
        image[ax] = 2.0 * f.coord - b[ax]
        valid = (p[ax] - f.coord) * f.side > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (f.coord - image[ax]) / (p[ax] - image[ax])
            hit = image[ox] + t * (p[ox] - image[ox])
            valid &= (hit >= f.lo) & (hit <= f.hi)
        wall = np.full(px.shape, f.coord)
        rx, ry = (wall, hit) if ax == 0 else (hit, wall)
        length = np.hypot(px - image[0], py - image[1])
        g = _friis_or_peak(np.sqrt(length * length + dh * dh), spec.carrier_hz) - spec.reflection_loss_db
        n_block = (_blockages(bx, by, rx, ry, spec.obstacles, f.owner)
                   + _blockages(rx, ry, px, py, spec.obstacles, f.owner))
        g = g - spec.blockage_db * n_block
        better = valid & (g > best)
        best = np.where(better, g, best)
        a2 = np.where(better, _aoa_deg(rx - bx, ry - by), a2)
        length2 = np.where(better, length, length2)
        face_idx = np.where(better, fi, face_idx)

    has2 = np.isfinite(best) & ~building
    g2 = np.where(has2, best, GAIN_SENTINEL_DB)
    g1 = np.where(building, GAIN_SENTINEL_DB, g1)
    a1 = np.where(building, ANGLE_SENTINEL_DEG, a1)
    a2 = np.where(has2, a2, ANGLE_SENTINEL_DEG)
    length2 = np.where(has2, length2, np.nan)
    face_idx = np.where(has2, face_idx, -1)

    clamps = 0
    out = []
    for g, covered in ((g1, ~building), (g2, has2)):
        c = np.clip(g, GAIN_MIN_DB, GAIN_MAX_DB)
        clamps += int(np.count_nonzero((c != g) & covered))
        out.append(c)
    g1, g2 = out
    # a clamped-to-floor gain is indistinguishable from the sentinel; keep the maps consistent
    a1 = np.where(g1 <= GAIN_SENTINEL_DB, ANGLE_SENTINEL_DEG, a1)
    a2 = np.where(g2 <= GAIN_SENTINEL_DB, ANGLE_SENTINEL_DEG, a2)

    def t(v, kind):
        return CkmTensor(v, (kind,), sp)

    return Scene(
        spec=spec,
        pgm1=t(g1, ChannelKind.GAIN_DB), pam1=t(a1, ChannelKind.ANGLE_DEG),
        pgm2=t(g2, ChannelKind.GAIN_DB), pam2=t(a2, ChannelKind.ANGLE_DEG),
        meta=spec.meta(), building=building, path2_length_m=length2, path2_face=face_idx,
        clamp_count=clamps,
    )


# --- random scene specs ---------------------------------------------------------------


@dataclass(frozen=True)
class SceneGenConfig:
    """Distribution of random scenes (all lengths in pixels unless noted)."""

    rows: int = 64
    cols: int = 64
    pixel_spacing_m: float = 2.0
    carrier_hz: float = 28e9
    bs_height_m: float = 25.0
    ue_height_m: float = 1.5
    n_obstacles: tuple[int, int] = (3, 6)
    obstacle_size: tuple[int, int] = (4, 14)
    gap: int = 2
    reflection_loss_db: float = 6.0
    blockage_db: float = 25.0

    @classmethod
    def from_file(cls, path) -> "SceneGenConfig":
        text = Path(path).read_text()
        try:
            d = json.loads(text)
        except json.JSONDecodeError:
            d = {}
            for n, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}: line {n}: expected key=value")
                k, v = (s.strip() for s in line.split("=", 1))
                d[k] = [float(x) for x in v.split(",")] if "," in v else float(v)
        fields = cls.__dataclass_fields__
        unknown = set(d) - set(fields)
        if unknown:
            raise ValueError(f"{path}: unknown scene config keys {sorted(unknown)}")
        for k in ("rows", "cols", "gap"):
            if k in d:
                d[k] = int(d[k])
        for k in ("n_obstacles", "obstacle_size"):
            if k in d:
                d[k] = tuple(int(x) for x in d[k])
        return cls(**d)


def random_scene_spec(cfg: SceneGenConfig, seed: int) -> SceneSpec:
    """Non-overlapping random boxes and a BS on a free pixel centre."""
    rng = np.random.Generator(np.random.PCG64(seed))
    sp = cfg.pixel_spacing_m
    n_target = int(rng.integers(cfg.n_obstacles[0], cfg.n_obstacles[1] + 1))
    boxes: list[tuple[int, int, int, int]] = []  # pixel rows/cols inclusive
    for _ in range(200):
        if len(boxes) >= n_target:
            break
        h = int(rng.integers(cfg.obstacle_size[0], cfg.obstacle_size[1] + 1))
        w = int(rng.integers(cfg.obstacle_size[0], cfg.obstacle_size[1] + 1))
        if h >= cfg.rows - 2 or w >= cfg.cols - 2:
            continue
        r0 = int(rng.integers(1, cfg.rows - h - 1))
        c0 = int(rng.integers(1, cfg.cols - w - 1))
        cand = (r0, c0, r0 + h - 1, c0 + w - 1)
        if all(cand[0] > b[2] + cfg.gap or cand[2] < b[0] - cfg.gap or cand[1] > b[3] + cfg.gap
               or cand[3] < b[1] - cfg.gap for b in boxes):
            boxes.append(cand)
    obstacles = tuple(
        Obstacle(c0 * sp - 0.25 * sp, r0 * sp - 0.25 * sp, c1 * sp + 0.25 * sp, r1 * sp + 0.25 * sp,
                 float(rng.uniform(10.0, 40.0)))
        for r0, c0, r1, c1 in boxes
    )
    occupied = np.zeros((cfg.rows, cfg.cols), dtype=bool)
    for r0, c0, r1, c1 in boxes:
        occupied[max(r0 - 1, 0):r1 + 2, max(c0 - 1, 0):c1 + 2] = True
    free = np.flatnonzero(~occupied)
    br, bc = divmod(int(free[rng.integers(len(free))]), cfg.cols)
    return SceneSpec(
        rows=cfg.rows, cols=cfg.cols, pixel_spacing_m=sp, carrier_hz=cfg.carrier_hz,
        bs_xy=(bc * sp, br * sp), bs_height_m=cfg.bs_height_m, ue_height_m=cfg.ue_height_m,
        obstacles=obstacles, reflection_loss_db=cfg.reflection_loss_db, blockage_db=cfg.blockage_db,
        seed=seed,
    )


def random_scene(cfg: SceneGenConfig, seed: int) -> Scene:
    return generate_scene(random_scene_spec(cfg, seed))


__all__ = [
    "Obstacle", "SceneSpec", "Scene", "SceneGenConfig", "generate_scene", "random_scene_spec",
    "random_scene", "faces", "segment_hits_box",
]
