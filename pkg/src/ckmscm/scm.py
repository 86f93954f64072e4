"""Spatial correlation matrices of a uniform linear array.

A location's correlation matrix is built from a handful of dominant paths,
each described by its average power and angle of arrival.  With independent
uniform phases the cross terms average out and the matrix is the power
weighted sum of steering-vector outer products, which for a ULA is Hermitian
Toeplitz with lag sequence ``r(k) = sum_l p_l exp(j 2 pi (d/lambda) k cos th_l)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

#: Identifier of the bit generator used for every seeded draw in the package.
RNG_ALGORITHM = "numpy.random.PCG64"

PSD_EPS = 1e-10


@dataclass(frozen=True)
class SteeringConfig:
    """ULA geometry: antenna count and element spacing in wavelengths."""

    n_antennas: int = 64
    spacing_ratio: float = 0.5

    def __post_init__(self):
        if int(self.n_antennas) != self.n_antennas or self.n_antennas < 1:
            raise ValueError(f"n_antennas must be a positive integer, got {self.n_antennas}")
        if not (self.spacing_ratio > 0 and math.isfinite(self.spacing_ratio)):
            raise ValueError(f"spacing_ratio must be positive, got {self.spacing_ratio}")


@dataclass(frozen=True)
class PathSet:
    """Per-path linear powers and angles of arrival (radians)."""

    powers: tuple[float, ...]
    aoas_rad: tuple[float, ...]

    def __post_init__(self):
        powers = tuple(float(p) for p in self.powers)
        aoas = tuple(float(a) for a in self.aoas_rad)
        if len(powers) == 0 or len(powers) != len(aoas):
            raise ValueError("a PathSet needs at least one path and one angle per power")
        if any(not (p >= 0 and math.isfinite(p)) for p in powers):
            raise ValueError(f"path powers must be finite and >= 0, got {powers}")
        if any(not math.isfinite(a) for a in aoas):
            raise ValueError("path angles must be finite")
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "aoas_rad", aoas)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "PathSet":
        pairs = list(pairs)
        return cls(tuple(p for p, _ in pairs), tuple(a for _, a in pairs))

    def __len__(self):
        return len(self.powers)


def fold_aoa(theta):
    """Fold angles onto [0, pi]; a ULA cannot tell theta from -theta."""
    theta = np.abs(np.mod(theta, 2.0 * np.pi))
    return np.where(theta > np.pi, 2.0 * np.pi - theta, theta)


def db_to_linear(gain_db):
    return np.power(10.0, np.asarray(gain_db, dtype=np.float64) / 10.0)


def steering_vector(cfg: SteeringConfig, aoa_rad: float) -> np.ndarray:
    if not math.isfinite(aoa_rad):
        raise ValueError("aoa_rad must be finite")
    n = np.arange(cfg.n_antennas)
    return np.exp(1j * 2.0 * np.pi * cfg.spacing_ratio * n * math.cos(aoa_rad))


def lag_sequence(cfg: SteeringConfig, paths: PathSet) -> np.ndarray:
    """Return r(k) for k = 0 .. N-1; r(-k) is its conjugate."""
    k = np.arange(cfg.n_antennas)
    p = np.asarray(paths.powers)
    c = np.cos(np.asarray(paths.aoas_rad))
    phase = 2.0 * np.pi * cfg.spacing_ratio * np.outer(c, k)
    r = (p[:, None] * np.exp(1j * phase)).sum(axis=0)
    r[0] = p.sum()
    return r


def toeplitz_from_lags(r: np.ndarray) -> np.ndarray:
    """Hermitian Toeplitz matrix with R[m, n] = r(m - n)."""
    n = len(r)
    idx = np.arange(n)[:, None] - np.arange(n)[None, :]
    out = np.where(idx >= 0, r[np.abs(idx)], np.conj(r[np.abs(idx)]))
    return out.astype(np.complex128)


def corr_from_paths(cfg: SteeringConfig, paths: PathSet) -> np.ndarray:
    """Closed-form correlation matrix via its elementwise lag form.

    Hermitian symmetry and the Toeplitz structure hold bit-for-bit because
    every entry is read from one lag sequence and its conjugate.
    """
    return toeplitz_from_lags(lag_sequence(cfg, paths))


def corr_outer_sum(cfg: SteeringConfig, paths: PathSet) -> np.ndarray:
    """Same matrix as :func:`corr_from_paths`, summed as explicit outer products."""
    R = np.zeros((cfg.n_antennas, cfg.n_antennas), dtype=np.complex128)
    for p, th in zip(paths.powers, paths.aoas_rad):
        a = steering_vector(cfg, th)
        R += p * np.outer(a, a.conj())
    return R


def monte_carlo_corr(
    cfg: SteeringConfig,
    paths: PathSet,
    n_draws: int,
    seed: int,
    chunk: int = 16384,
) -> np.ndarray:
    """Sample average of h h^H with independent uniform path phases.

    Draws are generated and reduced chunk by chunk in a fixed order, so the
    result depends only on (inputs, seed, chunk).
    """
    if int(n_draws) != n_draws or n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    rng = np.random.Generator(np.random.PCG64(seed))
    A = np.stack([steering_vector(cfg, th) for th in paths.aoas_rad])  # (L, N)
    amp = np.sqrt(np.asarray(paths.powers))
    acc = np.zeros((cfg.n_antennas, cfg.n_antennas), dtype=np.complex128)
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=(m, len(paths)))
        H = (amp * np.exp(1j * phi)) @ A  # (m, N)
        acc += H.T @ H.conj()
        done += m
    R = acc / n_draws
    return 0.5 * (R + R.conj().T)


def frobenius_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """tr(a b) as sum_{m,n} a[m, n] b[n, m], without forming the product."""
    return complex(np.sum(a * b.T))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError(f"cosine_similarity needs equal square matrices, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine_similarity is undefined for a zero matrix")
    tr = frobenius_inner(a, b)
    return tr.real / (na * nb)


def check_corr_matrix(R: np.ndarray, n_paths: int | None = None, eps: float = PSD_EPS) -> list[str]:
    """Return the list of violated structural properties (empty when valid)."""
    problems = []
    n = R.shape[0]
    if not np.array_equal(R, R.conj().T):
        problems.append("not Hermitian")
    tr = float(np.trace(R).real)
    w = np.linalg.eigvalsh(R)
    if w[0] < -eps * max(tr, 0.0):
        problems.append(f"not PSD (min eigenvalue {w[0]:.3e})")
    if n > 1 and np.max(np.abs(R[1:, 1:] - R[:-1, :-1])) > 1e-12 * max(1.0, np.abs(R).max()):
        problems.append("not Toeplitz")
    if n_paths is not None and n_paths < n:
        s = np.linalg.svd(R, compute_uv=False)
        if s[0] > 0 and np.any(s[n_paths:] >= 1e-9 * s[0]):
            problems.append(f"rank exceeds {n_paths}")
    return problems


def random_pathset(rng: np.random.Generator, n_paths: int) -> PathSet:
    return PathSet(
        tuple(rng.uniform(0.05, 2.0, n_paths)),
        tuple(rng.uniform(0.0, np.pi, n_paths)),
    )

