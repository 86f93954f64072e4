"""Built-in checks run by ``ckmscm selftest``."""

from __future__ import annotations

import time

import numpy as np

from . import _backend
from .nn import autograd as ag
from .nn.gradcheck import check_gradients
from .scm import SteeringConfig, corr_from_paths, corr_outer_sum, monte_carlo_corr, random_pathset

GRAD_TOL = 1e-4


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _bn(x, training=True):
    C = x.shape[1]
    return {"x": x, "gamma": 1.0 + 0.1 * np.arange(C), "beta": 0.05 * np.arange(C)}


def gradient_cases(seed: int = 0) -> dict[str, tuple]:
    """name -> (build, inputs); every differentiable op on small random shapes."""
    r = _rng(seed)

    def n(*shape):
        return r.standard_normal(shape)

    cases = {}
    for k, d in ((1, 1), (3, 1), (3, 2), (3, 5)):
        cases[f"conv2d_k{k}_d{d}"] = (
            lambda t, d=d: ag.conv2d(t["x"], t["w"], t["b"], d),
            {"x": n(2, 3, 7, 6), "w": 0.3 * n(4, 3, k, k), "b": n(4)},
        )
    cases["prelu"] = (lambda t: ag.prelu(t["x"], t["a"]),
                      {"x": n(2, 3, 4, 4) + 0.01, "a": np.array([0.25, 0.1, -0.3])})

    def bn_build(t):
        C = t["x"].shape[1]
        return ag.batchnorm2d(t["x"], t["gamma"], t["beta"], np.zeros(C), np.ones(C), True)

    cases["batchnorm2d_train"] = (bn_build, _bn(n(3, 2, 4, 3)))
    cases["mha_4heads"] = (
        lambda t: ag.mha_spatial(t["x"], t["wq"], t["bq"], t["wk"], t["bk"], t["wv"], t["bv"], t["wo"], t["bo"], 4),
        {"x": n(2, 8, 3, 3), **{f"w{p}": 0.4 * n(8, 8) for p in "qkvo"}, **{f"b{p}": 0.1 * n(8) for p in "qkvo"}},
    )
    cases["pixel_shuffle"] = (lambda t: ag.pixel_shuffle(t["x"], 2), {"x": n(2, 8, 3, 3)})
    target = n(2, 2, 3, 3)
    cases["mse_loss"] = (lambda t: ag.mse_loss(t["x"], target), {"x": n(2, 2, 3, 3)})
    cases["avg_pool_upsample"] = (lambda t: ag.upsample_nearest(ag.avg_pool2d(t["x"], 2), 2), {"x": n(1, 2, 4, 4)})
    cases["concat_add"] = (lambda t: ag.add(ag.concat([t["x"], t["y"]], 1), t["z"]),
                           {"x": n(1, 2, 3, 3), "y": n(1, 1, 3, 3), "z": n(1, 3, 3, 3)})
    return cases


def run_gradient_checks(seed: int = 0, tol: float = GRAD_TOL):
    lines, ok = [], True
    for name, (build, inputs) in gradient_cases(seed).items():
        errs = check_gradients(build, inputs, seed=seed)
        worst = max(errs.values())
        good = worst < tol
        ok &= good
        lines.append(f"{'PASS' if good else 'FAIL'} grad {name}: max rel err {worst:.2e}")
    return ok, lines


def run_oracle_checks(seed: int = 0):
    lines, ok = [], True
    rng = _rng(seed)
    worst = 0.0
    for _ in range(100):
        cfg = SteeringConfig(int(rng.integers(1, 17)), float(rng.uniform(0.1, 1.0)))
        ps = random_pathset(rng, int(rng.integers(1, 4)))
        worst = max(worst, float(np.abs(corr_from_paths(cfg, ps) - corr_outer_sum(cfg, ps)).max()))
    good = worst <= 1e-12
    ok &= good
    lines.append(f"{'PASS' if good else 'FAIL'} closed form vs outer sum: max abs {worst:.2e}")

    if _backend.compiled is not None:
        fb, cp = _backend.fallback, _backend.compiled
        src = rng.standard_normal((9, 7, 2))
        d1 = float(np.abs(fb.bicubic_upscale(src, 2, False) - cp.bicubic_upscale(src, 2, False)).max())
        obs = rng.standard_normal((6, 5, 2))
        d2 = float(np.abs(fb.knn_complete(obs, 0, 0, 2, 12, 10, 4, 2.0) - cp.knn_complete(obs, 0, 0, 2, 12, 10, 4, 2.0)).max())
        pa, ta, pb, tb = rng.uniform(0.1, 1, (50, 2)), rng.uniform(0, np.pi, (50, 2)), rng.uniform(0.1, 1, (50, 2)), rng.uniform(0, np.pi, (50, 2))
        d3 = float(np.abs(fb.toeplitz_cosine(pa, ta, pb, tb, 16, 0.5) - cp.toeplitz_cosine(pa, ta, pb, tb, 16, 0.5)).max())
        good = max(d1, d2, d3) <= 1e-12
        ok &= good
        lines.append(f"{'PASS' if good else 'FAIL'} compiled vs numpy kernels: bicubic {d1:.1e}, knn {d2:.1e}, cosine {d3:.1e}")
    else:
        lines.append("SKIP compiled vs numpy kernels: compiled extension not built")

    # Toeplitz cosine kernel against explicit matrices
    cfg = SteeringConfig(16, 0.5)
    pa, ta = rng.uniform(0.1, 1, (20, 2)), rng.uniform(0, np.pi, (20, 2))
    pb, tb = rng.uniform(0.1, 1, (20, 2)), rng.uniform(0, np.pi, (20, 2))
    fast = _backend.kernels.toeplitz_cosine(pa, ta, pb, tb, 16, 0.5)
    worst = 0.0
    for i in range(20):
        A = _explicit(cfg, pa[i], ta[i])
        B = _explicit(cfg, pb[i], tb[i])
        direct = np.real(np.trace(A @ B)) / (np.linalg.norm(A) * np.linalg.norm(B))
        worst = max(worst, abs(direct - fast[i]))
    good = worst <= 1e-12
    ok &= good
    lines.append(f"{'PASS' if good else 'FAIL'} lag-domain cosine vs explicit trace: max abs {worst:.2e}")
    return ok, lines


def _explicit(cfg, p, th):
    n = np.arange(cfg.n_antennas)
    A = np.zeros((cfg.n_antennas, cfg.n_antennas), complex)
    for pk, tk in zip(p, th):
        a = np.exp(2j * np.pi * cfg.spacing_ratio * n * np.cos(tk))
        A += pk * np.outer(a, a.conj())
    return A


def run_monte_carlo(seed: int = 0, n_configs: int = 5, n_draws: int = 100_000, tol: float = 0.02):
    rng = _rng(seed)
    worst = 0.0
    for i in range(n_configs):
        cfg = SteeringConfig(int(rng.integers(2, 9)), 0.5)
        ps = random_pathset(rng, int(rng.integers(1, 4)))
        R = corr_from_paths(cfg, ps)
        M = monte_carlo_corr(cfg, ps, n_draws, seed + i)
        worst = max(worst, float(np.linalg.norm(M - R) / np.linalg.norm(R)))
    good = worst < tol
    return good, [f"{'PASS' if good else 'FAIL'} Monte Carlo vs closed form ({n_configs} configs, "
                  f"{n_draws} draws): max rel Frobenius err {worst:.3%}"]


def run_selftest(quick: bool = False) -> tuple[bool, list[str]]:
    t0 = time.perf_counter()
    ok = True
    lines = [f"kernel backend: {_backend.NAME}"]
    for fn in (run_gradient_checks, run_oracle_checks):
        good, ls = fn()
        ok &= good
        lines += ls
    good, ls = run_monte_carlo(n_configs=2 if quick else 5, n_draws=20_000 if quick else 100_000,
                               tol=0.05 if quick else 0.02)
    ok &= good
    lines += ls
    lines.append(f"{'OK' if ok else 'FAILED'} in {time.perf_counter() - t0:.1f} s")
    return ok, lines
