"""Central finite-difference checks for the autograd ops."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autograd as ag

STEP = 1e-5


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 0.0) -> float:
    """||a - b|| / max(||a||, ||b||, floor); 0 when everything vanishes."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_gradients(build: Callable[[dict], ag.Tensor], inputs: dict[str, np.ndarray], *, step: float = STEP,
                    seed: int = 0, names=None) -> dict[str, float]:
    """Compare analytic and numeric gradients of ``sum(build(inputs) * R)``.

    ``R`` is a fixed random projection so every output element contributes.
    Returns the relative error per input (float64 throughout).
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    names = list(arrays) if names is None else list(names)

    def run(requires_grad):
        ts = {k: ag.Tensor(v, requires_grad and k in names, k) for k, v in arrays.items()}
        return ts, build(ts)

    ts, out = run(True)
    proj = np.random.Generator(np.random.PCG64(seed)).standard_normal(out.shape)
    out.backward(proj)
    analytic = {k: (ts[k].grad if ts[k].grad is not None else np.zeros_like(arrays[k])) for k in names}

    def value():
        return float(np.sum(run(False)[1].data * proj))

    numeric = {}
    for k in names:
        arr = arrays[k]
        num = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value()
            flat[i] = orig - step
            down = value()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * step)
        numeric[k] = num
    # Gradients that vanish analytically (attention key bias, which softmax
    # cancels) would otherwise divide rounding noise by itself.
    floor = 1e-3 * max([np.linalg.norm(g) for g in analytic.values()] + [1e-300])
    return {k: relative_error(analytic[k], numeric[k], floor) for k in names}
