import numpy as np
import pytest

from ckmscm import _backend
from ckmscm.scm import SteeringConfig, PathSet, corr_from_paths, cosine_similarity

needs_compiled = pytest.mark.skipif(_backend.compiled is None, reason="compiled kernels not built")


def test_get_backend():
    assert _backend.get() is _backend.kernels
    assert _backend.get("numpy") is _backend.fallback
    with pytest.raises(ValueError):
        _backend.get("fortran")


def test_toeplitz_cosine_matches_dense(rng, backend):
    k = _backend.get(backend)
    P = 12
    pa, ta = rng.uniform(0.01, 1, (P, 2)), rng.uniform(0, np.pi, (P, 2))
    pb, tb = rng.uniform(0.01, 1, (P, 2)), rng.uniform(0, np.pi, (P, 2))
    fast = k.toeplitz_cosine(pa, ta, pb, tb, 10, 0.5)
    cfg = SteeringConfig(10, 0.5)
    for i in range(P):
        A = corr_from_paths(cfg, PathSet(tuple(pa[i]), tuple(ta[i])))
        B = corr_from_paths(cfg, PathSet(tuple(pb[i]), tuple(tb[i])))
        assert fast[i] == pytest.approx(cosine_similarity(A, B), abs=1e-12)


def test_toeplitz_cosine_zero_power_is_nan(backend):
    k = _backend.get(backend)
    z = np.zeros((1, 2))
    out = k.toeplitz_cosine(z, z, np.ones((1, 2)), z, 4, 0.5)
    assert np.isnan(out[0])


@needs_compiled
def test_backends_agree(rng):
    fb, cp = _backend.fallback, _backend.compiled
    src = rng.standard_normal((7, 9, 3))
    for center in (False, True):
        np.testing.assert_allclose(cp.bicubic_upscale(src, 2, center), fb.bicubic_upscale(src, 2, center),
                                   atol=1e-12, rtol=0)
    obs = rng.standard_normal((5, 4, 2))
    np.testing.assert_allclose(cp.knn_complete(obs, 1, 0, 2, 10, 8, 4, 2.0),
                               fb.knn_complete(obs, 1, 0, 2, 10, 8, 4, 2.0), atol=1e-12, rtol=0)
