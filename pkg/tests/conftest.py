import numpy as np
import pytest

from ckmscm import _backend
from ckmscm.synth import Obstacle, SceneSpec, generate_scene

BACKENDS = ["numpy"] + (["cython"] if _backend.compiled is not None else [])


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def small_scene():
    spec = SceneSpec(rows=32, cols=32, pixel_spacing_m=2.0, bs_xy=(20.0, 30.0),
                     obstacles=(Obstacle(30, 10, 44, 22), Obstacle(6, 40, 16, 56)))
    return generate_scene(spec)


# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance line; a test that raises before recording stays FAIL."""
    n = int(request.node.get_closest_marker("criterion").args[0])
    ACCEPTANCE[n] = (False, "did not complete")

    def record(ok: bool, detail: str):
        ACCEPTANCE[n] = (bool(ok), detail)
        assert ok, detail

    return record


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
