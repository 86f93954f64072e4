import math

import numpy as np
import pytest

from ckmscm.errors import NoCoverageError
from ckmscm.maps import ChannelKind, CkmTensor
from ckmscm.priors import (SceneMeta, bs_map, building_map, detect_bs, distance_map, friis_gain_db, los_map,
                           make_priors)

from oracles import friis_db

G = ChannelKind.GAIN_DB


def test_friis_matches_oracle():
    for d in (1.0, 7.3, 250.0):
        assert friis_gain_db(d, 28e9) == pytest.approx(friis_db(d, 28e9), abs=1e-12)


def test_friis_doubling():
    d = np.array([1.0, 2.0, 4.0, 8.0])
    g = friis_gain_db(d, 3.5e9)
    np.testing.assert_allclose(np.diff(g), -20 * math.log10(2), atol=1e-12)
    assert -20 * math.log10(2) == pytest.approx(-6.0206, abs=1e-4)


@pytest.mark.parametrize("d,f", [(0.0, 1e9), (-1.0, 1e9), (1.0, 0.0)])
def test_friis_rejects(d, f):
    with pytest.raises(ValueError):
        friis_gain_db(d, f)


def test_detect_bs_and_tie_break():
    g = np.full((4, 5), -200.0)
    g[2, 3] = -60
    g[1, 4] = -60
    assert detect_bs(CkmTensor(g, (G,))) == (1, 4)
    with pytest.raises(NoCoverageError):
        detect_bs(CkmTensor(np.full((3, 3), -250.0), (G,)))


def test_bs_map_fixed_point():
    for bs in [(0, 0), (3, 7), (9, 9)]:
        m = bs_map(10, 10, bs)
        assert np.unravel_index(np.argmax(m.channel(0)), (10, 10)) == bs
        assert m.channel(0)[bs] == 1.0
        assert detect_bs(CkmTensor(m.channel(0) * 100 - 150, (G,))) == bs
    with pytest.raises(ValueError):
        bs_map(4, 4, (4, 0))


def test_bs_map_gaussian_value():
    m = bs_map(5, 5, (2, 2), sigma_sq=2.0)
    assert m.channel(0)[2, 4] == pytest.approx(math.exp(-4 / 4))


def free_space_map(shape, bs, meta, spacing=1.0):
    d = distance_map(shape, bs, spacing, meta.bs_height_m - meta.ue_height_m)
    return friis_gain_db(d, meta.carrier_hz)


def test_los_free_space_is_all_los_and_monotone_in_tolerance():
    meta = SceneMeta(10.0, 1.5, 28e9, (3, 3))
    g = free_space_map((8, 8), (3, 3), meta)
    assert los_map(CkmTensor(g, (G,)), meta).channel(0).all()
    noisy = g + np.random.Generator(np.random.PCG64(0)).uniform(-6, 0, g.shape)
    counts = [los_map(CkmTensor(noisy, (G,)), meta, tol).channel(0).sum() for tol in (0.5, 1, 2, 4, 8)]
    assert counts == sorted(counts)
    assert counts[-1] == 64


def test_los_excludes_buildings_and_zero_distance_rule():
    meta = SceneMeta(1.5, 1.5, 28e9, (1, 1))
    g = np.full((3, 3), -100.0)
    g[0, 0] = -250
    los = los_map(CkmTensor(g, (G,)), meta).channel(0)
    assert los[1, 1] == 1 and los[0, 0] == 0


def test_building_map_threshold_and_idempotent():
    g = np.array([[-250, -246.1, -245.9, -60.0]])
    b = building_map(CkmTensor(g, (G,)))
    np.testing.assert_array_equal(b.channel(0), [[0, 0, 1, 1]])
    np.testing.assert_array_equal(building_map(b).data, b.data)
    with pytest.raises(ValueError):
        building_map(b, 2.0)


def test_make_priors_bundle(small_scene):
    meta = SceneMeta(25, 1.5, 28e9)
    pb = make_priors(small_scene.pgm1, meta)
    assert pb.bs_pixel == detect_bs(small_scene.pgm1)
    assert pb.building.channel(0).sum() < 32 * 32


def test_scene_meta_validation():
    with pytest.raises(ValueError):
        SceneMeta(float("nan"), 1.0)
    with pytest.raises(ValueError):
        SceneMeta(10, 1, carrier_hz=0)
