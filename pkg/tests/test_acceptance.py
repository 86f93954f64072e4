"""Acceptance criteria 1-11, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line that conftest prints at the end of the
run.  Criteria 7 and 9 share one set of trained desk-scale models.
"""

import time

import numpy as np
import pytest

from ckmscm import _backend
from ckmscm.baselines import bicubic_upscale_array, knn_complete
from ckmscm.dataset import build_pairs, from_synthetic, full_stack
from ckmscm.evalkit import cosine_map, masked_rmse, scm_map
from ckmscm.maps import (ANGLE_SENTINEL_DEG, ChannelKind, CkmTensor, decode_angle_array, decode_gain_array,
                         encode_angle_array, encode_gain_array)
from ckmscm.nn.gradcheck import check_gradients
from ckmscm.nn.model import PRIMARY_SPEC, SECONDARY_SPEC, ModelSpec, forward, init_params
from ckmscm.nn.train import TrainSpec, train
from ckmscm.pipeline import LoadedModel, complete_tensor, model_complete, model_kinds
from ckmscm.priors import SceneMeta, bs_map, building_map, detect_bs, friis_gain_db, los_map
from ckmscm.sampling import SamplingGrid, observation_consistency, sample
from ckmscm.scm import (SteeringConfig, check_corr_matrix, corr_from_paths, corr_outer_sum, monte_carlo_corr,
                        random_pathset)
from ckmscm.selftest import gradient_cases
from ckmscm.synth import SceneGenConfig, random_scene

from oracles import bicubic_reference, corr_reference

GRID = SamplingGrid(2)
DESK_SEEDS = (0, 1, 2)
DESK_ITERATIONS = 5000
DESK_SPEC = ModelSpec(in_channels=5, base_channels=16, n_res_blocks=4, msff_after_blocks=(2,), attn_pool=4,
                      head_kernel=3, tail_kernel=3, input_residual=True)
DESK_TRAIN = dict(batch_size=8, lr_initial=1e-3, max_iterations=DESK_ITERATIONS, epoch_iterations=250,
                  keep_best=True)


def _gen(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _random_cfg(r, n_max=8):
    cfg = SteeringConfig(int(r.integers(1, n_max + 1)), float(r.uniform(0.1, 1.0)))
    return cfg, random_pathset(r, int(r.integers(1, 4)))


# --- 1-4: correlation model and gradients --------------------------------------------------------


@pytest.mark.criterion(1)
@pytest.mark.slow
def test_c01_monte_carlo_matches_analytic(verdict):
    r = _gen(101)
    t = time.perf_counter()
    worst = 0.0
    for i in range(20):
        cfg, paths = _random_cfg(r)
        R = corr_from_paths(cfg, paths)
        M = monte_carlo_corr(cfg, paths, 100_000, seed=i)
        worst = max(worst, np.linalg.norm(M - R) / np.linalg.norm(R))
    dt = time.perf_counter() - t
    verdict(worst < 0.02 and dt < 30, f"max rel Frobenius err {worst:.4f} (< 0.02), {dt:.1f} s (< 30)")


@pytest.mark.criterion(2)
def test_c02_closed_form_equals_outer_sum(verdict):
    r = _gen(202)
    t = time.perf_counter()
    worst = 0.0
    cases = [_random_cfg(r) for _ in range(100)]
    for cfg, paths in cases:
        worst = max(worst, np.abs(corr_from_paths(cfg, paths) - corr_outer_sum(cfg, paths)).max())
    dt = time.perf_counter() - t
    # independent loop oracle on top of the package's two forms
    oracle = max(np.abs(corr_from_paths(c, p) - corr_reference(c.n_antennas, c.spacing_ratio, p.powers,
                                                              p.aoas_rad)).max() for c, p in cases[:20])
    verdict(worst <= 1e-12 and oracle <= 1e-12 and dt < 1,
            f"max abs diff {worst:.1e}, oracle {oracle:.1e} (<= 1e-12), {dt:.3f} s (< 1)")


@pytest.mark.criterion(3)
def test_c03_structure_suite(verdict):
    r = _gen(303)
    t = time.perf_counter()
    bad = []
    for i in range(1000):
        cfg, paths = _random_cfg(r, n_max=16)
        R = corr_from_paths(cfg, paths)
        problems = check_corr_matrix(R, len(paths))
        if abs(np.trace(R).real - cfg.n_antennas * sum(paths.powers)) > 1e-9 * cfg.n_antennas * sum(paths.powers):
            problems.append("trace")
        if problems:
            bad.append((i, problems))
    dt = time.perf_counter() - t
    verdict(not bad and dt < 10, f"{len(bad)} of 1000 cases violate structure, {dt:.2f} s (< 10)")


@pytest.mark.criterion(4)
def test_c04_gradient_gate(verdict):
    t = time.perf_counter()
    worst, names = 0.0, set()
    for seed in (0, 1, 2):
        for name, (build, inputs) in gradient_cases(seed).items():
            names.add(name)
            worst = max(worst, max(check_gradients(build, inputs, seed=seed).values()))
    dt = time.perf_counter() - t
    covered = {"conv2d_k3_d2", "conv2d_k3_d5", "mha_4heads"} <= names
    verdict(worst < 1e-4 and covered and dt < 120,
            f"{len(names)} ops x 3 seeds, max rel err {worst:.1e} (< 1e-4), {dt:.1f} s (< 120)")


# --- 5-6: architecture and overfitting --------------------------------------------------------


@pytest.mark.criterion(5)
@pytest.mark.slow
def test_c05_architecture_conformance(verdict):
    facts = []
    ok = (PRIMARY_SPEC.in_channels, PRIMARY_SPEC.n_res_blocks, PRIMARY_SPEC.base_channels, PRIMARY_SPEC.n_heads,
          PRIMARY_SPEC.msff_after_blocks, PRIMARY_SPEC.upscale) == (5, 16, 64, 4, (4, 8, 12), 2)
    ok &= (SECONDARY_SPEC.in_channels, SECONDARY_SPEC.n_res_blocks, SECONDARY_SPEC.base_channels) == (4, 18, 128)
    for label, spec in (("primary", PRIMARY_SPEC), ("secondary", SECONDARY_SPEC)):
        x = _gen(5).random((1, spec.in_channels, 64, 64)).astype(np.float32)
        store = init_params(spec, 0)
        t = time.perf_counter()
        y = forward(store, spec, x, attn_pool=2)
        dt = time.perf_counter() - t
        ok &= y.shape == (1, 2, 128, 128) and bool(np.isfinite(y).all()) and dt < 60
        facts.append(f"{label} -> {y.shape[1:]} in {dt:.1f} s")
    verdict(ok, "; ".join(facts) + " (< 60 s each, attn_pool 2)")


@pytest.mark.criterion(6)
@pytest.mark.slow
def test_c06_overfit_tiny_model(verdict):
    cfg = SceneGenConfig(rows=32, cols=32, n_obstacles=(1, 3), obstacle_size=(3, 8))
    X, Y, _ = build_pairs([from_synthetic(random_scene(cfg, s), str(s)) for s in range(4)], grid=GRID)
    assert X.shape == (4, 5, 16, 16) and Y.shape == (4, 2, 32, 32)
    spec = ModelSpec(in_channels=5, base_channels=16, n_res_blocks=4, msff_after_blocks=(2,))
    tspec = TrainSpec(batch_size=4, lr_initial=1e-3, max_iterations=500, seed=0, epoch_iterations=50)

    def mse(store):
        return float(np.mean((forward(store, spec, X) - Y) ** 2))

    t = time.perf_counter()
    initial = mse(init_params(spec, tspec.seed))
    result = train(spec, X, Y, tspec)
    final = mse(result.store)
    dt = time.perf_counter() - t
    prefix = TrainSpec(**{**tspec.__dict__, "max_iterations": 20})
    again = [train(spec, X, Y, prefix).losses for _ in range(2)]
    repeatable = np.array_equal(again[0], again[1]) and np.array_equal(again[0], result.losses[:20])
    ratio = final / initial
    verdict(ratio < 0.01 and repeatable and dt < 300,
            f"final/initial MSE {ratio:.4f} (< 0.01), repeatable={repeatable}, {dt:.0f} s (< 300)")


# --- 7 and 9: desk-scale trained models ----------------------------------------------------------


def _pooled(sq_sum, n):
    return np.sqrt(sq_sum / n)


@pytest.fixture(scope="module")
def desk():
    """Three seeds of the desk-scale model plus held-out scenes (32x32 -> 64x64).

    Training keeps the parameters with the lowest loss on 32 validation scenes,
    which are disjoint from both the training and the test scenes.
    """
    cfg = SceneGenConfig()
    t = time.perf_counter()
    train_scenes = [from_synthetic(random_scene(cfg, i), f"train{i}") for i in range(256)]
    val_scenes = [from_synthetic(random_scene(cfg, 20_000 + i), f"val{i}") for i in range(32)]
    test_scenes = [from_synthetic(random_scene(cfg, 10_000 + i), f"test{i}") for i in range(64)]
    X, Y, _ = build_pairs(train_scenes, grid=GRID)
    val = build_pairs(val_scenes, grid=GRID)[:2]
    kinds = model_kinds(DESK_SPEC, 1)
    models = {}
    for seed in DESK_SEEDS:
        r = train(DESK_SPEC, X, Y, TrainSpec(seed=seed, **DESK_TRAIN), val=val)
        models[seed] = LoadedModel(DESK_SPEC, r.store, kinds)
    lr = [sample(full_stack(s, 1), GRID) for s in test_scenes]
    return {"models": models, "test": test_scenes, "lr": lr, "train_seconds": time.perf_counter() - t}


def _primary_truth(scene):
    return CkmTensor(np.concatenate([scene.pgm1.data, scene.pam1.data], axis=2),
                     (ChannelKind.GAIN_DB, ChannelKind.ANGLE_DEG), scene.pgm1.pixel_spacing_m)


def _bicubic(lr_stack, full_dims):
    return complete_tensor(lr_stack.select((lr_stack.channels[0], lr_stack.channels[1])), "bicubic", GRID,
                           full_dims)


@pytest.mark.criterion(7)
@pytest.mark.slow
def test_c07_beats_bicubic_at_desk_scale(desk, verdict):
    t = time.perf_counter()
    sq = {"bicubic": np.zeros(2)} | {s: np.zeros(2) for s in DESK_SEEDS}
    n = 0
    for scene, lr in zip(desk["test"], desk["lr"]):
        truth = _primary_truth(scene)
        building = building_map(scene.pgm1)
        m = int(building.data.sum())
        n += m
        sq["bicubic"] += m * masked_rmse(_bicubic(lr, truth.shape[:2]), truth, building) ** 2
        for s in DESK_SEEDS:
            sq[s] += m * masked_rmse(model_complete(desk["models"][s], lr, truth.shape[:2]), truth, building) ** 2
    base = _pooled(sq["bicubic"], n)
    wins = 0
    parts = [f"bicubic {base[0]:.3f} dB/{base[1]:.3f} deg"]
    for s in DESK_SEEDS:
        got = _pooled(sq[s], n)
        wins += bool(got[0] < base[0] and got[1] < base[1])
        parts.append(f"seed {s} {got[0]:.3f}/{got[1]:.3f}")
    total = desk["train_seconds"] + time.perf_counter() - t
    verdict(wins >= 2 and total < 7200, f"{wins}/3 seeds beat bicubic on both; " + ", ".join(parts)
            + f"; {total / 60:.0f} min (< 120)")


def _completed_maps(desk, i):
    """Path 1 from the seed-0 model, path 2 by bicubic (the model covers the primary path)."""
    scene, lr = desk["test"][i], desk["lr"][i]
    full = scene.pgm1.shape[:2]
    p1 = model_complete(desk["models"][DESK_SEEDS[0]], lr, full)
    lr2 = sample(CkmTensor(np.concatenate([scene.pgm2.data, scene.pam2.data], axis=2),
                           (ChannelKind.GAIN_DB, ChannelKind.ANGLE_DEG), scene.pgm2.pixel_spacing_m), GRID)
    p2 = _bicubic(lr2, full)
    return [CkmTensor(t.data[:, :, [k]], (t.channels[k],), t.pixel_spacing_m) for t in (p1, p2) for k in (0, 1)]


@pytest.mark.criterion(9)
@pytest.mark.slow
def test_c09_cosine_degrades_with_angle_noise(desk, verdict):
    levels = (0.0, 2.0, 5.0, 10.0)
    cfg = SteeringConfig(64, 0.5)
    means = {s: [] for s in (0, 1, 2)}
    clean = []
    fields = []
    for i, scene in enumerate(desk["test"]):
        building = building_map(scene.pgm1)
        truth = scm_map(scene.pgm1, scene.pam1, scene.pgm2, scene.pam2, cfg, building)
        g1, a1, g2, a2 = _completed_maps(desk, i)
        fields.append((truth, building, g1, a1, g2, a2))
        clean.append(cosine_map(scm_map(g1, a1, g2, a2, cfg, building), truth).values)
    for s in means:
        r = _gen(900 + s)
        for level in levels:
            vals = []
            for truth, building, g1, a1, g2, a2 in fields:
                noisy = [CkmTensor(a.data + level * r.standard_normal(a.data.shape), a.channels, a.pixel_spacing_m)
                         for a in (a1, a2)]
                cm = cosine_map(scm_map(g1, noisy[0], g2, noisy[1], cfg, building), truth)
                vals.append(cm.values[cm.valid])
            means[s].append(float(np.mean(np.concatenate(vals))))
    monotone = all(np.all(np.diff(m) < 0) for m in means.values())
    v = np.concatenate([c[c != -1.0] for c in clean])
    frac = float(np.mean(v > 0.8))
    detail = "; ".join(f"seed {s}: " + " > ".join(f"{x:.3f}" for x in m) for s, m in means.items())
    verdict(monotone and frac >= 0.5, f"mean cosine over noise {levels} deg: {detail}; "
            f"fraction > 0.8 for the trained model {frac:.3f} (>= 0.5)")


# --- 8: identity -------------------------------------------------------------------------------


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_c08_ground_truth_identity(verdict):
    scene = random_scene(SceneGenConfig(), 8)
    t = time.perf_counter()
    field = scm_map(scene.pgm1, scene.pam1, scene.pgm2, scene.pam2, SteeringConfig(64, 0.5))
    cm = cosine_map(field, field)
    dt = time.perf_counter() - t
    err = float(np.abs(cm.values[cm.valid] - 1.0).max())
    verdict(err <= 1e-12 and dt < 120, f"max |cos - 1| {err:.1e} over {int(cm.valid.sum())} pixels "
            f"(<= 1e-12), {dt:.2f} s (< 120)")


# --- 10-11: codecs, priors, interpolation --------------------------------------------------------


@pytest.mark.criterion(10)
def test_c10_codec_and_prior_gates(verdict, small_scene):
    t = time.perf_counter()
    r = _gen(10)
    g = r.uniform(-250, -50, 100_000)
    a = r.uniform(-180, 180, 100_000)
    q8 = lambda p: np.rint(p * 255) / 255  # noqa: E731
    q16 = lambda p: np.rint(p * 65535) / 65535  # noqa: E731
    gerr8 = np.abs(decode_gain_array(q8(encode_gain_array(g)[0])) - g).max()
    aerr8 = np.abs(decode_angle_array(q8(encode_angle_array(a)[0])) - a).max()
    gerr16 = np.abs(decode_gain_array(q16(encode_gain_array(g)[0])) - g).max()
    aerr16 = np.abs(decode_angle_array(q16(encode_angle_array(a)[0])) - a).max()
    codec = gerr8 <= 0.3922 and aerr8 <= 0.7451 and gerr16 <= 200 / 65535 / 2 + 1e-9 \
        and aerr16 <= 380 / 65535 / 2 + 1e-9 and decode_angle_array(0.0) == ANGLE_SENTINEL_DEG

    d = r.uniform(1, 1e4, 1000)
    friis = np.abs(friis_gain_db(2 * d, 28e9) - friis_gain_db(d, 28e9) + 6.0206).max()

    bs_ok = True
    for _ in range(50):
        h, w = (int(x) for x in r.integers(4, 40, 2))
        bs = (int(r.integers(0, h)), int(r.integers(0, w)))
        enc = bs_map(w, h, bs, float(r.uniform(0.5, 10)))
        bs_ok &= np.unravel_index(np.argmax(enc.data[:, :, 0]), (h, w)) == bs
    bs_ok &= detect_bs(small_scene.pgm1) == small_scene.meta.bs_pixel

    meta = SceneMeta(small_scene.meta.bs_height_m, small_scene.meta.ue_height_m, small_scene.meta.carrier_hz,
                     small_scene.meta.bs_pixel)
    tols = (0.01, 0.1, 0.5, 1.0, 3.0, 10.0)
    masks = [los_map(small_scene.pgm1, meta, tol).data[:, :, 0] > 0 for tol in tols]
    monotone = all(np.all(lo <= hi) for lo, hi in zip(masks, masks[1:]))
    dt = time.perf_counter() - t
    verdict(codec and friis < 1e-4 and bs_ok and monotone and dt < 5,
            f"8-bit errors {gerr8:.4f} dB/{aerr8:.4f} deg; doubling slope off by {friis:.1e}; "
            f"BS argmax {bs_ok}; LoS monotone {monotone}; {dt:.2f} s (< 5)")


@pytest.mark.criterion(11)
def test_c11_interpolation_oracles(verdict):
    t = time.perf_counter()
    r = _gen(11)
    worst = 0.0
    backends = ["numpy"] + (["cython"] if _backend.compiled is not None else [])
    for _ in range(3):
        src = r.standard_normal((int(r.integers(3, 10)), int(r.integers(3, 10)), 2))
        ref = bicubic_reference(src, 2)
        for b in backends:
            worst = max(worst, np.abs(bicubic_upscale_array(src, 2, backend=b) - ref).max())
    obs_dev = 0.0
    for stride in (2, 3, 4):
        grid = SamplingGrid(stride, (int(r.integers(0, stride)), int(r.integers(0, stride))))
        full = CkmTensor(r.uniform(-200, -60, (25, 23, 1)), (ChannelKind.GAIN_DB,), 1.0)
        lr = sample(full, grid)
        for b in backends:
            done = knn_complete(lr, grid, full.shape[:2], backend=b)
            obs_dev = max(obs_dev, float(observation_consistency(done, lr, grid).max()))
    dt = time.perf_counter() - t
    verdict(worst <= 1e-9 and obs_dev == 0.0 and dt < 10,
            f"bicubic vs reference {worst:.1e} (<= 1e-9) on {backends}; KNN observed-site deviation "
            f"{obs_dev} (== 0); {dt:.2f} s (< 10)")
