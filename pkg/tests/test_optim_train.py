import csv

import numpy as np
import pytest

from ckmscm.errors import NumericalFault
from ckmscm.nn.model import ModelSpec, init_params
from ckmscm.nn.optim import AdamState, PlateauScheduler, adam_step, plateau_lr
from ckmscm.nn.train import TrainSpec, train, write_loss_csv


def test_adam_first_step_is_lr_times_sign():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    adam_step(p, {"w": np.array([0.5, -4.0, 0.0])}, AdamState(), lr=0.1)
    np.testing.assert_allclose(p["w"], [0.9, -1.9, 3.0], atol=1e-6)


def test_adam_matches_hand_rolled_reference(rng):
    w = rng.standard_normal(5)
    p = {"w": w.copy()}
    st = AdamState()
    m = v = np.zeros(5)
    for t in range(1, 6):
        g = rng.standard_normal(5)
        adam_step(p, {"w": g}, st, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, atol=1e-12)


def test_adam_zero_lr_keeps_params():
    p = {"w": np.ones(3)}
    adam_step(p, {"w": np.ones(3)}, AdamState(), 0.0)
    np.testing.assert_array_equal(p["w"], 1.0)


def test_adam_rejects_non_finite():
    with pytest.raises(NumericalFault, match="w"):
        adam_step({"w": np.ones(2)}, {"w": np.array([1.0, np.inf])}, AdamState(), 0.1)


def test_plateau_scheduler():
    s = PlateauScheduler(1.0, patience=2, factor=0.5)
    lrs = [s.step(x) for x in (5, 4, 4, 4, 4, 4, 3)]
    assert lrs == [1.0, 1.0, 1.0, 0.5, 0.5, 0.25, 0.25]
    assert plateau_lr([5, 4, 4, 4, 4, 4, 3], 1.0, 2) == 0.25
    with pytest.raises(ValueError):
        PlateauScheduler(1.0, factor=1.0)


def test_train_spec_validation():
    for kw in (dict(lr_initial=-1), dict(lr_decay=0), dict(batch_size=0), dict(mode="f16")):
        with pytest.raises(ValueError):
            TrainSpec(**kw)


SPEC = ModelSpec(in_channels=3, base_channels=4, n_res_blocks=1, n_heads=2, msff_after_blocks=(1,),
                 head_kernel=3, tail_kernel=3)


def _data(rng, n=4):
    x = rng.random((n, 3, 6, 6))
    y = rng.random((n, 2, 12, 12))
    return x, y


def test_train_reduces_loss_and_is_deterministic(rng):
    x, y = _data(rng)
    ts = TrainSpec(batch_size=2, lr_initial=3e-3, max_iterations=60, seed=2, mode="f64")
    a = train(SPEC, x, y, ts)
    b = train(SPEC, x, y, ts)
    assert np.array_equal(a.losses, b.losses)
    assert a.losses[-5:].mean() < a.losses[:5].mean()
    assert all(np.array_equal(a.store.params[k], b.store.params[k]) for k in a.store.params)


def test_train_validation_and_callback(rng):
    x, y = _data(rng)
    seen = []
    r = train(SPEC, x, y, TrainSpec(batch_size=2, max_iterations=6, epoch_iterations=3), val=(x, y),
              on_epoch=lambda it, store: seen.append(it))
    assert seen == [3, 6]
    assert [row["val_loss"] is not None for row in r.curve] == [False, False, True] * 2


def test_train_keep_best_returns_lowest_val_epoch(rng):
    from ckmscm.nn.model import forward
    x, y = _data(rng)
    snaps = {}
    ts = TrainSpec(batch_size=2, lr_initial=5e-2, max_iterations=12, epoch_iterations=3, mode="f64", keep_best=True)
    r = train(SPEC, x, y, ts, val=(x, y), on_epoch=lambda it, store: snaps.update({it: store.copy()}))
    vals = {row["iteration"]: row["val_loss"] for row in r.curve if row["val_loss"] is not None}
    best_it = min(vals, key=vals.get)
    assert r.best_val_loss == vals[best_it]
    assert all(np.array_equal(r.store.params[k], snaps[best_it].params[k]) for k in r.store.params)
    assert np.isclose(np.mean((forward(r.store, SPEC, x) - y) ** 2), vals[best_it])


def test_train_zero_lr_changes_only_bn_buffers(rng):
    x, y = _data(rng)
    init = init_params(SPEC, 0)
    r = train(SPEC, x, y, TrainSpec(lr_initial=0.0, max_iterations=3, seed=0))
    for k, v in init.params.items():
        assert np.array_equal(r.store.params[k], v)


def test_train_errors(rng):
    x, y = _data(rng)
    with pytest.raises(ValueError):
        train(SPEC, x[:0], y[:0], TrainSpec())
    with pytest.raises(ValueError):
        train(SPEC, x, y[:2], TrainSpec())


def test_loss_csv(tmp_path, rng):
    x, y = _data(rng)
    r = train(SPEC, x, y, TrainSpec(batch_size=2, max_iterations=4, epoch_iterations=2), val=(x, y))
    p = tmp_path / "loss.csv"
    write_loss_csv(p, r.curve)
    rows = list(csv.DictReader(p.open()))
    assert [int(row["iteration"]) for row in rows] == [1, 2, 3, 4]
    assert rows[0]["val_loss"] == "" and float(rows[1]["val_loss"]) > 0
    assert float(rows[2]["train_loss"]) == r.curve[2]["train_loss"]
