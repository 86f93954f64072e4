import struct

import numpy as np
import pytest

from ckmscm.errors import FormatError
from ckmscm.nn.checkpoint import load_checkpoint, save_checkpoint
from ckmscm.nn.model import ModelSpec, forward, init_params

SPEC = ModelSpec(in_channels=3, base_channels=4, n_res_blocks=2, n_heads=2, msff_after_blocks=(2,),
                 head_kernel=3, tail_kernel=3, attn_pool=2)


@pytest.mark.parametrize("mode", ["f32", "f64"])
def test_round_trip_is_bit_exact(tmp_path, rng, mode):
    store = init_params(SPEC, 5, mode)
    store.buffers["block0.bn1.running_mean"][:] = rng.random(4)
    p = tmp_path / "m.esrn"
    save_checkpoint(p, SPEC, store)
    spec, back = load_checkpoint(p)
    assert spec == SPEC and back.mode == mode
    assert set(back.params) == set(store.params) and set(back.buffers) == set(store.buffers)
    for k in store.params:
        assert np.array_equal(back.params[k], store.params[k]) and back.params[k].dtype == store.params[k].dtype
    x = rng.random((1, 3, 8, 8))
    assert np.array_equal(forward(store, SPEC, x), forward(back, spec, x))
    assert p.read_bytes()[:4] == b"ESRN"


def test_corrupt_files(tmp_path):
    p = tmp_path / "m.esrn"
    save_checkpoint(p, SPEC, init_params(SPEC))
    raw = p.read_bytes()
    blobs = {
        "magic": b"XXXX" + raw[4:],
        "version": raw[:4] + struct.pack("<H", 7) + raw[6:],
        "truncated": raw[:-10],
        "trailing": raw + b"\0\0",
        "short": raw[:7],
    }
    for name, blob in blobs.items():
        q = tmp_path / f"{name}.esrn"
        q.write_bytes(blob)
        with pytest.raises(FormatError):
            load_checkpoint(q)
