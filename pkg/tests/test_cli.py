import json

import numpy as np
import pytest

from ckmscm.cli import main
from ckmscm.evalkit import parse_report
from ckmscm.maps import read_tensor
from ckmscm.nn.checkpoint import load_checkpoint, save_checkpoint

TRAIN_FLAGS = ["--blocks", "1", "--channels", "4", "--heads", "2", "--msff", "1", "--batch", "2",
               "--head-kernel", "3", "--tail-kernel", "3", "--mode", "f64"]


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "scenes.txt"
    spec.write_text("rows=16\ncols=16\nn_obstacles=1,2\nobstacle_size=3,5\n")
    assert main(["gen-scenes", "--spec", str(spec), "--out", str(root / "hr"), "--count", "3", "--seed", "4"]) == 0
    return root


@pytest.fixture(scope="module")
def lr_scene(scenes):
    """LR scene directory holding the four maps plus the prior tensors."""
    d = scenes / "hr" / "scene_00000"
    assert run("priors", "--scene", d, "--out", scenes / "withpri") == 0
    for f in d.iterdir():
        (scenes / "withpri" / f.name).write_bytes(f.read_bytes())
    assert run("sample", "--in", scenes / "withpri", "--out", scenes / "lr") == 0
    return scenes / "lr"


@pytest.fixture(scope="module")
def models(scenes):
    out = {}
    for p in (1, 2):
        out[p] = scenes / f"path{p}.esrn"
        assert run("train", "--data", scenes / "hr", "--path", p, "--iters", "2", "--out", out[p], *TRAIN_FLAGS) == 0
    return out


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_scenes_layout_and_manifest(scenes):
    hr = scenes / "hr"
    dirs = sorted(p.name for p in hr.iterdir() if p.is_dir())
    assert dirs == ["scene_00000", "scene_00001", "scene_00002"]
    m = json.loads((hr / "manifest.json").read_text())
    assert m["command"] == "gen-scenes" and len(m["seeds"]["scenes"]) == 3
    assert any(k.endswith("pgm1.ckmt") for k in m["outputs"])
    assert read_tensor(hr / "scene_00000" / "pam2.ckmt").shape == (16, 16, 1)


def test_knn_pipeline_is_observation_consistent(scenes, tmp_path):
    hr = scenes / "hr"
    assert run("sample", "--in", hr / "scene_00001", "--out", tmp_path / "lr", "--stride", "2", "--offset", "1,0") == 0
    assert (tmp_path / "lr" / "grid.json").is_file()
    assert run("complete", "--method", "knn", "--in", tmp_path / "lr", "--out", tmp_path / "done") == 0
    assert run("eval", "--pred", tmp_path / "done", "--truth", hr / "scene_00001",
               "--report", tmp_path / "report.txt", "--antennas", "16") == 0
    rep = parse_report((tmp_path / "report.txt").read_text())
    for n in ("pgm1", "pam1", "pgm2", "pam2"):
        assert float(rep[f"observation_consistency_{n}"]) == 0.0
    assert rep["method"] == "knn"
    assert float(rep["rmse_gain_db_path1"]) > 0
    assert (tmp_path / "report_renders" / "scene_00001_cosine.png").is_file()
    assert (tmp_path / "report.txt.manifest.json").is_file()


def test_bicubic_single_tensor(scenes, tmp_path):
    src = scenes / "hr" / "scene_00000" / "pgm1.ckmt"
    assert run("sample", "--in", src, "--out", tmp_path / "lr.ckmt") == 0
    assert run("complete", "--method", "bicubic", "--in", tmp_path / "lr.ckmt", "--out", tmp_path / "hr.ckmt") == 0
    out = read_tensor(tmp_path / "hr.ckmt")
    assert out.shape == (16, 16, 1) and out.validate() == []
    assert np.array_equal(out.data[::2, ::2], read_tensor(src).data[::2, ::2])


def test_priors_and_scm(scenes, tmp_path):
    d = scenes / "hr" / "scene_00002"
    assert run("priors", "--scene", d, "--out", tmp_path / "pri") == 0
    assert read_tensor(tmp_path / "pri" / "bs.ckmt").data.max() == 1.0
    maps = [f"--{n}={d / (n + '.ckmt')}" for n in ("pgm1", "pam1", "pgm2", "pam2")]
    assert run("scm", *maps, "--antennas", "8", "--truth", d, "--dump", "0,0", "--out", tmp_path / "scm") == 0
    cos = np.load(tmp_path / "scm" / "cosine.npy")
    valid = cos != -1
    assert np.abs(cos[valid] - 1).max() <= 1e-12
    assert (tmp_path / "scm" / "manifest.json").is_file()
    z = np.load(tmp_path / "scm" / "scm_params.npz")
    assert z["powers"].shape == (16, 16, 2)


def test_train_complete_model_and_f64_rerun_is_identical(scenes, tmp_path):
    hr = scenes / "hr"
    for name in ("a", "b"):
        assert run("train", "--data", hr, "--iters", "4", "--out", tmp_path / f"{name}.esrn", *TRAIN_FLAGS) == 0
    assert (tmp_path / "a.esrn").read_bytes() == (tmp_path / "b.esrn").read_bytes()
    assert (tmp_path / "a.esrn.loss.csv").read_text() == (tmp_path / "b.esrn.loss.csv").read_text()
    m = json.loads((tmp_path / "a.esrn.manifest.json").read_text())
    assert m["model_spec"]["n_res_blocks"] == 1 and m["input_channels"][0] == "GAIN_DB"


def test_complete_with_models(lr_scene, models, tmp_path):
    assert run("complete", "--method", "model", "--in", lr_scene, "--model", models[1], "--model2", models[2],
               "--out", tmp_path / "pred") == 0
    for n in ("pgm1", "pam2"):
        t = read_tensor(tmp_path / "pred" / f"{n}.ckmt")
        assert t.shape == (16, 16, 1) and t.validate() == []
    assert run("complete", "--method", "model", "--in", lr_scene, "--model", models[1], "--out", tmp_path / "x") == 2


def test_train_ablation_flag(scenes, tmp_path):
    assert run("train", "--data", scenes / "hr", "--iters", "1", "--no-los", "--no-bs",
               "--out", tmp_path / "m.esrn", *TRAIN_FLAGS) == 0
    spec, _ = load_checkpoint(tmp_path / "m.esrn")
    assert spec.in_channels == 3


def test_config_precedence(scenes, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"stride": 4, "out": str(tmp_path / "cfg_out")}))
    src = scenes / "hr" / "scene_00000" / "pgm1.ckmt"
    assert run("--config", cfg, "sample", "--in", src) == 0
    assert read_tensor(tmp_path / "cfg_out").shape == (4, 4, 1)
    assert run("--config", cfg, "sample", "--in", src, "--stride", "2") == 0
    assert read_tensor(tmp_path / "cfg_out").shape == (8, 8, 1)
    cfg.write_text(json.dumps({"stride": 4, "colour": "red"}))
    assert run("--config", cfg, "sample", "--in", src, "--out", tmp_path / "x") == 1


@pytest.mark.parametrize("argv", [[], ["bogus"], ["sample"], ["complete", "--method", "nn", "--in", "x", "--out", "y"],
                                  ["--threads", "0", "selftest", "--quick"]])
def test_usage_errors_exit_1(argv):
    assert main(argv) == 1


def test_data_errors_exit_2(tmp_path, scenes):
    bad = tmp_path / "bad.ckmt"
    bad.write_bytes(b"NOPE" + bytes(40))
    assert run("complete", "--method", "knn", "--in", bad, "--out", tmp_path / "o.ckmt") == 2
    assert run("sample", "--in", tmp_path / "missing.ckmt", "--out", tmp_path / "o.ckmt") == 2
    assert run("train", "--data", tmp_path, "--out", tmp_path / "m.esrn") == 2


def test_numerical_fault_exit_3(lr_scene, models, tmp_path):
    spec, store = load_checkpoint(models[1])
    store.params["tail.b"][0] = np.nan
    save_checkpoint(tmp_path / "nan.esrn", spec, store)
    assert run("complete", "--method", "model", "--in", lr_scene, "--model", tmp_path / "nan.esrn",
               "--model2", models[2], "--out", tmp_path / "p") == 3


def test_selftest_quick(capsys):
    assert main(["selftest", "--quick"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "grad mha_4heads" in out


def test_threads_give_identical_scenes(tmp_path):
    spec = tmp_path / "s.txt"
    spec.write_text("rows=12\ncols=12\nn_obstacles=1,1\nobstacle_size=3,4\n")
    for t in ("1", "3"):
        assert main(["--threads", t, "gen-scenes", "--spec", str(spec), "--out", str(tmp_path / t), "--count", "3"]) == 0
    for i in range(3):
        a = (tmp_path / "1" / f"scene_{i:05d}" / "pgm2.ckmt").read_bytes()
        assert a == (tmp_path / "3" / f"scene_{i:05d}" / "pgm2.ckmt").read_bytes()
