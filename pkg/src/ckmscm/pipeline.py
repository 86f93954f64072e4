"""Scene-level glue shared by the CLI and the tests."""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import DEFAULT_K, DEFAULT_POWER, bicubic_upscale, knn_complete
from .dataset import MAP_NAMES, PRIOR_KINDS, SceneMaps, input_kinds, list_scene_dirs, read_scene_dir
from .errors import FormatError
from .evalkit import (EvalReport, cosine_map, masked_rmse, pooled_rmse, render_png, scm_map,
                      wrapped_angle_rmse)
from .manifest import sha256_file
from .maps import (ChannelKind, CkmTensor, decode_pixels, encode_tensor, read_tensor, sentinel_adjacent_angles,
                   stack, write_tensor)
from .nn.model import ModelSpec, ParamStore, forward
from .priors import building_map
from .sampling import SamplingGrid, observation_consistency, sample
from .scm import SteeringConfig

log = logging.getLogger(__name__)

GRID_FILE = "grid.json"
PRIOR_FILES = {kind: f"{name}.ckmt" for name, kind in PRIOR_KINDS.items()}


# --- sampling --------------------------------------------------------------------------


def write_grid(directory, grid: SamplingGrid, full_dims) -> None:
    Path(directory, GRID_FILE).write_text(json.dumps(
        {"stride": grid.stride, "offset": list(grid.offset), "full_dims": list(full_dims)}) + "\n")


def read_grid(directory):
    p = Path(directory, GRID_FILE)
    if not p.is_file():
        return None, None
    d = json.loads(p.read_text())
    return SamplingGrid(d["stride"], tuple(d["offset"])), tuple(d["full_dims"])


def sample_scene_dir(src, dst, grid: SamplingGrid) -> list[Path]:
    """Sample every ``.ckmt`` in a scene directory; metadata is copied."""
    src, dst = Path(src), Path(dst)
    files = sorted(src.glob("*.ckmt"))
    if not files:
        raise FormatError(f"{src}: no .ckmt tensors to sample")
    dst.mkdir(parents=True, exist_ok=True)
    full_dims = None
    for f in files:
        t = read_tensor(f)
        if full_dims is None:
            full_dims = (t.height, t.width)
        elif full_dims != (t.height, t.width):
            raise FormatError(f"{f}: size {t.shape[:2]} differs from {full_dims}")
        write_tensor(sample(t, grid), dst / f.name)
    if (src / "meta.txt").is_file():
        shutil.copyfile(src / "meta.txt", dst / "meta.txt")
    write_grid(dst, grid, full_dims)
    return [dst / f.name for f in files]


# --- completion ------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadedModel:
    spec: ModelSpec
    store: ParamStore
    kinds: tuple[ChannelKind, ...]


def model_kinds(spec: ModelSpec, path: int) -> tuple[ChannelKind, ...]:
    """Infer the ablation from the channel count (priors are dropped from the end)."""
    base = input_kinds(path)
    if spec.in_channels == len(base):
        return base
    for drop in (("los",), ("building",), ("bs",), ("los", "building"), ("los", "bs"), ("building", "bs"),
                 ("los", "building", "bs")):
        kinds = input_kinds(path, drop)
        if len(kinds) == spec.in_channels:
            return kinds
    raise ValueError(f"no input layout with {spec.in_channels} channels for path {path}")


def complete_tensor(lr: CkmTensor, method: str, grid: SamplingGrid, full_dims, *, k=DEFAULT_K,
                    power=DEFAULT_POWER, model: LoadedModel | None = None) -> CkmTensor:
    if method == "bicubic":
        out = bicubic_upscale(lr, grid.stride)
        return CkmTensor(out.data[:full_dims[0], :full_dims[1]], out.channels, out.pixel_spacing_m)
    if method == "knn":
        return knn_complete(lr, grid, full_dims, k, power)
    if method == "model":
        if model is None:
            raise ValueError("method 'model' needs a checkpoint")
        return model_complete(model, lr, full_dims)
    raise ValueError(f"unknown completion method {method!r}")


def model_complete(model: LoadedModel, lr_stack: CkmTensor, full_dims=None) -> CkmTensor:
    """Run the network on a physical-unit LR stack; returns HR [GAIN_DB, ANGLE_DEG]."""
    if lr_stack.channels != model.kinds:
        raise ValueError(f"model expects channels {[k.name for k in model.kinds]}, "
                         f"got {[k.name for k in lr_stack.channels]}")
    x, _ = encode_tensor(lr_stack)
    y = forward(model.store, model.spec, x.transpose(2, 0, 1)[None])[0].transpose(1, 2, 0)
    if full_dims is not None:
        y = y[:full_dims[0], :full_dims[1]]
    return decode_pixels(y, (ChannelKind.GAIN_DB, ChannelKind.ANGLE_DEG),
                         lr_stack.pixel_spacing_m / model.spec.upscale)


def complete_scene_dir(src, dst, method: str, *, grid=None, full_dims=None, k=DEFAULT_K, power=DEFAULT_POWER,
                       models: dict[int, LoadedModel] | None = None) -> list[Path]:
    """Complete the four path maps of an LR scene directory."""
    src, dst = Path(src), Path(dst)
    g0, d0 = read_grid(src)
    grid = grid or g0 or SamplingGrid()
    maps = {n: read_tensor(src / f"{n}.ckmt") for n in MAP_NAMES if (src / f"{n}.ckmt").is_file()}
    if len(maps) != 4:
        raise FormatError(f"{src}: expected {', '.join(m + '.ckmt' for m in MAP_NAMES)}")
    if full_dims is None:
        lr = maps["pgm1"]
        full_dims = d0 or (lr.height * grid.stride, lr.width * grid.stride)
    dst.mkdir(parents=True, exist_ok=True)
    out = {}
    if method == "model":
        priors = {}
        for kind, fname in PRIOR_FILES.items():
            if (src / fname).is_file():
                priors[kind] = read_tensor(src / fname)
        for p in (1, 2):
            if not models or p not in models:
                raise ValueError(f"method 'model' needs a checkpoint for path {p}")
            by_kind = {ChannelKind.GAIN_DB: maps[f"pgm{p}"], ChannelKind.ANGLE_DEG: maps[f"pam{p}"], **priors}
            missing = [kk.name for kk in models[p].kinds if kk not in by_kind]
            if missing:
                raise FormatError(f"{src}: prior maps {missing} absent; run the priors and sample steps first")
            hr = model_complete(models[p], stack([by_kind[kk] for kk in models[p].kinds]), full_dims)
            out[f"pgm{p}"] = hr.select([ChannelKind.GAIN_DB])
            out[f"pam{p}"] = hr.select([ChannelKind.ANGLE_DEG])
    else:
        for n, t in maps.items():
            out[n] = complete_tensor(t, method, grid, full_dims, k=k, power=power)
    for n, t in out.items():
        write_tensor(t, dst / f"{n}.ckmt")
    if (src / "meta.txt").is_file():
        shutil.copyfile(src / "meta.txt", dst / "meta.txt")
    write_grid(dst, grid, full_dims)
    return [dst / f"{n}.ckmt" for n in MAP_NAMES]


# --- evaluation ------------------------------------------------------------------------


def _scene_dirs(root) -> dict[str, Path]:
    root = Path(root)
    if (root / "pgm1.ckmt").is_file():
        return {root.name: root}
    found = {p.parent.name: p.parent for p in sorted(root.glob("*/pgm1.ckmt"))}
    if not found:
        raise FormatError(f"{root}: no scene directories with pgm1.ckmt")
    return found


def _load_maps(d: Path) -> dict[str, CkmTensor]:
    out = {}
    for n in MAP_NAMES:
        p = d / f"{n}.ckmt"
        if not p.is_file():
            raise FormatError(f"{d}: missing {p.name}")
        out[n] = read_tensor(p)
    return out


def evaluate_scene(pred: dict[str, CkmTensor], truth: dict[str, CkmTensor], cfg: SteeringConfig,
                   grid: SamplingGrid | None = None):
    """Squared-error sums, cosine map and observation deviations for one scene."""
    for n in MAP_NAMES:
        if pred[n].shape != truth[n].shape:
            raise ValueError(f"{n}: prediction {pred[n].shape} vs truth {truth[n].shape}")
    building = building_map(truth["pgm1"])
    outside = building.data[:, :, 0] == 1
    truth_field = scm_map(truth["pgm1"], truth["pam1"], truth["pgm2"], truth["pam2"], cfg, building)
    pred_field = scm_map(pred["pgm1"], pred["pam1"], pred["pgm2"], pred["pam2"], cfg, building)
    stats = {"n_pixels": int(outside.sum()), "n_building": int((~outside).sum()),
             "n_uncovered": int(truth_field.uncovered.sum())}
    sq = {}
    for p in (1, 2):
        g = masked_rmse(pred[f"pgm{p}"], truth[f"pgm{p}"], building)[0]
        a = masked_rmse(pred[f"pam{p}"], truth[f"pam{p}"], building)[0]
        w = wrapped_angle_rmse(pred[f"pam{p}"].data[:, :, 0], truth[f"pam{p}"].data[:, :, 0], outside)
        sq[p] = (g * g, a * a, w * w)
    cmap = cosine_map(pred_field, truth_field)
    obs = {}
    if grid is not None:
        for n in MAP_NAMES:
            obs[n] = float(observation_consistency(pred[n], sample(truth[n], grid), grid)[0])
    return stats, sq, cmap, obs


def evaluate_dirs(pred_root, truth_root, *, cfg: SteeringConfig = SteeringConfig(), grid: SamplingGrid | None = None,
                  render_dir=None, manifest: dict | None = None) -> EvalReport:
    preds = _scene_dirs(pred_root)
    truths = _scene_dirs(truth_root)
    if len(preds) == 1 and len(truths) == 1:
        preds = {next(iter(truths)): next(iter(preds.values()))}
    names = sorted(set(preds) & set(truths))
    if not names:
        raise FormatError(f"no scene names shared by {pred_root} and {truth_root}")
    missing = sorted(set(truths) - set(preds))
    if missing:
        raise FormatError(f"predictions missing for scenes {missing}")
    report = EvalReport(manifest=dict(manifest or {}))
    sums = {p: np.zeros(3) for p in (1, 2)}
    n_total = 0
    cos_vals = []
    counts = {"scenes": 0, "pixels": 0, "building": 0, "uncovered": 0, "sentinel_adjacent_angles": 0}
    obs_max: dict[str, float] = {}
    for name in names:
        pred, truth = _load_maps(preds[name]), _load_maps(truths[name])
        stats, sq, cmap, obs = evaluate_scene(pred, truth, cfg, grid)
        n = stats["n_pixels"]
        n_total += n
        for p in (1, 2):
            sums[p] += n * np.array(sq[p])
        cos_vals.append(cmap.values[cmap.valid])
        counts["scenes"] += 1
        counts["pixels"] += n
        counts["building"] += stats["n_building"]
        counts["uncovered"] += stats["n_uncovered"]
        counts["sentinel_adjacent_angles"] += sum(int(sentinel_adjacent_angles(pred[f"pam{p}"].data).sum())
                                                  for p in (1, 2))
        for k, v in obs.items():
            obs_max[k] = max(obs_max.get(k, 0.0), v)
        summ = cmap.summary()
        report.per_scene.append({
            "scene": name,
            "rmse_gain_db_path1": float(np.sqrt(sq[1][0])), "rmse_angle_deg_path1": float(np.sqrt(sq[1][1])),
            "rmse_gain_db_path2": float(np.sqrt(sq[2][0])), "rmse_angle_deg_path2": float(np.sqrt(sq[2][1])),
            "cosine_mean": summ["mean"], "cosine_fraction_above": summ["fraction_above"],
        })
        for d in (preds[name], truths[name]):
            for n_ in MAP_NAMES:
                report.inputs.append((str(d / f"{n_}.ckmt"), sha256_file(d / f"{n_}.ckmt")))
        if render_dir is not None:
            rd = Path(render_dir)
            rd.mkdir(parents=True, exist_ok=True)
            render_png(cmap, rd / f"{name}_cosine.png", "heat")
            for n_ in MAP_NAMES:
                render_png(pred[n_], rd / f"{name}_{n_}_pred.png", "gray")
    for p in (1, 2):
        report.rmse_gain_db[p] = pooled_rmse(sums[p][0], n_total)
        report.rmse_angle_deg[p] = pooled_rmse(sums[p][1], n_total)
        report.rmse_angle_wrapped_deg[p] = pooled_rmse(sums[p][2], n_total)
    v = np.concatenate(cos_vals)
    report.cosine = {"mean": float(np.mean(v)), "median": float(np.median(v)),
                     "fraction_above_0.8": float(np.mean(v > 0.8)), "n_pixels": int(v.size)}
    report.counts = counts
    report.observation_consistency = obs_max
    return report


def load_scenes(root) -> list[SceneMaps]:
    return [read_scene_dir(d) for d in list_scene_dirs(root)]
