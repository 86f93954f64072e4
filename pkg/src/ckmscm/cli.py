"""``ckmscm`` command-line interface.

Exit codes: 0 success, 1 usage, 2 data/format, 3 numerical fault.
Every command writes a manifest next to its output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset as ds
from .errors import FormatError, NoCoverageError, NumericalFault
from .manifest import read_manifest, write_manifest
from .maps import read_tensor, write_tensor
from .priors import DEFAULT_SIGMA_SQ, DEFAULT_THRESHOLD_PIXEL, DEFAULT_TOL_DB
from .sampling import SamplingGrid, sample
from .scm import SteeringConfig

log = logging.getLogger("ckmscm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pair(text: str, typ=int) -> tuple:
    try:
        a, b = (typ(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}") from None
    return a, b


def _int_list(text: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _map_jobs(fn, items, threads: int):
    """Ordered map; results never depend on the thread count."""
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --- subcommands -------------------------------------------------------------------------


def cmd_gen_scenes(a) -> None:
    from .synth import SceneGenConfig, random_scene_spec, generate_scene

    cfg = SceneGenConfig.from_file(a.spec) if a.spec else SceneGenConfig()
    if a.count < 1:
        raise UsageError("--count must be >= 1")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(np.random.SeedSequence([a.seed, i]).generate_state(1)[0]) for i in range(a.count)]

    def one(i):
        spec = random_scene_spec(cfg, seeds[i])
        scene = generate_scene(spec)
        name = f"scene_{i:05d}"
        d = ds.write_scene_dir(ds.from_synthetic(scene, name), out / name)
        (d / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
        return scene.clamp_count

    clamps = _map_jobs(one, range(a.count), a.threads)
    write_manifest(out, "gen-scenes", vars(a), seeds={"base": a.seed, "scenes": seeds},
                   inputs=[a.spec] if a.spec else [], outputs=[out], extra={"clamp_events": int(sum(clamps))})
    print(f"wrote {a.count} scenes to {out} ({sum(clamps)} gain clamp events)")


def cmd_ingest(a) -> None:
    from .ingest import Layout, ingest_dataset

    layout = Layout.load(a.layout)
    written, skipped = ingest_dataset(a.dataset, layout, a.out)
    Path(a.out).mkdir(parents=True, exist_ok=True)
    write_manifest(a.out, "ingest", vars(a), inputs=[a.layout] if a.layout else [], outputs=[a.out],
                   extra={"layout": layout.__dict__, "written": written, "skipped": skipped})
    print(f"ingested {len(written)} scenes, skipped {len(skipped)}")
    for name, why in skipped:
        print(f"  skipped {name}: {why}")


def _scene_pairs(src: Path, out) -> list[tuple[Path, Path]]:
    """(scene dir, output dir) for one scene directory or a root of them."""
    out = Path(out) if out else None
    if any(src.glob("*.ckmt")) or (src / "meta.txt").is_file():
        return [(src, out or src)]
    return [(d, (out / d.name) if out else d) for d in ds.list_scene_dirs(src)]


def cmd_priors(a) -> None:
    for src, out in _scene_pairs(Path(a.scene), a.out):
        scene = ds.read_scene_dir(src)
        pr = ds.scene_priors(scene, sigma_sq=a.sigma_sq, tol_db=a.tol_db, threshold_pixel=a.threshold)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for name in ("los", "building", "bs"):
            p = out / f"{name}.ckmt"
            write_tensor(getattr(pr, name), p)
            files.append(p)
        write_manifest(out / "priors", "priors", vars(a),
                       inputs=[src], outputs=files, extra={"bs_pixel": list(pr.bs_pixel)})
        print(f"priors written to {out} (BS at pixel {pr.bs_pixel})")


def cmd_sample(a) -> None:
    from .pipeline import sample_scene_dir

    grid = SamplingGrid(a.stride, a.offset)
    src = Path(a.input)
    if src.is_dir():
        outputs = []
        for d, out in _scene_pairs(src, a.out):
            outputs += sample_scene_dir(d, out, grid)
        write_manifest(a.out, "sample", vars(a), inputs=[src], outputs=outputs)
    else:
        t = read_tensor(src)
        write_tensor(sample(t, grid), a.out)
        write_manifest(a.out, "sample", vars(a), inputs=[src], outputs=[a.out])
    print(f"sampled {src} -> {a.out}")


def _load_model(path, which: int):
    from .nn.checkpoint import load_checkpoint
    from .pipeline import LoadedModel, model_kinds

    spec, store = load_checkpoint(path)
    return LoadedModel(spec, store, model_kinds(spec, which))


def cmd_complete(a) -> None:
    from .pipeline import complete_scene_dir, complete_tensor, read_grid

    src = Path(a.input)
    grid = SamplingGrid(a.stride, a.offset) if a.stride else None
    models = None
    if a.method == "model":
        if not a.model:
            raise UsageError("--method model requires --model")
        models = {1: _load_model(a.model, 1)}
        if a.model2:
            models[2] = _load_model(a.model2, 2)
    inputs = [src] + [m for m in (a.model, a.model2) if m]
    if src.is_dir():
        outputs = []
        for d, out in _scene_pairs(src, a.out):
            outputs += complete_scene_dir(d, out, a.method, grid=grid, full_dims=a.full_dims, k=a.k,
                                          power=a.power, models=models)
        write_manifest(a.out, "complete", vars(a), inputs=inputs, outputs=outputs)
    else:
        lr = read_tensor(src)
        g0, d0 = read_grid(src.parent)
        grid = grid or g0 or SamplingGrid()
        dims = a.full_dims or d0 or (lr.height * grid.stride, lr.width * grid.stride)
        out = complete_tensor(lr, a.method, grid, dims, k=a.k, power=a.power,
                              model=models[1] if models else None)
        write_tensor(out, a.out)
        write_manifest(a.out, "complete", vars(a), inputs=inputs, outputs=[a.out])
    print(f"completed {src} with {a.method} -> {a.out}")


def cmd_train(a) -> None:
    from .nn.checkpoint import save_checkpoint
    from .nn.model import ModelSpec
    from .nn.train import TrainSpec, train, write_loss_csv

    if a.keep_best and not a.val_fraction > 0:
        raise UsageError("--keep-best needs --val-fraction > 0")
    drop = [n for n, off in (("los", a.no_los), ("building", a.no_building), ("bs", a.no_bs)) if off]
    scenes = [ds.read_scene_dir(d) for d in ds.list_scene_dirs(a.data)]
    grid = SamplingGrid(a.stride, a.offset)
    kinds = ds.input_kinds(a.path, drop)
    n_val = int(round(a.val_fraction * len(scenes)))
    train_scenes, val_scenes = scenes[:len(scenes) - n_val], scenes[len(scenes) - n_val:]
    X, Y, kept = ds.build_pairs(train_scenes, a.path, grid, drop)
    val = ds.build_pairs(val_scenes, a.path, grid, drop)[:2] if val_scenes else None
    spec = ModelSpec(
        in_channels=len(kinds), base_channels=a.channels, n_res_blocks=a.blocks, n_heads=a.heads,
        msff_after_blocks=a.msff, upscale=grid.stride, head_kernel=a.head_kernel, tail_kernel=a.tail_kernel,
        attn_pool=a.attn_pool, input_residual=a.input_residual,
    )
    tspec = TrainSpec(batch_size=a.batch, lr_initial=a.lr, max_iterations=a.iters, seed=a.seed, mode=a.mode,
                      epoch_iterations=a.epoch_iters, checkpoint_every=a.checkpoint_every,
                      checkpoint_path=a.out if a.checkpoint_every else None, keep_best=a.keep_best)
    res = train(spec, X, Y, tspec, val=val)
    save_checkpoint(a.out, spec, res.store)
    csv_path = Path(str(a.out) + ".loss.csv")
    write_loss_csv(csv_path, res.curve)
    write_manifest(a.out, "train", vars(a), seeds={"train": a.seed}, inputs=[a.data], outputs=[a.out, csv_path],
                   extra={"model_spec": json.loads(spec.to_json()), "input_channels": [k.name for k in kinds],
                          "train_scenes": kept, "parameter_count": spec.parameter_count()})
    final = res.losses[-1] if len(res.losses) else float("nan")
    print(f"trained {spec.parameter_count()} parameters for {a.iters} iterations; final loss {final:.6g}")


def cmd_scm(a) -> None:
    from .evalkit import cosine_map, render_png, scm_map

    cfg = SteeringConfig(a.antennas, a.spacing)
    maps = [read_tensor(p) for p in (a.pgm1, a.pam1, a.pgm2, a.pam2)]
    field = scm_map(*maps, cfg=cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "scm_params.npz", powers=field.powers, aoas_rad=field.aoas, n_paths=field.n_paths,
             n_antennas=cfg.n_antennas, spacing_ratio=cfg.spacing_ratio)
    lines = [f"n_antennas: {cfg.n_antennas}", f"spacing_ratio: {cfg.spacing_ratio}",
             f"valid_pixels: {int(field.valid.sum())}", f"uncovered_pixels: {int(field.uncovered.sum())}",
             f"building_pixels: {int(field.building.sum())}"]
    inputs = [a.pgm1, a.pam1, a.pgm2, a.pam2]
    if a.truth:
        tmaps = [read_tensor(Path(a.truth) / f"{n}.ckmt") for n in ds.MAP_NAMES]
        inputs.append(a.truth)
        tfield = scm_map(*tmaps, cfg=cfg)
        cmap = cosine_map(field, tfield)
        np.save(out / "cosine.npy", cmap.values)
        render_png(cmap, out / "cosine.png", "heat")
        lines += [f"cosine_{k}: {v}" for k, v in cmap.summary().items()]
    if a.dump:
        r, c = a.dump
        np.save(out / f"scm_{r}_{c}.npy", field.matrix(r, c))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    write_manifest(out, "scm", vars(a), inputs=inputs, outputs=[out])
    print("\n".join(lines))


def cmd_eval(a) -> None:
    from .pipeline import evaluate_dirs, read_grid

    grid = SamplingGrid(a.stride, a.offset) if a.stride else None
    if grid is None:
        pr = Path(a.pred)
        first = pr if (pr / "pgm1.ckmt").is_file() else next((p.parent for p in sorted(pr.glob("*/pgm1.ckmt"))), pr)
        grid = read_grid(first)[0]
    report_path = Path(a.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    render_dir = None if a.no_render else report_path.with_name(report_path.stem + "_renders")
    method = read_manifest(a.pred).get("args", {}).get("method", "unknown")
    report = evaluate_dirs(a.pred, a.truth, cfg=SteeringConfig(a.antennas, a.spacing), grid=grid,
                           render_dir=render_dir,
                           manifest={"method": method, "antennas": a.antennas, "spacing_ratio": a.spacing,
                                     "grid": f"stride={grid.stride} offset={grid.offset}" if grid else "none"})
    report.write(report_path)
    write_manifest(report_path, "eval", vars(a), inputs=[a.pred, a.truth],
                   outputs=[report_path] + ([render_dir] if render_dir else []))
    print(report.to_text().split("\n[csv")[0].rstrip())


def cmd_selftest(a) -> int:
    from .selftest import run_selftest

    ok, lines = run_selftest(quick=a.quick)
    for line in lines:
        print(line)
    return EXIT_OK if ok else EXIT_NUMERIC


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ckmscm", description="Complete channel knowledge maps and synthesize correlation maps.")
    p.add_argument("--config", help="JSON file of flag defaults (flags on the command line win)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-scene work")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-scenes", help="generate synthetic scenes")
    s.add_argument("--spec", help="scene-distribution config (JSON or key=value)")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_scenes)

    s = sub.add_parser("ingest", help="convert a PNG dataset into scene directories")
    s.add_argument("--dataset", required=True)
    s.add_argument("--layout", help="layout manifest (JSON); default layout when omitted")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("priors", help="write LoS, building and BS maps for a scene")
    s.add_argument("--scene", required=True, help="scene directory or a root of scene directories")
    s.add_argument("--sigma-sq", type=float, default=DEFAULT_SIGMA_SQ)
    s.add_argument("--tol-db", type=float, default=DEFAULT_TOL_DB)
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD_PIXEL)
    s.add_argument("--out", help="output directory (default: the scene directory)")
    s.set_defaults(func=cmd_priors)

    s = sub.add_parser("sample", help="uniformly sample a tensor or scene directory")
    s.add_argument("--in", dest="input", required=True, help="tensor, scene directory or root of scene directories")
    s.add_argument("--stride", type=int, default=2)
    s.add_argument("--offset", type=_pair, default=(0, 0))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("complete", help="complete an LR tensor or scene directory")
    s.add_argument("--method", choices=("bicubic", "knn", "model"), required=True)
    s.add_argument("--in", dest="input", required=True, help="tensor, scene directory or root of scene directories")
    s.add_argument("--model", help="checkpoint for path 1")
    s.add_argument("--model2", help="checkpoint for path 2 (scene directories)")
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--power", type=float, default=2.0)
    s.add_argument("--stride", type=int, default=None, help="default: grid.json next to the input, else 2")
    s.add_argument("--offset", type=_pair, default=(0, 0))
    s.add_argument("--full-dims", type=_pair, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_complete)

    s = sub.add_parser("train", help="train the super-resolution network")
    s.add_argument("--data", required=True, help="directory of scene directories")
    s.add_argument("--path", type=int, choices=(1, 2), default=1)
    s.add_argument("--blocks", type=int, default=16)
    s.add_argument("--channels", type=int, default=64)
    s.add_argument("--heads", type=int, default=4)
    s.add_argument("--msff", type=_int_list, default=(4, 8, 12))
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--lr", type=float, default=2e-4)
    s.add_argument("--iters", type=int, default=200_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=("f32", "f64"), default="f32")
    s.add_argument("--head-kernel", type=int, default=9)
    s.add_argument("--tail-kernel", type=int, default=9)
    s.add_argument("--attn-pool", type=int, default=1)
    s.add_argument("--input-residual", action="store_true", help="learn a correction on top of bicubic")
    s.add_argument("--epoch-iters", type=int, default=None)
    s.add_argument("--val-fraction", type=float, default=0.0)
    s.add_argument("--keep-best", action="store_true", help="save the lowest validation-loss parameters")
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--stride", type=int, default=2)
    s.add_argument("--offset", type=_pair, default=(0, 0))
    s.add_argument("--no-los", action="store_true")
    s.add_argument("--no-building", action="store_true")
    s.add_argument("--no-bs", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("scm", help="synthesize per-pixel correlation matrices")
    for name in ("pgm1", "pam1", "pgm2", "pam2"):
        s.add_argument(f"--{name}", required=True)
    s.add_argument("--antennas", type=int, default=64)
    s.add_argument("--spacing", type=float, default=0.5)
    s.add_argument("--truth", help="ground-truth scene directory for a cosine pass")
    s.add_argument("--dump", type=_pair, help="row,col of one matrix to save")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scm)

    s = sub.add_parser("eval", help="evaluate completed scenes against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--antennas", type=int, default=64)
    s.add_argument("--spacing", type=float, default=0.5)
    s.add_argument("--stride", type=int, default=None)
    s.add_argument("--offset", type=_pair, default=(0, 0))
    s.add_argument("--no-render", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="gradient checks, oracle equivalences, Monte Carlo")
    s.add_argument("--quick", action="store_true")
    s.set_defaults(func=cmd_selftest)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Built-in defaults < config file < command-line flags."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((t for t in rest if t in sub.choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(known.config).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {known.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {known.config} is not JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    sp = sub.choices[command]
    sub_dests = {a.dest for a in sp._actions}
    top_dests = {a.dest for a in parser._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - sub_dests - top_dests - {"config", "help"})
    if unknown:
        raise UsageError(f"config keys not accepted by {command}: {unknown}")
    for act in sp._actions + parser._actions:
        if act.dest not in cfg:
            continue
        v = cfg[act.dest]
        if isinstance(v, str) and act.type is not None:
            cfg[act.dest] = act.type(v)
        elif isinstance(v, list):
            cfg[act.dest] = tuple(v)
        act.required = False
    sp.set_defaults(**{k: v for k, v in cfg.items() if k in sub_dests})
    parser.set_defaults(**{k: v for k, v in cfg.items() if k in top_dests})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        rc = args.func(args)
        return EXIT_OK if rc is None else rc
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFault, FloatingPointError) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, NoCoverageError, OSError, ValueError, KeyError) as exc:
        msg = exc.strerror + f": {exc.filename}" if isinstance(exc, OSError) and exc.filename else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
