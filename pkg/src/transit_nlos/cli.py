"""Command-line entry point.

Subcommands: ``make-dataset``, ``distort``, ``reconstruct``, ``train``,
``eval``, ``info``.  Global flags ``--config/--seed/--threads/--out`` come
before the subcommand; ``TRANSIT_THREADS`` supplies the thread cap when
``--threads`` is absent.  Every command is deterministic given config and
seed, never mutates its inputs, and uses stable exit codes:

    2  config/schema violation (also argparse usage errors)
    3  I/O or file-format failure
    4  missing checkpoint
    5  training divergence (last finite checkpoint is kept)
    6  evaluation frame-count mismatch
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import fileio, metrics, network, training
from .config import RunConfig, load_config, load_config_file
from .distortion import distort_cube
from .errors import ConfigurationError, DivergenceError, FormatError
from .recon import VolumeGrid, backproject, lct_reconstruct, max_project, upsample_cube

EXIT_SCHEMA = 2
EXIT_IO = 3
EXIT_NO_CHECKPOINT = 4
EXIT_DIVERGED = 5
EXIT_FRAME_MISMATCH = 6

RECON_METHODS = ("backprojection", "lct", "transit")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _apply_threads(requested: int | None) -> None:
    n = requested
    if n is None and os.environ.get("TRANSIT_THREADS"):
        try:
            n = int(os.environ["TRANSIT_THREADS"])
        except ValueError:
            print("warning: ignoring non-integer TRANSIT_THREADS", file=sys.stderr)
    if n is None or n < 1:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        print("warning: threadpoolctl unavailable, --threads ignored", file=sys.stderr)


def _collect_cubes(inputs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.tcube")))
        else:
            paths.append(p)
    if not paths:
        raise FileNotFoundError(f"no .tcube files found in {inputs}")
    return paths


# -- subcommands -------------------------------------------------------------


def cmd_make_dataset(args, cfg: RunConfig) -> int:
    if not cfg.dataset.sequences:
        return _fail(EXIT_SCHEMA, "config has no dataset.sequences entries")
    if args.out is None:
        return _fail(EXIT_SCHEMA, "make-dataset needs --out DIR")
    wall = cfg.render.wall()
    axis = cfg.render.time_axis()
    samples = []
    for idx, seq in enumerate(cfg.dataset.sequences):
        motion = seq.motion
        if args.seed is not None:
            motion = replace(motion, seed=args.seed + idx)
        sample = ds.generate_sequence(
            seq.shape,
            motion,
            wall,
            axis,
            target_resolution=cfg.distortion.target_resolution,
            sampling=cfg.distortion.sampling(),
            noise=cfg.dataset.noise,
            gt_resolution=cfg.dataset.gt_resolution,
            seq_id=seq.seq_id,
        )
        samples.append(sample)
        print(f"sequence {sample.seq_id}: {len(sample.frames)} frames")
    ds.write_dataset(samples, args.out, save_dense=cfg.dataset.save_dense)
    print(f"wrote {len(samples)} sequences to {args.out}")
    return 0


def cmd_distort(args, cfg: RunConfig) -> int:
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in _collect_cubes(args.inputs):
        cube = fileio.read_tcube(path)
        distorted = distort_cube(
            cube, cfg.distortion.target_resolution, sampling=cfg.distortion.sampling()
        )
        target = out_dir / (path.stem + ".distorted.tcube")
        fileio.write_tcube(distorted, target)
        print(f"{path} -> {target}")
    return 0


def _reconstruct_classical(cube, method: str, volume: VolumeGrid, snr: float, out_side: int):
    nx, ny = cube.wall.resolution
    if nx < out_side and out_side % nx == 0 and out_side % ny == 0:
        cube = upsample_cube(cube, (out_side, out_side))
    if method == "lct":
        vol = lct_reconstruct(cube, volume, snr=snr)
    else:
        vol = backproject(cube, volume)
    return max_project(vol)


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    if args.method not in RECON_METHODS:
        return _fail(
            EXIT_SCHEMA,
            f"unknown method '{args.method}'; supported: {', '.join(RECON_METHODS)}",
        )
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _collect_cubes(args.inputs)

    params = None
    if args.method == "transit":
        if not args.checkpoint:
            return _fail(EXIT_NO_CHECKPOINT, "method 'transit' requires --checkpoint")
        if not Path(args.checkpoint).exists():
            return _fail(EXIT_NO_CHECKPOINT, f"checkpoint {args.checkpoint} not found")
        params, _, _ = fileio.load_checkpoint(args.checkpoint)

    volume = VolumeGrid(
        extent=tuple(args.volume_extent),
        z_start=args.volume_z,
        resolution=tuple(args.volume_resolution),
    )
    if args.method == "transit":
        cubes = [fileio.read_tcube(p) for p in paths]
        start = time.perf_counter()
        images = network.infer(cubes, params)
        elapsed = time.perf_counter() - start
        print(f"transit: {len(images)} frames in {elapsed * 1e3:.1f} ms "
              f"({elapsed * 1e3 / len(images):.1f} ms/frame)")
    else:
        images = []
        for p in paths:
            cube = fileio.read_tcube(p)
            start = time.perf_counter()
            images.append(
                _reconstruct_classical(cube, args.method, volume, args.snr, args.output_side)
            )
            print(f"{p.name}: {(time.perf_counter() - start) * 1e3:.1f} ms")
    for path, img in zip(paths, images):
        name = path.name.replace(".tcube", "") + f".{args.method}.pgm"
        fileio.write_pgm(np.asarray(img), out_dir / name)
    print(f"wrote {len(images)} images to {out_dir}")
    return 0


def _load_target_sequences(target_dir: Path):
    if (target_dir / ds.MANIFEST_NAME).exists():
        return [list(seq.distorted) for seq in ds.load_dataset(target_dir)]
    cubes = [fileio.read_tcube(p) for p in sorted(target_dir.glob("*.tcube"))]
    if not cubes:
        raise FileNotFoundError(f"no target cubes in {target_dir}")
    return [cubes]


def cmd_train(args, cfg: RunConfig) -> int:
    out_path = Path(args.out or "checkpoint.tckp")
    if out_path.is_dir():
        out_path = out_path / f"stage{args.stage}.tckp"
    sequences = ds.load_dataset(args.dataset)
    pairs = [(list(s.distorted), list(s.gts)) for s in sequences]
    tcfg = cfg.training
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)

    state = None
    start_epoch = 0
    if args.init:
        if not Path(args.init).exists():
            return _fail(EXIT_NO_CHECKPOINT, f"checkpoint {args.init} not found")
        params, state, sidecar = fileio.load_checkpoint(args.init)
        if args.resume:
            start_epoch = int(sidecar.get("epochs_done", 0))
        else:
            state = None  # fresh optimizer for a new stage
    elif args.stage == 2:
        return _fail(EXIT_NO_CHECKPOINT, "stage 2 requires --init STAGE1_CHECKPOINT")
    else:
        params = network.TransitParams.init(cfg.model)

    shape = pairs[0][0][0].shape
    expected = (params.config.scan_res, params.config.scan_res, params.config.time_bins)
    if shape != expected:
        return _fail(EXIT_SCHEMA, f"dataset cubes are {shape}, model expects {expected}")

    try:
        if args.stage == 1:
            params, state, trace = training.train_stage1(
                pairs, params, tcfg, state=state, start_epoch=start_epoch
            )
        else:
            if not args.target:
                return _fail(EXIT_SCHEMA, "stage 2 requires --target DIR of unlabeled cubes")
            targets = _load_target_sequences(Path(args.target))
            params, state, trace = training.train_stage2(
                pairs, targets, params, tcfg, state=state, start_epoch=start_epoch
            )
    except DivergenceError as exc:
        fileio.save_checkpoint(
            out_path, exc.params, extra={"stage": args.stage, "diverged": True}
        )
        return _fail(EXIT_DIVERGED, f"{exc}; last finite checkpoint kept at {out_path}")

    fileio.save_checkpoint(
        out_path,
        params,
        state,
        extra={"stage": args.stage, "epochs_done": tcfg.epochs},
    )
    trace_path = Path(str(out_path) + ".trace.csv")
    fileio.write_trace(trace, trace_path)
    print(f"stage {args.stage}: final loss {trace[-1].total:.6g}; "
          f"checkpoint {out_path}, trace {trace_path}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    recon_dir, gt_dir = Path(args.recon), Path(args.gt)
    recon_files = {p.stem: p for p in sorted(recon_dir.glob("*.pgm"))}
    gt_files = {p.stem: p for p in sorted(gt_dir.glob("*.pgm"))}

    def stem_key(stems):
        return {s.split(".")[0] for s in stems}

    recon_ids, gt_ids = stem_key(recon_files), stem_key(gt_files)
    if not recon_files or not gt_files:
        return _fail(EXIT_FRAME_MISMATCH, "no .pgm frames to evaluate")
    if len(recon_files) != len(gt_files) or recon_ids != gt_ids:
        missing = sorted(recon_ids.symmetric_difference(gt_ids))
        return _fail(EXIT_FRAME_MISMATCH, f"frame sets differ; unmatched ids: {missing}")
    recons = [fileio.read_pgm(recon_files[s]) for s in sorted(recon_files)]
    gts = [fileio.read_pgm(gt_files[s]) for s in sorted(gt_files)]
    report = metrics.evaluate_sequence(
        recons, gts, object_id=args.object or gt_dir.name, method=args.method_name or recon_dir.name
    )
    out_csv = args.out or "metrics.csv"
    fileio.write_metric_reports([report], out_csv, per_frame=cfg.metrics.per_frame)
    means = ", ".join(f"{m}={report.mean(m):.4g}" for m in metrics.METRIC_NAMES)
    print(f"{report.object_id}/{report.method}: {means} -> {out_csv}")
    return 0


def cmd_info(args, cfg: RunConfig) -> int:
    path = Path(args.path)
    if path.is_dir():
        seqs = ds.load_dataset(path)
        print(f"dataset with {len(seqs)} sequences")
        for s in seqs:
            print(f"  {s.seq_id}: {len(s.distorted)} frames, cube {s.distorted[0].shape}")
        return 0
    if path.suffix == ".tcube":
        cube = fileio.read_tcube(path)
        print(f"TCUBE {cube.shape[0]}x{cube.shape[1]}x{cube.shape[2]} kind={cube.kind.name}")
        print(f"  bin width {cube.time_axis.bin_width * 1e12:.3f} ps, "
              f"wall {cube.wall.extent[0]:.2f}x{cube.wall.extent[1]:.2f} m, "
              f"detector at {cube.wall.detector_origin}")
        print(f"  total counts {cube.data.sum():.4g}, peak {cube.data.max():.4g}")
        return 0
    params, state, sidecar = fileio.load_checkpoint(path)
    n_params = sum(t.data.size for t in params.tensors.values())
    print(f"checkpoint: {len(params.tensors)} tensors, {n_params} parameters")
    print(f"  model: {params.config}")
    print(f"  adam step {state.step}, sidecar keys {sorted(sidecar)}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transit",
        description="Fast-scan non-line-of-sight videography toolkit",
    )
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override configured seeds")
    parser.add_argument("--threads", type=int, help="cap numeric thread pools (TRANSIT_THREADS)")
    parser.add_argument("--out", help="output file or directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="generate a synthetic sequence dataset")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("distort", help="apply the fast-scan model to dense cubes")
    p.add_argument("inputs", nargs="+", help="dense .tcube files or directories")
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("reconstruct", help="reconstruct images from cubes")
    p.add_argument("inputs", nargs="+", help=".tcube files or directories")
    p.add_argument("--method", required=True, help="|".join(RECON_METHODS))
    p.add_argument("--checkpoint", help="trained parameters (method=transit)")
    p.add_argument("--snr", type=float, default=1e2, help="Wiener SNR for lct")
    p.add_argument("--output-side", type=int, default=64, help="upsample inputs to this scan size")
    p.add_argument("--volume-extent", type=float, nargs=3, default=(2.0, 2.0, 2.0))
    p.add_argument("--volume-z", type=float, default=0.5)
    p.add_argument("--volume-resolution", type=int, nargs=3, default=(64, 64, 64))
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="optimize the reconstruction network")
    p.add_argument("dataset", help="dataset directory (manifest + cubes + GT)")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--resume", action="store_true", help="continue --init at its saved epoch")
    p.add_argument("--target", help="unlabeled target-domain cubes (stage 2)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score reconstructions against ground truth")
    p.add_argument("--recon", required=True, help="directory of reconstructed .pgm frames")
    p.add_argument("--gt", required=True, help="directory of ground-truth .pgm frames")
    p.add_argument("--object", help="object label for the report")
    p.add_argument("--method-name", help="method label for the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="describe a cube, checkpoint or dataset")
    p.add_argument("path")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(args.threads)
    try:
        cfg = load_config_file(args.config) if args.config else load_config({})
    except ConfigurationError as exc:
        return _fail(EXIT_SCHEMA, str(exc))
    try:
        return args.func(args, cfg)
    except ConfigurationError as exc:
        return _fail(EXIT_SCHEMA, str(exc))
    except FormatError as exc:
        return _fail(EXIT_IO, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_IO, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))


if __name__ == "__main__":
    sys.exit(main())
