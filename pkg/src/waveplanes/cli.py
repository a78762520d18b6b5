"""
WavePlanes command-line interface

Subcommands: train, render, eval, compress, decompress, bench-codec, info, planes.
Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

import argparse
import json
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .codec import (
    BACKEND_NAMES,
    CHECKPOINT_SUFFIX,
    DEFAULT_THRESHOLD,
    bench_codec,
    compress_model,
    load_model,
    read_header,
    save_checkpoint,
)
from .config import RunConfig, RunConfigManager
from .data import Dataset, evaluate, gen_synthetic, load_dnerf, split_fg_bg, write_image
from .errors import WavePlanesError
from .field import refresh_cache, zero_space_time
from .optim import Trainer
from .parallel import resolve_workers
from .render import Camera, look_at, render_image
from .visualize import write_plane_previews

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE = "waveplanes.log"
EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class WavePlanesArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)


def _add_file_log(directory: Path) -> RotatingFileHandler:
    directory.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(directory / LOG_FILE, maxBytes=10 * 1024 * 1024, backupCount=5)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def _load_dataset(run_config: RunConfig, workers: int, data_dir: Optional[str] = None) -> Dataset:
    data = run_config.data
    if data_dir is not None:
        return load_dnerf(data_dir, data.background, workers=workers)
    if data.kind == "dnerf":
        return load_dnerf(data.path, data.background, workers=workers)
    return gen_synthetic(data.synthetic, data.background, run_config.train.near, run_config.train.far, workers).dataset


def _run_config(args) -> RunConfig:
    manager = RunConfigManager(getattr(args, "config", None))
    if args.seed is not None:
        manager.update_config({"train": {"seed": args.seed}})
    return manager.get_config()


def cmd_train(args) -> int:
    manager = RunConfigManager(args.config)
    updates = {}
    if args.seed is not None:
        updates.setdefault("train", {})["seed"] = args.seed
    if args.steps is not None:
        updates.setdefault("train", {})["steps"] = args.steps
    if args.output is not None:
        updates["output"] = {"directory": args.output}
    if args.workers is not None:
        updates.setdefault("train", {})["workers"] = args.workers
    if updates:
        manager.update_config(updates)
    run_config = manager.get_config()

    output_dir = Path(run_config.output.directory)
    handler = _add_file_log(output_dir)
    try:
        manager.save_resolved(output_dir)
        workers = resolve_workers(run_config.train.workers)
        dataset = _load_dataset(run_config, workers, args.data)
        trainer = Trainer(run_config, dataset, output_dir=output_dir, workers=workers)
        stats = trainer.run()
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    print(json.dumps(stats.to_dict(), indent=2))
    return EXIT_OK


def _camera_from_args(args, background: str) -> Camera:
    if args.camera is not None:
        with open(args.camera, "r") as f:
            spec = json.load(f)
        try:
            return Camera.from_fov(
                np.asarray(spec["transform_matrix"], dtype=np.float64),
                float(spec["camera_angle_x"]),
                int(spec.get("width", args.width)),
                int(spec.get("height", args.height)),
                background,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise WavePlanesError(f"Invalid camera file {args.camera}: {e}") from e
    azimuth, elevation = np.radians(args.azimuth), np.radians(args.elevation)
    eye = args.radius * np.array(
        [np.cos(elevation) * np.cos(azimuth), np.cos(elevation) * np.sin(azimuth), np.sin(elevation)]
    )
    return Camera.from_fov(look_at(eye), args.fov, args.width, args.height, background)


def cmd_render(args) -> int:
    model = load_model(args.checkpoint)
    field = zero_space_time(model.field) if args.static else model.field
    cam = _camera_from_args(args, model.settings.background)
    if args.t_sweep is not None:
        low, high = model.config.t_range
        times: List[float] = list(np.linspace(low, high, args.t_sweep))
    else:
        times = [args.t]

    out_dir = Path(args.out)
    cache = refresh_cache(field)
    workers = resolve_workers(args.workers)
    for i, t in enumerate(times):
        image, _ = render_image(field, cache, model.decoder, cam, t, model.settings, workers=workers)
        path = write_image(out_dir / f"frame_{i:04d}.png", image)
        logger.info(f"Rendered t={t:.4f} to {path}")
    print(f"Rendered {len(times)} frame(s) to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    run_config = _run_config(args)
    workers = resolve_workers(args.workers)
    dataset = _load_dataset(run_config, workers, args.data)
    report = evaluate(model.field, model.decoder, dataset, model.settings, args.split, args.dilation, workers)
    if args.out:
        report.write_json(args.out)
        logger.info(f"Evaluation report written to {args.out}")
    if args.masks:
        for i, frame in enumerate(dataset.split(args.split)):
            foreground, _ = split_fg_bg(frame.alpha, args.dilation)
            write_image(Path(args.masks) / f"fg_{i:03d}.png", foreground.astype(np.float64))
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "frames"}, indent=2))
    return EXIT_OK


def _print_report(report) -> None:
    print(f"{'plane':<6} {'father nz':>12} {'mother nz':>14} {'sparsity':>9}")
    for plane in report.planes:
        print(
            f"{plane.plane:<6} {plane.father_entries:>5}/{plane.father_total:<6} "
            f"{plane.mother_entries:>6}/{plane.mother_total:<7} {plane.sparsity:>9.4f}"
        )
    print(f"{report.backend}: {report.payload_bytes} payload bytes -> {report.compressed_bytes} bytes")


def cmd_compress(args) -> int:
    model = load_model(args.checkpoint)
    compressed = compress_model(
        model.field, model.decoder, args.tau, args.backend, model.settings, resolve_workers(args.workers)
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(compressed.data)
    _print_report(compressed.report)
    return EXIT_OK


def cmd_decompress(args) -> int:
    model = load_model(args.model)
    out = Path(args.out)
    if not out.suffix:
        out = out.with_suffix(CHECKPOINT_SUFFIX)
    save_checkpoint(out, model.field, model.decoder, model.settings)
    print(f"Dense checkpoint written to {out}")
    return EXIT_OK


def cmd_bench_codec(args) -> int:
    model = load_model(args.checkpoint)
    backends = [b.strip() for b in args.backends.split(",") if b.strip()]
    rows = bench_codec(model.field, model.decoder, args.tau, backends, model.settings)
    print(f"{'backend':<8} {'bytes':>10} {'ratio':>8}")
    for row in rows:
        print(f"{row.backend:<8} {row.bytes:>10} {row.ratio:>8.2f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump([row.to_dict() for row in rows], f, indent=2)
    return EXIT_OK


def cmd_info(args) -> int:
    try:
        data = Path(args.file).read_bytes()
    except OSError as e:
        raise WavePlanesError(f"Cannot read {args.file}: {e}") from e
    print(json.dumps(read_header(data), indent=2))
    return EXIT_OK


def cmd_planes(args) -> int:
    model = load_model(args.checkpoint)
    written = write_plane_previews(model.field, refresh_cache(model.field), args.out)
    print(f"Wrote {len(written)} images to {args.out}")
    return EXIT_OK


def build_arg_parser() -> argparse.ArgumentParser:
    parser = WavePlanesArgumentParser(prog="waveplanes", description="Wavelet-plane dynamic radiance fields")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="Override train.seed")
    parser.add_argument("--workers", type=int, default=None, help="Worker threads (WAVEPLANE_THREADS overrides)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train a model from a run config")
    train.add_argument("--config", default=None, help="Run config JSON (defaults if omitted)")
    train.add_argument("--data", default=None, help="D-NeRF directory overriding the config's data section")
    train.add_argument("--output", default=None, help="Output directory overriding output.directory")
    train.add_argument("--steps", type=int, default=None)
    train.set_defaults(func=cmd_train)

    render = sub.add_parser("render", help="Render frames from a model file")
    render.add_argument("checkpoint")
    render.add_argument("--out", required=True, help="Output directory for PNG frames")
    times = render.add_mutually_exclusive_group()
    times.add_argument("--t", type=float, default=0.0)
    times.add_argument("--t-sweep", type=int, default=None, metavar="N", help="N frames across the time range")
    render.add_argument("--static", action="store_true", help="Zero space-time coefficients before rendering")
    render.add_argument("--camera", default=None, help="Camera JSON with transform_matrix and camera_angle_x")
    render.add_argument("--azimuth", type=float, default=0.0, help="Orbit azimuth in degrees")
    render.add_argument("--elevation", type=float, default=20.0, help="Orbit elevation in degrees")
    render.add_argument("--radius", type=float, default=4.0)
    render.add_argument("--fov", type=float, default=0.6, help="Horizontal field of view in radians")
    render.add_argument("--width", type=int, default=64)
    render.add_argument("--height", type=int, default=64)
    render.set_defaults(func=cmd_render)

    ev = sub.add_parser("eval", help="Score a model on a dataset split")
    ev.add_argument("checkpoint")
    ev.add_argument("--config", default=None, help="Run config whose data section defines the dataset")
    ev.add_argument("--data", default=None, help="D-NeRF directory")
    ev.add_argument("--split", default="test")
    ev.add_argument("--dilation", type=int, default=5, help="Foreground dilation radius in pixels")
    ev.add_argument("--out", default=None, help="EvalReport JSON path")
    ev.add_argument("--masks", default=None, help="Directory for foreground mask PNGs")
    ev.set_defaults(func=cmd_eval)

    compress = sub.add_parser("compress", help="Threshold and compress a checkpoint")
    compress.add_argument("checkpoint")
    compress.add_argument("--out", required=True)
    compress.add_argument("--tau", type=float, default=DEFAULT_THRESHOLD)
    compress.add_argument("--backend", default="lzma", choices=BACKEND_NAMES)
    compress.set_defaults(func=cmd_compress)

    decompress = sub.add_parser("decompress", help="Expand a compressed model into a dense checkpoint")
    decompress.add_argument("model")
    decompress.add_argument("--out", required=True)
    decompress.set_defaults(func=cmd_decompress)

    bench = sub.add_parser("bench-codec", help="Compare compressed sizes across backends")
    bench.add_argument("checkpoint")
    bench.add_argument("--tau", type=float, default=DEFAULT_THRESHOLD)
    bench.add_argument("--backends", default=",".join(BACKEND_NAMES))
    bench.add_argument("--json", default=None)
    bench.set_defaults(func=cmd_bench_codec)

    info = sub.add_parser("info", help="Print the header of a .wvck or .wvpl file")
    info.add_argument("file")
    info.set_defaults(func=cmd_info)

    planes = sub.add_parser("planes", help="Write coefficient mosaics and feature-plane previews")
    planes.add_argument("checkpoint")
    planes.add_argument("--out", required=True)
    planes.set_defaults(func=cmd_planes)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except (WavePlanesError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=args.log_level == "DEBUG")
        print(f"waveplanes {args.command}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
