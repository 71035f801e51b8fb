"""Command line entry point: ``hsiprop {convert,classify,cluster,noise,bench}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .cube import (
    FormatError,
    HsiCube,
    convert_mat,
    convert_text,
    load_cube,
    max_abs_scale,
    parse_band_list,
    save_cube,
    save_labels,
)
from .datasets import synthetic_scene
from .noise import MODELS, NoiseSpec, apply_noise

EXIT_NOT_CONVERGED = 3
EXIT_BAD_INPUT = 2


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file (flags override it)")
    p.add_argument("--cube", help="HSC1 cube file")
    p.add_argument("--labels", help="HSL1 ground-truth file")
    p.add_argument("--preset", choices=sorted(pipeline.PRESETS))
    p.add_argument("--d", type=int, help="PCA dimension")
    p.add_argument("--theta", type=int, help="pixels per slice")
    p.add_argument("--sigma2", type=float, help="Gaussian kernel bandwidth (squared)")
    p.add_argument("--k", type=int, help="neighbours kept by top-k pruning")
    p.add_argument("--alpha", type=float, help="propagation balance in (0, 1)")
    p.add_argument("--m", type=int, help="anchor count for k-means anchors")
    p.add_argument("--s", type=int, help="labels per class")
    p.add_argument("--c", type=int, help="number of classes / clusters")
    p.add_argument("--anchor-strategy", choices=["sample", "kmeans"])
    p.add_argument("--beta", type=float)
    p.add_argument("--h", type=int, help="non-zeros per row of the cluster graph")
    p.add_argument("--solver", choices=["cg", "direct", "iterative"])
    p.add_argument("--noise", choices=MODELS)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--classify-background", action="store_true", default=None)
    p.add_argument("--out", help="output prefix for .hsl/.pgm/.json/.metrics.txt")


_RUN_KEYS = ("cube", "labels", "preset", "d", "theta", "sigma2", "k", "alpha", "m", "s", "c",
             "anchor_strategy", "beta", "h", "solver", "noise", "noise_scale", "seed",
             "workers", "classify_background")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsiprop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convert", help="text dump or .mat file -> HSC1/HSL1")
    src = conv.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="whitespace dump, one pixel per line, bands as columns")
    src.add_argument("--mat", help="MATLAB file holding one 3-D array")
    conv.add_argument("--height", type=int)
    conv.add_argument("--width", type=int)
    conv.add_argument("--labels-text", help="one class id per pixel, raster order")
    conv.add_argument("--labels-mat", help="MATLAB file holding one 2-D label array")
    conv.add_argument("--drop-bands", default="", help="zero-based band list, e.g. 103-107,149-162")
    conv.add_argument("-o", "--out", required=True, help="output prefix (.hsc and .hsl)")

    for name, helptext in (("classify", "semi-supervised run with ground-truth anchor labels"),
                           ("cluster", "unsupervised run with clustered anchor labels")):
        _run_options(sub.add_parser(name, help=helptext))

    noise = sub.add_parser("noise", help="write a noisy copy of a cube (scaled to [0, 1])")
    noise.add_argument("--cube", required=True)
    noise.add_argument("--noise", choices=MODELS, required=True)
    noise.add_argument("--noise-scale", type=float, required=True)
    noise.add_argument("--seed", type=int, default=0)
    noise.add_argument("-o", "--out", required=True)

    bench = sub.add_parser("bench", help="median stage timings")
    bench.add_argument("--config", action="append", default=[], help="run config file (repeatable)")
    bench.add_argument("--synthetic", default="", help="comma list of synthetic pixel counts")
    bench.add_argument("--bands", type=int, default=60)
    bench.add_argument("--theta", type=int, default=2000)
    bench.add_argument("--k", type=int, default=200)
    bench.add_argument("--workers", default="1", help="comma list of worker counts")
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args, mode: str) -> pipeline.RunConfig:
    overrides = {key: getattr(args, key) for key in _RUN_KEYS}
    overrides["mode"] = mode
    return pipeline.load_config(args.config, **overrides)


def cmd_convert(args) -> int:
    drop = parse_band_list(args.drop_bands)
    if args.text:
        if not (args.height and args.width):
            raise SystemExit("convert --text needs --height and --width")
        cube = convert_text(args.text, args.height, args.width, drop, args.labels_text)
    else:
        cube = convert_mat(args.mat, drop, args.labels_mat)
    out = Path(args.out)
    save_cube(cube, out.with_suffix(".hsc"))
    if cube.truth is not None:
        save_labels(cube.truth, out.with_suffix(".hsl"))
    print(f"{out.with_suffix('.hsc')}: {cube.height}x{cube.width}x{cube.bands}"
          f" ({len(drop)} bands dropped)")
    return 0


def cmd_run(args, mode: str) -> int:
    cfg = _config_from_args(args, mode)
    result = pipeline.run_pipeline(cfg)
    from .metrics import format_table

    sys.stdout.write(format_table(result.report["metrics"]))
    if args.out:
        for kind, path in pipeline.export(result, args.out).items():
            print(f"{kind}: {path}")
    if not result.report["converged"]:
        print("warning: run did not fully converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return 0


def cmd_noise(args) -> int:
    cube = load_cube(args.cube)
    scaled, _ = max_abs_scale(cube.values)
    noisy = apply_noise(scaled, NoiseSpec(args.noise, args.noise_scale, args.seed))
    save_cube(HsiCube(noisy.astype(np.float32)), args.out)
    print(f"{args.out}: {args.noise} noise at scale {args.noise_scale}")
    return 0


def cmd_bench(args) -> int:
    workers = [int(w) for w in args.workers.split(",") if w]
    configs = []
    for path in args.config:
        base = pipeline.load_config(path)
        configs += [(Path(path).stem, base.replace(workers=w), None) for w in workers]
    for n in [int(v) for v in args.synthetic.split(",") if v]:
        side = int(np.ceil(np.sqrt(n)))
        cube = synthetic_scene(side, side, args.bands, n_classes=8, background=0.0, seed=args.seed)
        cfg = pipeline.RunConfig(d=min(20, args.bands), theta=args.theta, sigma2=0.05, k=args.k,
                                 s=5, seed=args.seed)
        configs += [(f"synthetic-{side * side}", cfg.replace(workers=w), cube) for w in workers]
    if not configs:
        raise SystemExit("bench needs --config or --synthetic")
    rows = pipeline.bench(configs, args.repeats)
    sys.stdout.write(pipeline.format_bench(rows))
    print("note: --workers bounds the thread pool (core budget); clock speed is not emulated")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "convert":
            return cmd_convert(args)
        if args.command in ("classify", "cluster"):
            return cmd_run(args, "truth" if args.command == "classify" else "cluster")
        if args.command == "noise":
            return cmd_noise(args)
        return cmd_bench(args)
    except (FormatError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except pipeline.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
