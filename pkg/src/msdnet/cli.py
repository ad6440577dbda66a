"""``msdnet`` command line.

Exit codes: 0 success, 1 usage error, 2 I/O or data error, 3 numerical
failure. Every command is deterministic given its flags and seeds.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
EXIT_CHECKS_FAILED = 1


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value
    return parse


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _float_list(text):
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from .data import save_cube, synth_cube

    cube = synth_cube(args.seed, args.bands, args.height, args.width)
    save_cube(cube, args.out)
    print(f"wrote {args.out}: {cube.bands}x{cube.height}x{cube.width} "
          f"range [{cube.data.min():.4f}, {cube.data.max():.4f}]")
    return EXIT_OK


def cmd_add_noise(args) -> int:
    from .data import NoiseSpec, add_awgn, load_cube, save_cube

    if args.blind is not None:
        lo, hi = args.blind
        spec = NoiseSpec.blind(lo, hi, seed=args.seed)
    else:
        spec = NoiseSpec.fixed(30.0 if args.sigma is None else args.sigma, seed=args.seed)
    noisy, truth = add_awgn(load_cube(args.input), spec)
    save_cube(noisy, args.out)
    if args.truth:
        save_cube(truth, args.truth)
    print(f"wrote {args.out} ({spec.label}, seed {args.seed})")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .data import load_cube
    from .metrics import all_metrics

    values = all_metrics(load_cube(args.ref), load_cube(args.test))
    for name, value in values.items():
        print(f"{name},{value:.6f}")
    return EXIT_OK


def _load_training_cubes(data_dir: Path):
    from .data import load_cube

    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    paths = sorted(data_dir.glob("*.hsif"))
    if not paths:
        raise DataError(f"no .hsif cubes in {data_dir}")
    return [load_cube(p) for p in paths]


def cmd_train(args) -> int:
    from .config import RunConfig, load_config
    from .data import HsiCube, extract_patches
    from .training import NonFiniteLossError, load_checkpoint, save_checkpoint, train

    config, explicit = load_config(args.config) if args.config else (RunConfig(), set())
    cubes = _load_training_cubes(Path(args.data_dir))
    if "bands" not in explicit:
        config = config.replace(bands=min(c.bands for c in cubes))
    bands = config.model.bands
    tc = config.train
    patches = []
    for cube in cubes:
        if cube.bands < bands:
            raise DataError(f"cube with {cube.bands} bands cannot feed a {bands}-band model")
        if min(cube.height, cube.width) < tc.patch_size:
            raise DataError(f"cube {cube.height}x{cube.width} is smaller than patch_size {tc.patch_size}")
        for start in range(0, cube.bands - bands + 1, bands):
            sub = HsiCube(cube.data[start:start + bands])
            patches.extend(extract_patches(sub, tc.patch_size, tc.stride))

    for line in config.to_text().splitlines():
        source = "" if line.split(" =")[0] in explicit else "  # default"
        print(f"# {line}{source}", file=sys.stderr)
    print(f"# {len(patches)} patches of {bands}x{tc.patch_size}x{tc.patch_size}", file=sys.stderr)

    resume = load_checkpoint(args.resume) if args.resume else None
    print("epoch,loss")

    def report(epoch, loss):
        print(f"{epoch},{loss!r}", flush=True)

    try:
        ckpt = train(patches, config, resume=resume, on_epoch=report)
    except NonFiniteLossError as exc:
        save_checkpoint(exc.checkpoint, args.out_checkpoint)
        print(f"error: {exc}; last good checkpoint (epoch {exc.checkpoint.epoch}) "
              f"written to {args.out_checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(ckpt, args.out_checkpoint)
    return EXIT_OK


def cmd_denoise(args) -> int:
    from .data import load_cube, save_cube
    from .model import denoise_cube
    from .training import load_checkpoint

    cube = load_cube(args.input)
    model = load_checkpoint(args.checkpoint).model
    denoised, sigma = denoise_cube(cube, model, return_sigma=True)
    save_cube(denoised, args.out)
    if args.sigma_out:
        save_cube(sigma, args.sigma_out)
    print(f"wrote {args.out}: {denoised.bands}x{denoised.height}x{denoised.width}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .data import NoiseSpec, load_cube
    from .metrics import evaluate
    from .training import load_checkpoint

    settings = [NoiseSpec.fixed(s, seed=args.seed) for s in args.sigmas]
    if args.blind is not None:
        if len(args.blind) != 2:
            raise UsageError("--blind takes lo,hi")
        settings.append(NoiseSpec.blind(*args.blind, seed=args.seed))
    if not settings:
        raise UsageError("no noise settings given")
    report = evaluate(load_cube(args.clean), load_checkpoint(args.checkpoint).model, settings)
    sys.stdout.write(report.to_text())
    if args.report:
        Path(args.report).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .autodiff import ops
    from .verify import run_suites

    fault = ops.inject_fault(args.inject_fault) if args.inject_fault else contextlib.nullcontext()
    with fault:
        checks = run_suites(args.suite, seed=args.seed)
    for check in checks:
        print(check.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_CHECKS_FAILED


def cmd_export_band(args) -> int:
    from .data import export_band_pgm, load_cube

    cube = load_cube(args.input)
    if not 0 <= args.band < cube.bands:
        raise UsageError(f"band {args.band} out of range for a {cube.bands}-band cube")
    export_band_pgm(cube, args.band, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msdnet", description="Hyperspectral denoising with a learned noise estimator.")
    p.add_argument("--threads", type=_positive(int), default=None,
                   help="BLAS threads (default: $MSDNET_THREADS, else library default)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic HSIF cube")
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--bands", type=_positive(int), default=4)
    s.add_argument("--height", type=_positive(int), default=64)
    s.add_argument("--width", type=_positive(int), default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("add-noise", help="corrupt a cube with seeded AWGN")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--sigma", type=float)
    g.add_argument("--blind", type=float, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--truth", help="also write the true sigma map")
    s.set_defaults(func=cmd_add_noise)

    s = sub.add_parser("metrics", help="PSNR, SSIM and SAM of a test cube against a reference")
    s.add_argument("--ref", required=True)
    s.add_argument("--test", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("train", help="train on the cubes in a directory")
    s.add_argument("--config")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--out-checkpoint", required=True)
    s.add_argument("--resume")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", help="denoise a cube with a checkpoint")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sigma-out")
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("evaluate", help="noisy vs denoised PSNR/SSIM/SAM table")
    s.add_argument("--clean", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--sigmas", type=_float_list, default=[30.0, 50.0, 70.0])
    s.add_argument("--blind", type=_float_list, help="lo,hi")
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--report", help="CSV output path")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("verify", help="gradient and oracle self-checks")
    s.add_argument("--suite", choices=("grads", "oracles", "all"), default="all")
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--inject-fault", metavar="OP", choices=("conv2d",),
                   help="perturb an op's backward pass to confirm the harness fails")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("export-band", help="write one band as an 8-bit PGM")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--band", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_band)
    return p


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("MSDNET_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"MSDNET_THREADS must be a positive integer, got {env!r}") from None
        if value <= 0:
            raise UsageError(f"MSDNET_THREADS must be a positive integer, got {env!r}")
        return value
    return None


def main(argv=None) -> int:
    from .autodiff import DimensionError
    from .config import ConfigError
    from .data import HsifError
    from .training import CheckpointError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        threads = _threads(args)
        if threads is not None:
            from threadpoolctl import threadpool_limits
            limit = threadpool_limits(threads)
        else:
            limit = contextlib.nullcontext()
        with limit, np.errstate(over="ignore", invalid="ignore"):
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"msdnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"msdnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, HsifError, CheckpointError, ConfigError, DataError, DimensionError, ValueError) as exc:
        print(f"msdnet: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
