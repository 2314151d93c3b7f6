"""Command-line entry point for the full pipeline.

Subcommands: genmask, encode, init, reconstruct, baseline, demosaic,
train-toy, bench, metrics. Exit codes: 0 success, 1 usage error, 2
data/shape/config error, 3 numeric/training error.

Every run emits exactly one JSON-line manifest on stderr (command, resolved
configuration, paths, seed, version, duration). PSNR is capped at 100 dB
for identical inputs. The QUADSCI_THREADS environment variable caps
internal parallelism (0 = auto); the reference implementation is
effectively single-threaded and deterministic regardless.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import GapConfig, demosaic_bilinear, expand_cfa, gap_tv
from .cube import VideoCube, evaluate, load_cube, save_cube, save_ppm
from .errors import NumericError, QuadsciError, TrainingError
from .model import (
    NetworkConfig,
    attention_complexity,
    count_params,
    flop_breakdown,
    forward,
    load_weights,
    save_weights,
)
from .sensing import CfaPattern, MaskSet, encode, gen_masks, initialize, mosaic
from .train import ToyDataSpec, train_toy, write_curve_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors -> exit 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _pattern(name: str) -> CfaPattern:
    return CfaPattern.BAYER if name == "bayer" else CfaPattern.QUAD_BAYER


def _load_maskset(path) -> MaskSet:
    cube = load_cube(path)
    if cube.data.ndim != 4 or cube.dims[2] != 1:
        raise QuadsciError(f"{path}: mask cube must be H x W x 1 x T, got {cube.dims}")
    m = cube.data
    if not np.all((m == 0) | (m == 1)):
        raise QuadsciError(f"{path}: mask values must be binary")
    return MaskSet(
        masks=cube, sum_t=m.sum(axis=(2, 3)), sum_sq_t=(m * m).sum(axis=(2, 3)), seed=0
    )


def _measurement_from(path, masks: MaskSet):
    from .sensing import Measurement

    y = load_cube(path)
    if y.data.ndim != 4 or y.dims[2:] != (1, 1):
        raise QuadsciError(f"{path}: measurement must be H x W x 1 x 1, got {y.dims}")
    h, w, t = masks.shape
    if y.dims[:2] != (h, w):
        raise QuadsciError(
            f"measurement dims {y.dims[:2]} do not match mask dims {(h, w)}"
        )
    return Measurement(y=y, compression_ratio=t, noise_sigma=0.0)


def _dump_frames(cube: VideoCube, directory) -> None:
    Path(directory).mkdir(parents=True, exist_ok=True)
    h, w, c, t = cube.dims
    for k in range(t):
        frame = cube.data[:, :, :, k]
        if c == 1:
            frame = np.repeat(frame, 3, axis=2)
        save_ppm(frame, Path(directory) / f"frame_{k:04d}.ppm")


def _parse_iters(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        parts += [50, 50]
    if len(parts) != 3 or any(p < 0 for p in parts):
        raise QuadsciError(f"--iters expects 1 or 3 non-negative counts, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def build_parser() -> _Parser:
    parser = _Parser(prog="quadsci", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genmask", parents=[], help="generate seeded binary masks")
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("encode", help="mosaic (if RGB) and encode a snapshot")
    p.add_argument("--video", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--pattern", choices=["bayer", "quad"], default="quad")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("init", help="normalized-measurement initialization")
    p.add_argument("--meas", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="network reconstruction from a snapshot")
    p.add_argument("--meas", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--variant", choices=["t", "s", "b"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-frames")

    p = sub.add_parser("baseline", help="GAP-TV-like training-free reconstruction")
    p.add_argument("--meas", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--tv-weight", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-frames")

    p = sub.add_parser("demosaic", help="expand raw through the CFA and demosaic")
    p.add_argument("--raw", required=True)
    p.add_argument("--pattern", choices=["bayer", "quad"], default="quad")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-toy", help="toy training run on synthetic clips")
    p.add_argument("--variant", choices=["t", "s", "b"], default="t")
    p.add_argument("--h", type=int, default=32)
    p.add_argument("--w", type=int, default=32)
    p.add_argument("--t", type=int, default=4)
    p.add_argument("--iters", default="200,50,50", help="stage iteration counts a,b,c")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-weights", required=True)
    p.add_argument("--out-curve", required=True)

    p = sub.add_parser("bench", help="parameter count, FLOPs and scan complexity")
    p.add_argument("--variant", choices=["t", "s", "b"], required=True)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--t", type=int, required=True)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two cubes")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)

    return parser


def _run(args: argparse.Namespace) -> None:
    cmd = args.command
    if cmd == "genmask":
        save_cube(gen_masks(args.h, args.w, args.t, args.seed).masks, args.out)
    elif cmd == "encode":
        masks = _load_maskset(args.mask)
        video = load_cube(args.video)
        if video.data.ndim == 4 and video.dims[2] == 3:
            video = mosaic(video, _pattern(args.pattern))
        meas = encode(video, masks, args.noise_sigma, args.seed)
        save_cube(meas.y, args.out)
    elif cmd == "init":
        masks = _load_maskset(args.mask)
        save_cube(initialize(_measurement_from(args.meas, masks), masks), args.out)
    elif cmd == "reconstruct":
        masks = _load_maskset(args.mask)
        meas = _measurement_from(args.meas, masks)
        h, w, t = masks.shape
        config = NetworkConfig(variant=args.variant.upper(), frames=t, height=h, width=w)
        model = load_weights(args.weights, config)
        out = forward(model, initialize(meas, masks))
        save_cube(out, args.out)
        if args.dump_frames:
            _dump_frames(VideoCube(np.clip(out.data, 0.0, 1.0)), args.dump_frames)
    elif cmd == "baseline":
        masks = _load_maskset(args.mask)
        meas = _measurement_from(args.meas, masks)
        out = gap_tv(meas, masks, GapConfig(iterations=args.iters, tv_weight=args.tv_weight))
        save_cube(out, args.out)
        if args.dump_frames:
            _dump_frames(VideoCube(np.clip(out.data, 0.0, 1.0)), args.dump_frames)
    elif cmd == "demosaic":
        raw = load_cube(args.raw)
        pattern = _pattern(args.pattern)
        save_cube(demosaic_bilinear(expand_cfa(raw, pattern), pattern), args.out)
    elif cmd == "train-toy":
        config = NetworkConfig(
            variant=args.variant.upper(), frames=args.t, height=args.h, width=args.w
        )
        spec = ToyDataSpec(
            height=args.h,
            width=args.w,
            frames=args.t,
            square=min(10, min(args.h, args.w) // 2),
            stage_iters=_parse_iters(args.iters),
        )
        result = train_toy(config, spec, args.seed)
        save_weights(result.model, args.out_weights)
        write_curve_csv(result.curve, args.out_curve)
    elif cmd == "bench":
        config = NetworkConfig(variant=args.variant.upper(), frames=args.t)
        from .model import build

        model = build(config, seed=0)
        bd = flop_breakdown(config, args.h, args.w, args.t)
        scan_cx = attention_complexity(
            args.h, args.w, args.t, config.base_channels, config.d_state
        )
        print(f"params: {count_params(model)}")
        print(f"flops: {bd.total}")
        print(f"scan_flops: {bd.scan}")
        print(f"attention_complexity: {scan_cx}")
    elif cmd == "metrics":
        report = evaluate(load_cube(args.ref), load_cube(args.test))
        print(f"PSNR: {report.psnr_db:.2f} dB")
        print(f"SSIM: {report.ssim:.4f}")


def _manifest(args: argparse.Namespace, started: float) -> str:
    resolved = {k: v for k, v in vars(args).items() if k != "command"}
    return json.dumps(
        {
            "command": args.command,
            "config": resolved,
            "seed": resolved.get("seed"),
            "version": __version__,
            "duration_s": round(time.monotonic() - started, 6),
        },
        sort_keys=True,
    )


def parse_manifest(line: str) -> dict:
    """Parse a manifest line emitted by a previous run."""
    return json.loads(line)


def main(argv=None) -> int:
    _ = os.environ.get("QUADSCI_THREADS", "0")  # 0 = auto; execution is deterministic
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.monotonic()
    try:
        _run(args)
    except (NumericError, TrainingError) as exc:
        print(f"quadsci {args.command}: {exc}", file=sys.stderr)
        print(_manifest(args, started), file=sys.stderr)
        return 3
    except QuadsciError as exc:
        print(f"quadsci {args.command}: {exc}", file=sys.stderr)
        print(_manifest(args, started), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"quadsci {args.command}: {exc}", file=sys.stderr)
        print(_manifest(args, started), file=sys.stderr)
        return 2
    print(_manifest(args, started), file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
