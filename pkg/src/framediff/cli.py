"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .data import DataError, generate_dataset, read_image, write_image
from .pipeline import (
    InterpolationModel,
    evaluate,
    interpolate_files,
    interpolate_x4,
    load_autoencoder,
    train_autoencoder,
    train_denoiser,
)
from .report import write_evaluation_report, write_training_report
from .tensor import NumericsError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def build_parser():
    p = _Parser(prog="framediff",
                description="Latent-diffusion video frame interpolation, desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_sampler_flags(sp):
        sp.add_argument("--sampler", choices=["ddim", "ddpm"], default=None)
        sp.add_argument("--steps", type=int, default=None,
                        help="accelerated-sampler step count")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("train-ae", help="stage 1: train the frame autoencoder")
    sp.add_argument("--config", default=None)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", default=None)

    sp = sub.add_parser("train-dn", help="stage 2: train the latent denoiser")
    sp.add_argument("--config", default=None)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ae", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", default=None)

    sp = sub.add_parser("interpolate", help="synthesize the middle frame of a pair")
    sp.add_argument("--frame0", required=True)
    sp.add_argument("--frame1", required=True)
    sp.add_argument("--ae", required=True)
    sp.add_argument("--dn", required=True)
    add_sampler_flags(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("x4", help="insert three frames between two endpoints")
    sp.add_argument("--first", required=True)
    sp.add_argument("--last", required=True)
    sp.add_argument("--ae", required=True)
    sp.add_argument("--dn", required=True)
    add_sampler_flags(sp)
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("evaluate", help="score interpolations against ground truth")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ae", required=True)
    sp.add_argument("--dn", default=None,
                    help="denoiser checkpoint; omit to score autoencoder reconstruction")
    add_sampler_flags(sp)
    sp.add_argument("--metrics", default="psnr,ssim")
    sp.add_argument("--save-frames", default=None)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("gen-synth", help="generate a synthetic triplet dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--size", type=int, default=64)
    return p


def _run(args):
    if args.command == "train-ae":
        cfg = load_config(args.config)
        rows = train_autoencoder(cfg, args.data, args.out, resume=args.resume,
                                 log_cb=_progress("ae"))
        csv_path, fig = write_training_report(args.out, rows, ["l1", "vq", "total"])
        print(f"wrote {args.out}, {csv_path}, {fig}")
    elif args.command == "train-dn":
        cfg = load_config(args.config)
        rows = train_denoiser(cfg, args.data, args.ae, args.out, resume=args.resume,
                              log_cb=_progress("dn"))
        csv_path, fig = write_training_report(args.out, rows, ["loss"])
        print(f"wrote {args.out}, {csv_path}, {fig}")
    elif args.command == "interpolate":
        model = InterpolationModel.load(args.ae, args.dn, mode=args.sampler,
                                        ddim_steps=args.steps, seed=args.seed)
        interpolate_files(model, args.frame0, args.frame1, args.out)
        print(f"wrote {args.out}")
    elif args.command == "x4":
        model = InterpolationModel.load(args.ae, args.dn, mode=args.sampler,
                                        ddim_steps=args.steps, seed=args.seed)
        first = read_image(args.first)
        last = read_image(args.last)
        draws = iter(range(3))
        outs = interpolate_x4(
            first, last,
            lambda a, b: model.interpolate_arrays(a, b, draw=next(draws)))
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for idx, frame in zip((2, 3, 4), outs):
            write_image(out_dir / f"frame{idx}.png", frame)
        print(f"wrote 3 frames under {out_dir}")
    elif args.command == "evaluate":
        metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
        try:
            if args.dn:
                model = InterpolationModel.load(args.ae, args.dn, mode=args.sampler,
                                                ddim_steps=args.steps, seed=args.seed)
                rows, means = evaluate(args.data, metrics, model=model,
                                       save_dir=args.save_frames)
            else:
                ae, _, _, _ = load_autoencoder(args.ae)
                ae.requires_grad_(False)
                rows, means = evaluate(args.data, metrics, ae_only=ae,
                                       save_dir=args.save_frames)
        except ValueError as e:
            raise UsageError(str(e)) from e
        csv_path, fig = write_evaluation_report(args.out, rows, means, metrics)
        summary = "  ".join(f"{m}={means[m]:.4f}" for m in metrics)
        print(f"wrote {csv_path}, {fig}  ({summary})")
    elif args.command == "gen-synth":
        out = generate_dataset(args.out, args.count, args.seed, size=args.size)
        print(f"wrote {args.count} triplets under {out}")
    return 0


def _progress(tag):
    def cb(step, losses):
        if step % 50 == 0:
            shown = "  ".join(f"{k}={v:.5f}" for k, v in losses.items())
            print(f"[{tag}] step {step}: {shown}", flush=True)
    return cb


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, ConfigError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericsError as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
