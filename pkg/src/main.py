#!/usr/bin/env python3
"""Main entry point for the image-pair translation application."""

import argparse
import logging
import os
import sys
from typing import List, Optional

# Add the parent directory to the path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np

from src.checkpoint import load_checkpoint
from src.config import (
    AdamConfig,
    ArchConfig,
    Config,
    GanForm,
    LossWeights,
    MattingConfig,
    StyleSource,
    TrainConfig,
)
from src.diagnostics import MAX_TRANSLATIONS, measure_state
from src.errors import PhotorealError
from src.gradcheck import TOLERANCE, check_ops, worst_per_op
from src.image_io import load_image, read_pixels, save_image
from src.losses import MetricsLog
from src.matting import affine_loss, build_matting_laplacian
from src.tensor import Tensor
from src.trainer import train, translate, translate_samples

logger = logging.getLogger(__name__)

# Largest matrix order the laplacian command still eigen-decomposes densely
EIGEN_MAX_ORDER = 1024


def _add_train_parser(subparsers) -> None:
    p = subparsers.add_parser("train", help="Train both auto-encoders on one content/style image pair")
    p.add_argument("--content", required=True, help="Content image (domain 1), P6 PPM or PNG")
    p.add_argument("--style", required=True, help="Style image (domain 2), P6 PPM or PNG")
    p.add_argument("--out", required=True, help="Output directory for checkpoints and metrics")
    p.add_argument("--size", type=int, default=Config.IMAGE_SIZE,
                   help=f"Square training resolution (default: {Config.IMAGE_SIZE})")
    p.add_argument("--iters", type=int, default=Config.ITERATIONS,
                   help=f"Number of training iterations (default: {Config.ITERATIONS})")
    p.add_argument("--seed", type=int, default=Config.SEED, help="Run seed (default: 0)")
    p.add_argument("--lambda-x", type=float, default=Config.LAMBDA_X, help="Image reconstruction weight")
    p.add_argument("--lambda-c", type=float, default=Config.LAMBDA_C, help="Content reconstruction weight")
    p.add_argument("--lambda-s", type=float, default=Config.LAMBDA_S, help="Style reconstruction weight")
    p.add_argument("--lambda-a", type=float, default=Config.LAMBDA_A, help="Affine (photorealism) loss weight")
    p.add_argument("--gan", choices=[g.value for g in GanForm], default=GanForm.LSGAN.value,
                   help="Adversarial objective (default: lsgan)")
    p.add_argument("--saturating", action="store_true",
                   help="Use the saturating generator term with --gan log")
    p.add_argument("--no-matting", action="store_true",
                   help="Drop the affine loss path entirely instead of weighting it")
    p.add_argument("--checkpoint-every", type=int, default=Config.CHECKPOINT_EVERY,
                   help=f"Write a checkpoint every K iterations (default: {Config.CHECKPOINT_EVERY})")
    p.add_argument("--resume", help="Continue from a checkpoint written by an earlier run")
    p.add_argument("--base-channels", type=int, default=Config.BASE_CHANNELS,
                   help=f"Width of the first generator layer (default: {Config.BASE_CHANNELS})")
    p.add_argument("--mlp-dim", type=int, default=Config.MLP_DIM,
                   help=f"Hidden width of the style MLP (default: {Config.MLP_DIM})")
    p.add_argument("--res-blocks", type=int, default=Config.N_RES_BLOCKS,
                   help=f"Residual blocks per content encoder and decoder (default: {Config.N_RES_BLOCKS})")
    p.add_argument("--scales", type=int, help="Discriminator scales (default: 3 at 256px and up, else 1)")
    p.add_argument("--eps", type=float, default=Config.MATTING_EPS, help="Matting regularization")
    p.add_argument("--radius", type=int, default=Config.MATTING_RADIUS, help="Matting window radius")
    p.add_argument("--quiet", action="store_true", help="Hide the progress bar")
    p.set_defaults(handler=cmd_train)


def _add_translate_parser(subparsers) -> None:
    p = subparsers.add_parser("translate", help="Translate an image with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="Checkpoint file")
    p.add_argument("--content", required=True, help="Image whose content is kept")
    p.add_argument("--out", required=True, help="Output image file (.ppm or .png)")
    style = p.add_mutually_exclusive_group(required=True)
    style.add_argument("--style", help="Take the style code from this image")
    style.add_argument("--style-seed", type=int, help="Draw the style code from the prior with this seed")
    p.add_argument("--direction", choices=["12", "21"], default="12",
                   help="12 translates domain 1 into domain 2 (default), 21 the reverse")
    p.add_argument("--samples", type=int, default=1,
                   help="With --style-seed, write this many translations as <out>_000 ...")
    p.set_defaults(handler=cmd_translate)


def _add_laplacian_parser(subparsers) -> None:
    p = subparsers.add_parser("laplacian", help="Summarize the matting Laplacian of an image")
    p.add_argument("--image", required=True, help="Image the matrix is built from")
    p.add_argument("--eps", type=float, default=Config.MATTING_EPS,
                   help=f"Regularization (default: {Config.MATTING_EPS})")
    p.add_argument("--radius", type=int, default=Config.MATTING_RADIUS,
                   help=f"Window radius (default: {Config.MATTING_RADIUS})")
    p.add_argument("--other", help="Score this image's affine loss against the matrix")
    p.set_defaults(handler=cmd_laplacian)


def _add_gradcheck_parser(subparsers) -> None:
    p = subparsers.add_parser("gradcheck", help="Compare analytic gradients against finite differences")
    p.add_argument("--ops", help="Comma-separated op names (default: all)")
    p.add_argument("--seed", type=int, default=0, help="Seed for the random cases (default: 0)")
    p.set_defaults(handler=cmd_gradcheck)


def _add_diagnose_parser(subparsers) -> None:
    p = subparsers.add_parser("diagnose", help="Report latent statistics and reconstruction errors")
    p.add_argument("--checkpoint", required=True, help="Checkpoint file")
    p.add_argument("--content", required=True, help="Domain 1 image")
    p.add_argument("--style", required=True, help="Domain 2 image")
    p.add_argument("--samples", type=int, default=1000, help="Prior style samples (default: 1000)")
    p.add_argument("--translations", type=int, default=MAX_TRANSLATIONS,
                   help=f"Translations evaluated per direction (default: {MAX_TRANSLATIONS})")
    p.add_argument("--seed", type=int, default=0, help="Sampling seed (default: 0)")
    p.add_argument("--out", help="Write the report here (and a .yaml copy) instead of printing it")
    p.set_defaults(handler=cmd_diagnose)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Photorealistic image-pair translation")
    parser.add_argument("--verbose", action="store_true", help="Log debug detail")
    subparsers = parser.add_subparsers(dest="command", required=True)
    _add_train_parser(subparsers)
    _add_translate_parser(subparsers)
    _add_laplacian_parser(subparsers)
    _add_gradcheck_parser(subparsers)
    _add_diagnose_parser(subparsers)
    return parser


def cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig(
        content_path=args.content,
        style_path=args.style,
        out_dir=args.out,
        iterations=args.iters,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        gan_form=GanForm(args.gan),
        saturating=args.saturating,
        use_matting=not args.no_matting,
        weights=LossWeights(args.lambda_x, args.lambda_c, args.lambda_s, args.lambda_a),
        matting=MattingConfig(window_radius=args.radius, eps=args.eps),
        arch=ArchConfig(
            image_size=args.size,
            base_channels=args.base_channels,
            mlp_dim=args.mlp_dim,
            n_res_blocks=args.res_blocks,
            n_scales=args.scales,
        ),
        adam=AdamConfig(),
        resume=args.resume,
    )
    print(f"Training {config.iterations} iterations at {config.image_size}px "
          f"(lambda_x={config.weights.lambda_x:g}, lambda_c={config.weights.lambda_c:g}, "
          f"lambda_s={config.weights.lambda_s:g}, lambda_a={config.weights.lambda_a:g})")
    ckpt, path = train(config, progress=not args.quiet)
    print(f"step {ckpt.step}: checkpoint {path}")
    _print_final_losses(config)
    return 0


def _print_final_losses(config: TrainConfig) -> None:
    rows = MetricsLog.read(os.path.join(config.out_dir, Config.METRICS_FILE))
    if rows:
        last = rows[-1]
        print(f"final total_g={last['total_g']:.6g} total_d={last['total_d']:.6g}")


def cmd_translate(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    size = TrainConfig.from_echo(ckpt.config_echo).image_size
    content = load_image(args.content, size)

    if args.style is not None:
        style = load_image(args.style, size)
        image = translate(ckpt, content, StyleSource.IMAGE, style_image=style, direction=args.direction)
        path = save_image(image, args.out, comment=f"style: image {args.style}")
        print(f"Wrote {path}")
        return 0

    if args.samples == 1:
        image = translate(ckpt, content, StyleSource.PRIOR, style_seed=args.style_seed,
                          direction=args.direction)
        path = save_image(image, args.out, comment=f"style: prior seed {args.style_seed}")
        print(f"Wrote {path}")
        return 0

    stem, ext = os.path.splitext(args.out)
    images = translate_samples(ckpt, content, args.style_seed, args.samples, args.direction)
    for i, image in enumerate(images):
        path = save_image(image, f"{stem}_{i:03d}{ext or '.ppm'}",
                          comment=f"style: prior seed {args.style_seed} sample {i}")
        print(f"Wrote {path}")
    return 0


def _colors(path: str) -> np.ndarray:
    return read_pixels(path).astype(np.float64).transpose(2, 0, 1) / 255.0


def cmd_laplacian(args: argparse.Namespace) -> int:
    image = _colors(args.image)
    laplacian = build_matting_laplacian(image, MattingConfig(window_radius=args.radius, eps=args.eps))
    summary = laplacian.summary(with_eigen=laplacian.n <= EIGEN_MAX_ORDER)
    print(f"order {summary['order']}")
    print(f"nonzeros {summary['nonzeros']}")
    print(f"max |row sum| {summary['max_abs_row_sum']:.3e}")
    print(f"max asymmetry {summary['max_asymmetry']:.3e}")
    if "min_eigenvalue" in summary:
        print(f"min eigenvalue {summary['min_eigenvalue']:.3e}")
    if args.other:
        other = _colors(args.other)
        if other.shape != image.shape:
            raise PhotorealError(
                f"{args.other} is {other.shape[2]}x{other.shape[1]}, "
                f"{args.image} is {image.shape[2]}x{image.shape[1]}"
            )
        value = affine_loss(laplacian, Tensor(other[None], dtype=np.float64))
        print(f"affine loss {float(value.data):.6e}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    names = [n.strip() for n in args.ops.split(",") if n.strip()] if args.ops else None
    results = check_ops(names, seed=args.seed)
    worst = worst_per_op(results)
    width = max(len(name) for name in worst)
    failed = []
    for name, error in worst.items():
        status = "ok" if error < TOLERANCE else "FAIL"
        print(f"{name:<{width}}  {error:.3e}  {status}")
        if error >= TOLERANCE:
            failed.append(name)
    if failed:
        print(f"{len(failed)} of {len(worst)} ops above {TOLERANCE:g}: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(worst)} ops below {TOLERANCE:g}")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    size = TrainConfig.from_echo(ckpt.config_echo).image_size
    x1 = load_image(args.content, size)
    x2 = load_image(args.style, size)
    report = measure_state(ckpt, x1, x2, args.samples, args.seed, max_translations=args.translations)
    if args.out:
        print(f"Wrote {report.save(args.out)}")
    else:
        print(report.to_text(), end="")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "translate":
        if args.samples < 1:
            parser.error("--samples must be >= 1")
        if args.samples > 1 and args.style is not None:
            parser.error("--samples needs --style-seed")
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logger.debug("Running %s", args.command)
    try:
        return args.handler(args)
    except (PhotorealError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
