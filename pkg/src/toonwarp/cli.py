"""Command-line entry point.

Subcommands: fit, warp, transfer, synth, train, eval, viz. Every failure
exits nonzero with a single diagnostic line `error: <code>: <detail>` on
stderr; outputs are byte-deterministic for fixed seeds and inputs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .core import ImageBuffer
from .data import (
    DEFAULT_DENSE_SIZE,
    FIELD_STYLES,
    load_dataset,
    save_image_png,
    load_image_png,
    synth_dataset,
    write_dataset,
)
from .errors import DatasetError, InvalidArgumentError, ToonWarpError
from .fields import load_field, save_field, scale_field, upsample, visualize_field
from .fit import FitConfig, fit_field
from .losses import LossWeights, total_loss
from .perceiver import TinyPerceiver, TrainConfig, load_model, perceiver_forward, save_model, train
from .warp import resize_image, warp


def _require_files(*paths) -> None:
    for path in paths:
        if not Path(path).is_file():
            raise InvalidArgumentError(f"no such file: {path}")


def _parse_alphas(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise InvalidArgumentError(f"bad alpha list {text!r}") from None
    if not values:
        raise InvalidArgumentError("alpha list is empty")
    return values


def _alpha_path(base: Path, alpha: float, multiple: bool) -> Path:
    if not multiple:
        return base
    return base.with_name(f"{base.stem}_alpha{alpha:g}{base.suffix}")


def cmd_fit(args) -> int:
    _require_files(args.input, args.toon)
    x_in = resize_image(load_image_png(args.input), args.size, args.size)
    x_toon = resize_image(load_image_png(args.toon), args.size, args.size)
    cfg = FitConfig(
        iterations=args.iters,
        lr=args.lr,
        smooth_weight=args.smooth_weight,
        grid_height=args.grid,
        grid_width=args.grid,
    )
    field, history = fit_field(x_in, x_toon, cfg)
    save_field(field, args.out)
    csv_path = Path(args.out).with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual"])
        writer.writerows(enumerate(history))
    print(f"fit: residual {history[-1]:.6f} after {len(history) - 1} iterations -> {args.out}")
    return 0


def _warp_like(args) -> int:
    _require_files(args.input, args.field)
    image = load_image_png(args.input)
    grid = load_field(args.field)
    image = resize_image(image, args.size, args.size)
    alphas = _parse_alphas(args.alpha)
    out = Path(args.out)
    for alpha in alphas:
        dense = upsample(scale_field(grid, alpha), image.height, image.width)
        result = warp(image, dense)
        path = _alpha_path(out, alpha, len(alphas) > 1)
        save_image_png(result, path)
        print(f"warped alpha={alpha:g} -> {path}")
    return 0


def cmd_warp(args) -> int:
    return _warp_like(args)


def cmd_transfer(args) -> int:
    # Same mechanics as `warp`; the name documents applying a stored field to
    # an arbitrary (e.g. externally stylized) image.
    return _warp_like(args)


def cmd_synth(args) -> int:
    samples = synth_dataset(
        seed=args.seed, n=args.n, field_style=args.style,
        size=args.size, magnitude=args.magnitude,
    )
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} synthetic pairs under {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.data, dense_size=args.size)
    if not dataset:
        raise DatasetError(f"no samples under {args.data}")
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        weights=LossWeights(recon=args.lambda1, warp=args.lambda2, reg=args.lambda3),
        hflip=not args.no_flip,
        jitter=not args.no_jitter,
        seed=args.seed,
    )
    model = TinyPerceiver(seed=args.seed)
    model, history = train(model, dataset, cfg)
    save_model(model, args.out)
    csv_path = Path(args.out).with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "recon", "warp", "reg", "total", "lr"])
        for record in history:
            writer.writerow([
                record.epoch, record.loss.recon, record.loss.warp,
                record.loss.reg, record.loss.total, record.lr,
            ])
    print(
        f"trained {cfg.epochs} epochs: total {history[0].loss.total:.6f} -> "
        f"{history[-1].loss.total:.6f}; model -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    _require_files(args.model)
    model = load_model(args.model)
    dataset = load_dataset(args.data, dense_size=args.size)
    if not dataset:
        raise DatasetError(f"no samples under {args.data}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for sample in dataset:
        grid, _ = perceiver_forward(model, sample.x_in)
        dense = upsample(scale_field(grid, args.alpha), sample.x_in.height, sample.x_in.width)
        cartoon = warp(sample.x_in, dense)
        # Samples without a stored field report a zero supervision term.
        target_grid = sample.field if sample.field is not None else grid
        report = total_loss(cartoon, sample.x_toon, grid, target_grid, dense)
        rows.append([sample.id, report.recon, report.warp, report.reg, report.total])
        panel = np.concatenate(
            [sample.x_in.data, cartoon.data, sample.x_toon.data], axis=1
        )
        save_image_png(ImageBuffer(panel), out_dir / f"{sample.id}.png")
    with open(out_dir / "eval.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "recon", "warp", "reg", "total"])
        writer.writerows(rows)
    mean_recon = float(np.mean([row[1] for row in rows]))
    print(f"evaluated {len(rows)} samples, mean recon {mean_recon:.6f} -> {out_dir}")
    return 0


def cmd_viz(args) -> int:
    _require_files(args.field)
    grid = load_field(args.field)
    dense = upsample(grid, args.size, args.size)
    save_image_png(visualize_field(dense), args.out)
    print(f"field visualization -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toonwarp",
        description="Coarse warp fields for geometric face exaggeration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_size(p):
        p.add_argument("--size", type=int, default=DEFAULT_DENSE_SIZE,
                       help="dense working resolution (default %(default)s)")

    p = sub.add_parser("fit", help="recover a warp field from an image pair")
    p.add_argument("input")
    p.add_argument("toon")
    p.add_argument("out")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--smooth-weight", type=float, default=0.0)
    add_size(p)
    p.set_defaults(func=cmd_fit)

    for name, help_text in (
        ("warp", "warp an image with a stored field"),
        ("transfer", "apply a stored field to an arbitrary image"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("input")
        p.add_argument("field")
        p.add_argument("out")
        p.add_argument("--alpha", default="1", help="scaling factor(s), comma separated")
        add_size(p)
        p.set_defaults(func=cmd_warp if name == "warp" else cmd_transfer)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("out")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--style", choices=FIELD_STYLES, default="smooth-random")
    p.add_argument("--magnitude", type=float, default=3.0)
    add_size(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the perceiver on a paired dataset")
    p.add_argument("data")
    p.add_argument("out")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.7)
    p.add_argument("--lambda3", type=float, default=1e-6)
    p.add_argument("--no-flip", action="store_true")
    p.add_argument("--no-jitter", action="store_true")
    add_size(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-sample losses and comparison panels")
    p.add_argument("data")
    p.add_argument("model")
    p.add_argument("out")
    p.add_argument("--alpha", type=float, default=1.0)
    add_size(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="render a field with the flow color wheel")
    p.add_argument("field")
    p.add_argument("out")
    add_size(p)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ToonWarpError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
