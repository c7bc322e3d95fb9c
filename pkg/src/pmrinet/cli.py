"""Command-line front end.

Subcommands cover the full workflow: mask generation, dataset
simulation, training, reconstruction, evaluation, gradient checking,
and image export. Exit codes: 0 success, 1 I/O failure, 2 bad
arguments or shape mismatch, 3 numeric divergence during training,
4 gradient-check failure. Flag defaults reproduce the published
configuration wherever one exists, so the zero-flag run is the
reference setup.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import export as export_mod
from . import figures, metrics, sampling, simdata, training
from .formats import FileFormatError
from .gradcheck import DEFAULT_STEP, DEFAULT_THRESHOLD, build_instance, \
    format_report, run_check
from .network import ModelConfig, init_params, load_params, save_params
from .numerics import fft2_centered, rss_combine
from .training import TrainConfig, TrainingDivergedError

EXIT_OK = 0
EXIT_IO = 1
EXIT_ARGS = 2
EXIT_DIVERGED = 3
EXIT_GRADCHECK = 4


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# Subcommand implementations.

def cmd_mask(args) -> int:
    if args.pattern == "radial2d":
        mask = sampling.gen_radial_2d(args.h, args.w, args.r, args.seed)
    else:
        generator = {
            "uniform1d": sampling.gen_uniform_1d,
            "random1d": sampling.gen_random_1d,
            "poisson2d": sampling.gen_poisson_2d,
        }[args.pattern]
        mask = generator(args.h, args.w, args.r, args.acs, args.seed)
    sampling.save_mask(mask, args.output)
    stats = sampling.mask_stats(mask)
    print(f"pattern {mask.pattern} {args.h}x{args.w} "
          f"R={mask.target_acceleration:g} acs={mask.acs} seed={mask.seed}")
    print(f"fraction {stats.fraction!r}")
    print(f"achieved_r {stats.achieved_r!r}")
    print(f"acs_intact {stats.acs_intact}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    mask = sampling.load_mask(args.mask)
    height, width = mask.shape
    records = simdata.simulate_dataset(
        args.count, args.coils, height, width, mask,
        noise_std=args.noise, seed=args.seed, sigma=args.sigma)
    simdata.write_dataset(records, args.output)
    print(f"wrote {len(records)} records ({args.coils}x{height}x{width}) "
          f"to {args.output}")
    return EXIT_OK


def _model_config(args) -> ModelConfig:
    return ModelConfig(stages=args.stages, substages=args.substages,
                       filters=args.filters, knot_count=args.knots)


def cmd_train(args) -> int:
    train_records = simdata.read_dataset(args.train)
    val_records = simdata.read_dataset(args.val) if args.val else None
    mask = sampling.load_mask(args.mask)
    if args.init_from:
        params = load_params(args.init_from)
    else:
        params = init_params(_model_config(args))
    if args.dump_init:
        save_params(params, args.dump_init)
        print(f"wrote initial parameters to {args.dump_init}")
        return EXIT_OK
    config = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                         shuffle_seed=args.shuffle_seed,
                         checkpoint_every=args.checkpoint_every,
                         momentum=args.momentum)
    log_path = Path(args.log) if args.log else \
        Path(args.output).with_suffix(".log.csv")

    def progress(entry):
        line = (f"epoch {entry.epoch:4d}  train_loss {entry.train_loss:.6e}")
        if np.isfinite(entry.val_psnr):
            line += (f"  val_nmse {entry.val_nmse:.5f}"
                     f"  val_psnr {entry.val_psnr:.3f}"
                     f"  val_ssim {entry.val_ssim:.4f}")
        print(line, flush=True)

    try:
        params, log = training.train(
            train_records, mask.bits, params, config,
            val_records=val_records, checkpoint_dir=args.checkpoint_dir,
            start_epoch=args.start_epoch,
            on_epoch=progress if not args.quiet else None)
    except TrainingDivergedError as exc:
        return _fail(str(exc), EXIT_DIVERGED)
    save_params(params, args.output)
    training.write_train_log(log, log_path)
    print(f"wrote model to {args.output}")
    print(f"wrote training log to {log_path}")
    if args.figure:
        figure_path = log_path.with_suffix(".png")
        figures.save_training_curves(log, figure_path)
        print(f"wrote training curves to {figure_path}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    records = simdata.read_dataset(args.data)
    mask = sampling.load_mask(args.mask)
    params = None if args.zero_filled else load_params(args.model)
    out_records = []
    for record in records:
        x = training.reconstruct_stack(record.undersampled_kspace,
                                       mask.bits, params)
        out_records.append(simdata.SampleRecord(
            coil_images=x, full_kspace=fft2_centered(x),
            undersampled_kspace=record.undersampled_kspace,
            mask_id=record.mask_id))
    simdata.write_dataset(out_records, args.output)
    method = "zero-filled" if args.zero_filled else f"model {args.model}"
    print(f"reconstructed {len(out_records)} records with {method} "
          f"-> {args.output}")
    if args.rss_dir:
        images = [rss_combine(r.coil_images) for r in out_records]
        writer, suffix = {"png": (export_mod.write_png, ".png"),
                          "pgm": (export_mod.write_pgm, ".pgm")}[args.rss_format]
        rss_dir = Path(args.rss_dir)
        rss_dir.mkdir(parents=True, exist_ok=True)
        for i, image in enumerate(images):
            writer(export_mod.to_gray8(image), rss_dir / f"rss_{i:03d}{suffix}")
        print(f"wrote {len(images)} RSS images to {rss_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    recon = simdata.read_dataset(args.recon)
    reference = simdata.read_dataset(args.reference)
    if len(recon) != len(reference):
        raise ValueError(f"record count mismatch: {len(recon)} "
                         f"reconstructions vs {len(reference)} references")
    reports = [metrics.evaluate_pair(r.coil_images, ref.coil_images)
               for r, ref in zip(recon, reference)]
    summary = metrics.summarize(reports)
    rows = [(args.mask_label, args.rate, args.method, summary)]
    metrics.write_summary_csv(rows, args.output)
    per_image_path = Path(args.per_image) if args.per_image else \
        Path(args.output).with_suffix(".per_image.csv")
    with open(per_image_path, "w") as f:
        f.write("index,nmse,psnr,ssim\n")
        for i, r in enumerate(reports):
            f.write(f"{i},{r.nmse!r},{r.psnr!r},{r.ssim!r}\n")
    print(f"{args.method}: nmse {summary.nmse_mean:.6f} +- "
          f"{summary.nmse_std:.6f}  psnr {summary.psnr_mean:.3f} +- "
          f"{summary.psnr_std:.3f}  ssim {summary.ssim_mean:.4f} +- "
          f"{summary.ssim_std:.4f}")
    print(f"wrote report to {args.output}")
    print(f"wrote per-image metrics to {per_image_path}")
    if args.figure:
        figure_path = Path(args.output).with_suffix(".png")
        figures.save_metric_summary(rows, figure_path)
        print(f"wrote summary figure to {figure_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    instance = build_instance(stages=args.stages, substages=args.substages,
                              filters=args.filters, coils=args.coils,
                              height=args.height, width=args.width,
                              knot_count=args.knots, seed=args.seed)
    report = run_check(instance, step=args.step, threshold=args.threshold,
                       wrong_conv1_adjoint=args.perturb_backward)
    print(format_report(report))
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_export(args) -> int:
    recon = simdata.read_dataset(args.recon)
    reference = simdata.read_dataset(args.reference)
    estimates = [rss_combine(r.coil_images) for r in recon]
    references = [rss_combine(r.coil_images) for r in reference]
    written = export_mod.export_images(
        estimates, references, args.output, fmt=args.format,
        amplify=args.amplify, include_reference=args.with_reference)
    print(f"wrote {len(written)} images to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing.

def _add_mask_parser(sub):
    p = sub.add_parser("mask", help="generate an undersampling mask")
    p.add_argument("--pattern", required=True, choices=sampling.PATTERNS,
                   help="undersampling pattern")
    p.add_argument("--h", type=int, default=256,
                   help="mask height (reference default: 256)")
    p.add_argument("--w", type=int, default=256,
                   help="mask width (reference default: 256)")
    p.add_argument("--r", type=float, default=3.0,
                   help="target acceleration R (reference default: 3)")
    p.add_argument("--acs", type=int, default=28,
                   help="fully sampled center size (reference default: 28); "
                        "ignored by radial2d")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("-o", "--output", required=True, help="mask file to write")
    p.set_defaults(func=cmd_mask)


def _add_simulate_parser(sub):
    p = sub.add_parser("simulate", help="simulate a multi-coil dataset")
    p.add_argument("--mask", required=True, help="mask file (sets H and W)")
    p.add_argument("--count", type=int, default=50,
                   help="number of records to simulate")
    p.add_argument("--coils", type=int, default=4,
                   help="number of receive coils")
    p.add_argument("--noise", type=float, default=0.0,
                   help="k-space complex noise std")
    p.add_argument("--sigma", type=float, default=None,
                   help="coil sensitivity falloff width")
    p.add_argument("--seed", type=int, default=0, help="phantom/noise seed")
    p.add_argument("-o", "--output", required=True,
                   help="dataset file to write")
    p.set_defaults(func=cmd_simulate)


def _add_model_flags(p):
    p.add_argument("--stages", type=int, default=13,
                   help="unrolled stage count n (reference default: 13)")
    p.add_argument("--substages", type=int, default=1,
                   help="inner iterations k per stage (reference default: 1)")
    p.add_argument("--filters", type=int, default=9,
                   help="convolution filter count L (reference default: 9)")
    p.add_argument("--knots", type=int, default=63,
                   help="piecewise-linear knot count (reference default: 63)")


def _add_train_parser(sub):
    p = sub.add_parser("train", help="train a model with SGD")
    p.add_argument("--train", required=True, help="training dataset")
    p.add_argument("--val", default=None, help="validation dataset")
    p.add_argument("--mask", required=True, help="undersampling mask file")
    _add_model_flags(p)
    p.add_argument("--epochs", type=int, default=400,
                   help="training epochs (reference default: 400)")
    p.add_argument("--lr", type=float, default=0.01,
                   help="SGD learning rate (reference default: 0.01)")
    p.add_argument("--momentum", type=float, default=0.0,
                   help="SGD momentum (0 = plain SGD, the reference setting)")
    p.add_argument("--shuffle-seed", type=int, default=0,
                   help="per-epoch shuffling seed")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="write a checkpoint every N epochs (0 = never)")
    p.add_argument("--checkpoint-dir", default=None,
                   help="directory for checkpoints")
    p.add_argument("--init-from", default=None,
                   help="start from an existing parameter file")
    p.add_argument("--start-epoch", type=int, default=0,
                   help="first epoch index (for resuming)")
    p.add_argument("--dump-init", default=None, metavar="PATH",
                   help="write the initial parameters to PATH and exit")
    p.add_argument("--log", default=None,
                   help="training log CSV (default: next to the model)")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-epoch progress lines")
    p.add_argument("--no-figure", dest="figure", action="store_false",
                   help="skip the training-curve figure")
    p.add_argument("-o", "--output", required=True,
                   help="model parameter file to write")
    p.set_defaults(func=cmd_train)


def _add_reconstruct_parser(sub):
    p = sub.add_parser("reconstruct", help="reconstruct undersampled records")
    p.add_argument("--data", required=True, help="input dataset")
    p.add_argument("--mask", required=True, help="undersampling mask file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="trained parameter file")
    group.add_argument("--zero-filled", action="store_true",
                       help="zero-filled baseline instead of a model")
    p.add_argument("--rss-dir", default=None,
                   help="also write RSS magnitude images here")
    p.add_argument("--rss-format", choices=("png", "pgm"), default="png",
                   help="image format for --rss-dir")
    p.add_argument("-o", "--output", required=True,
                   help="reconstruction dataset to write")
    p.set_defaults(func=cmd_reconstruct)


def _add_evaluate_parser(sub):
    p = sub.add_parser("evaluate", help="score reconstructions against truth")
    p.add_argument("--recon", required=True, help="reconstruction dataset")
    p.add_argument("--reference", required=True, help="ground-truth dataset")
    p.add_argument("--mask-label", default="unspecified",
                   help="mask column value for the report row")
    p.add_argument("--rate", type=float, default=0.0,
                   help="acceleration column value for the report row")
    p.add_argument("--method", default="model",
                   help="method column value for the report row")
    p.add_argument("--per-image", default=None,
                   help="per-image CSV path (default: next to the report)")
    p.add_argument("--no-figure", dest="figure", action="store_false",
                   help="skip the summary bar chart")
    p.add_argument("-o", "--output", required=True,
                   help="aggregate report CSV to write")
    p.set_defaults(func=cmd_evaluate)


def _add_gradcheck_parser(sub):
    p = sub.add_parser(
        "gradcheck",
        help="finite-difference check of every parameter gradient",
        description="Runs central finite differences against the analytic "
                    "backward pass on a small random instance. The default "
                    "uses two stages: a one-stage instance cannot expose a "
                    "broken first-layer adjoint because that gradient only "
                    "reaches constant inputs.")
    p.add_argument("--stages", type=int, default=2,
                   help="stage count of the check instance")
    p.add_argument("--substages", type=int, default=1,
                   help="substage count of the check instance")
    p.add_argument("--filters", type=int, default=2,
                   help="filter count of the check instance")
    p.add_argument("--coils", type=int, default=2,
                   help="coil count of the check instance")
    p.add_argument("--height", type=int, default=8,
                   help="image height of the check instance")
    p.add_argument("--width", type=int, default=8,
                   help="image width of the check instance")
    p.add_argument("--knots", type=int, default=5,
                   help="piecewise-linear knot count of the check instance")
    p.add_argument("--seed", type=int, default=0, help="instance seed")
    p.add_argument("--step", type=float, default=DEFAULT_STEP,
                   help="central-difference step")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="relative-error pass threshold")
    p.add_argument("--perturb-backward", action="store_true",
                   help="fault injection: flip the first conv adjoint "
                        "(the check must then fail)")
    p.set_defaults(func=cmd_gradcheck)


def _add_export_parser(sub):
    p = sub.add_parser("export", help="write grayscale images and error maps")
    p.add_argument("--recon", required=True, help="reconstruction dataset")
    p.add_argument("--reference", required=True, help="ground-truth dataset")
    p.add_argument("--format", choices=("png", "pgm"), default="png",
                   help="output image format")
    p.add_argument("--amplify", type=float, default=export_mod.DEFAULT_AMPLIFY,
                   help="error-map amplification factor (default: 5)")
    p.add_argument("--with-reference", action="store_true",
                   help="also export the reference magnitude images")
    p.add_argument("-o", "--output", required=True,
                   help="directory for the images")
    p.set_defaults(func=cmd_export)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmrinet",
        description="Model-based convolutional de-aliasing network for "
                    "parallel MRI reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_mask_parser(sub)
    _add_simulate_parser(sub)
    _add_train_parser(sub)
    _add_reconstruct_parser(sub)
    _add_evaluate_parser(sub)
    _add_gradcheck_parser(sub)
    _add_export_parser(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags and 0 on --help; pass both through.
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail(f"file not found: {exc.filename or exc}", EXIT_IO)
    except (OSError, FileFormatError) as exc:
        return _fail(str(exc), EXIT_IO)
    except ValueError as exc:
        return _fail(str(exc), EXIT_ARGS)


if __name__ == "__main__":
    sys.exit(main())
