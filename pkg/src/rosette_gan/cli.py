"""``rosette-gan`` command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 runtime or numeric error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import TrainConfig
from .data import augment, export_ax, load_dataset, synth_dataset, write_samples
from .errors import RosetteGanError, ValidationError
from .evaluation import RegressorConfig, augmentation_experiment
from .gradcheck import format_results, run_gradcheck
from .models import generate
from .training import TrainingState, train

logger = logging.getLogger("rosette_gan")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_counts(text: str) -> list[int]:
    """``"3-6"`` -> [3, 4, 5, 6]; ``"3,5,7"`` -> [3, 5, 7]."""
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(v) for v in text.split("-", 1))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range 'A-B' or list 'A,B,...', got {text!r}") from None


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _common(p: argparse.ArgumentParser, out_default: str | None = "out") -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--out-dir", type=Path, default=None if out_default is None else Path(out_default),
                   help="directory receiving all artifacts")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="rosette-gan", description="Conditional GAN for leaf-count-controlled rosette images.",
                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", help="render procedural rosettes in the Ax layout", formatter_class=fmt)
    _common(p, "synth")
    p.add_argument("--n", type=_positive, default=64, help="number of images")
    p.add_argument("--counts", type=parse_counts, default="3-6", help="leaf counts, 'A-B' or 'A,B,...'")
    p.add_argument("--size", type=int, default=32, help="image side in pixels")

    p = sub.add_parser("augment", help="preprocess a dataset and write its 30-fold augmentation",
                       formatter_class=fmt)
    _common(p, "augmented")
    _dataset_args(p, required=True)
    p.add_argument("--size", type=int, default=128, help="preprocessed image side")

    p = sub.add_parser("train", help="train the conditional GAN", formatter_class=fmt)
    _common(p, "run")
    _dataset_args(p, required=False)
    p.add_argument("--augment", action="store_true", help="train on the 30-fold augmented dataset")
    p.add_argument("--synth-n", type=_positive, default=256,
                   help="procedural rosettes used when no --data-dir is given")
    p.add_argument("--synth-counts", type=parse_counts, default="3-6", help="leaf counts of procedural rosettes")
    d = TrainConfig()
    p.add_argument("--resolution", type=int, default=32, help="image side (power of two)")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=_positive, default=None, help="default: 32 at 128px, else 64")
    p.add_argument("--z-dim", type=_positive, default=d.z_dim)
    p.add_argument("--fc1-width", type=_positive, default=d.fc1_width)
    p.add_argument("--base-width", type=_positive, default=d.base_width)
    p.add_argument("--min-count", type=_positive, default=None, help="default: smallest label in the data")
    p.add_argument("--num-classes", type=_positive, default=None, help="default: label range of the data")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=d.optimizer)
    p.add_argument("--lr-d", type=float, default=d.lr_d)
    p.add_argument("--lr-g", type=float, default=d.lr_g)
    p.add_argument("--beta1", type=float, default=d.beta1)
    p.add_argument("--beta2", type=float, default=d.beta2)
    p.add_argument("--d-steps", type=_positive, default=d.d_steps)
    p.add_argument("--g-loss", choices=("non_saturating", "minimax"), default=d.g_loss)
    p.add_argument("--condition-sampling", choices=("uniform", "empirical"), default=d.condition_sampling)
    p.add_argument("--checkpoint-every", type=_positive, default=d.checkpoint_every)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")

    p = sub.add_parser("generate", help="sample a trained generator and export Ax", formatter_class=fmt)
    _common(p, "ax")
    p.add_argument("--checkpoint", type=Path, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--count", type=_positive, default=None, help="one leaf count for every image")
    g.add_argument("--count-range", type=parse_counts, default=None,
                   help="sample counts uniformly from 'A-B' (default: the checkpoint's class range)")
    p.add_argument("--n", type=_positive, default=57, help="number of images")
    p.add_argument("--save-tensors", action="store_true", help="also write generated.npz with raw outputs")

    p = sub.add_parser("export-ax", help="write saved generator outputs in the Ax layout", formatter_class=fmt)
    _common(p, "ax")
    p.add_argument("--tensors", type=Path, required=True, help="npz with 'images' and 'counts'")

    p = sub.add_parser("evaluate", help="cross-validate the count regressor with and without synthetic data",
                       formatter_class=fmt)
    _common(p, "eval")
    p.add_argument("--real-dir", type=Path, default=None, help="real dataset (default: procedural rosettes)")
    p.add_argument("--synthetic-dir", type=Path, default=None, help="Ax-layout synthetic dataset")
    p.add_argument("--n-real", type=_positive, default=624, help="procedural real images when no --real-dir")
    p.add_argument("--counts", type=parse_counts, default="3-8", help="leaf counts of procedural real images")
    p.add_argument("--size", type=int, default=32, help="image side used by the regressor (multiple of 8)")
    p.add_argument("--k", type=int, default=4, help="cross-validation folds")
    r = RegressorConfig()
    p.add_argument("--epochs", type=int, default=r.epochs, help="regressor epochs per fold")
    p.add_argument("--base-width", type=_positive, default=r.base_width)
    p.add_argument("--lr", type=float, default=r.lr)

    p = sub.add_parser("gradcheck", help="finite-difference check of all layers and both networks",
                       formatter_class=fmt)
    _common(p, None)
    p.add_argument("--max-coords", type=_positive, default=24, help="sampled coordinates per network tensor")
    return parser


def _dataset_args(p, required: bool) -> None:
    p.add_argument("--data-dir", type=Path, required=required, help="directory of PNGs plus a filename,count CSV")
    p.add_argument("--csv", type=Path, default=None, help="label CSV (default: the only *.csv in --data-dir)")
    p.add_argument("--no-masks", action="store_true", help="ignore plantXXX_fg.png masks")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    samples = synth_dataset(args.n, args.counts, args.size, np.random.default_rng(args.seed))
    write_samples(samples, args.out_dir, "synth.csv")
    print(f"wrote {len(samples)} rosettes to {args.out_dir}")
    return EXIT_OK


def cmd_augment(args) -> int:
    _, samples = load_dataset(args.data_dir, args.csv, args.size, not args.no_masks)
    if not samples:
        raise ValidationError(f"{args.data_dir}: no samples to augment")
    view = augment(samples, np.random.default_rng(args.seed))
    write_samples(view, args.out_dir, "augmented.csv")
    print(f"wrote {len(view)} augmented images to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    resume = load_checkpoint(args.resume) if args.resume is not None else None
    res = resume.config.resolution if resume is not None else args.resolution
    if args.data_dir is not None:
        _, samples = load_dataset(args.data_dir, args.csv, res, not args.no_masks)
    else:
        rng = np.random.default_rng([args.seed, 1])
        samples = synth_dataset(args.synth_n, args.synth_counts, res, rng)
    if args.augment:
        samples = augment(samples)
    labels = [s.leaf_count for s in samples]
    if resume is not None:
        cfg = resume.config.replace(epochs=args.epochs, checkpoint_every=args.checkpoint_every)
    else:
        if not labels:
            raise ValidationError("training needs a non-empty dataset")
        min_count = args.min_count or min(labels)
        num_classes = args.num_classes or max(labels) - min_count + 1
        weights = ()
        if args.condition_sampling == "empirical":
            hist = np.bincount(np.asarray(labels) - min_count, minlength=num_classes)[:num_classes]
            weights = tuple(hist / hist.sum())
        cfg = TrainConfig(
            resolution=args.resolution, z_dim=args.z_dim, fc1_width=args.fc1_width, base_width=args.base_width,
            num_classes=num_classes, min_count=min_count, optimizer=args.optimizer, lr_d=args.lr_d,
            lr_g=args.lr_g, beta1=args.beta1, beta2=args.beta2, batch_size=args.batch_size, epochs=args.epochs,
            d_steps=args.d_steps, g_loss=args.g_loss, condition_sampling=args.condition_sampling,
            class_weights=weights, checkpoint_every=args.checkpoint_every, seed=args.seed,
        )
    hist = train(samples, cfg, args.out_dir, resume=resume, keep_grids=False)
    out = Path(args.out_dir)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "d_loss", "g_loss", "steps"])
        for e in hist.epochs:
            w.writerow([e["epoch"], repr(e["d_loss"]), repr(e["g_loss"]), e["steps"]])
    for e in hist.epochs:
        print(f"epoch {e['epoch']:3d}  d_loss {e['d_loss']:.4f}  g_loss {e['g_loss']:.4f}")
    last = hist.checkpoint_paths[-1] if hist.checkpoint_paths else None
    print(f"checkpoints: {len(hist.checkpoint_paths)}; latest: {last}")
    return EXIT_OK


def _generate_counts(args, cfg: TrainConfig, rng) -> list[int]:
    valid = range(cfg.min_count, cfg.max_count + 1)
    if args.count is not None:
        pool = [args.count]
    else:
        pool = args.count_range if args.count_range is not None else list(valid)
    bad = [c for c in pool if c not in valid]
    if bad:
        raise ValidationError(f"leaf counts {bad} outside the trained range [{cfg.min_count}, {cfg.max_count}]")
    return [int(c) for c in rng.choice(pool, size=args.n)]


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    state = TrainingState.from_checkpoint(ckpt)
    rng = np.random.default_rng(args.seed)
    counts = _generate_counts(args, ckpt.config, rng)
    images = generate(state.gen, counts, rng)
    export_ax(images, counts, args.out_dir)
    if args.save_tensors:
        np.savez(Path(args.out_dir) / "generated.npz", images=images, counts=np.asarray(counts))
    print(f"wrote {len(counts)} images to {args.out_dir}")
    return EXIT_OK


def cmd_export_ax(args) -> int:
    with np.load(args.tensors) as f:
        if "images" not in f or "counts" not in f:
            raise ValidationError(f"{args.tensors}: expected arrays 'images' and 'counts'")
        images, counts = f["images"], f["counts"]
    if images.size and (np.nanmin(images) < -1 or np.nanmax(images) > 1 or np.isnan(images).any()):
        raise ValidationError(f"{args.tensors}: pixel values must lie in [-1, 1]")
    export_ax(images, counts.tolist(), args.out_dir)
    print(f"wrote {len(counts)} images to {args.out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.real_dir is not None:
        _, real = load_dataset(args.real_dir, target=args.size)
    else:
        real = synth_dataset(args.n_real, args.counts, args.size, np.random.default_rng([args.seed, 2]))
    synthetic = []
    if args.synthetic_dir is not None:
        _, synthetic = load_dataset(args.synthetic_dir, target=args.size, use_masks=False)
        for s in synthetic:
            s.is_synthetic = True
    cfg = RegressorConfig(epochs=args.epochs, base_width=args.base_width, lr=args.lr, seed=args.seed)
    report = augmentation_experiment(real, synthetic, args.k, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = report.to_text()
    (out / "report.txt").write_text(text + "\n")
    report.write_csv(out / "report.csv")
    print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.seed, args.max_coords)
    text = format_results(results)
    print(text)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "gradcheck.txt").write_text(text + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {
    "synth": cmd_synth,
    "augment": cmd_augment,
    "train": cmd_train,
    "generate": cmd_generate,
    "export-ax": cmd_export_ax,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RosetteGanError, ArithmeticError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
