"""Command-line entry point.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .checkpoint import CheckpointError
from .experiments import prepare, prepare_with, run_ablation, score, write_ablation_csv, fit
from .gradcheck import TOLERANCE, run_all
from .metrics import EvalReport
from .network import StitchMode
from .spectral import Transform, apply_transform, average_spectrum, band_means, log_scale, radial_bands
from .synth import DEFAULT_FRACTIONS, CorpusError, build_corpus, load_corpus, read_ppm, save_corpus, thread_count, write_ppm_rgb
from .training import TrainingConfig, TrainingDiverged, write_metrics_csv

logger = logging.getLogger("mdcs")

BLACK = np.array([0.0, 0.0, 0.0])
ORANGE = np.array([255.0, 165.0, 0.0])
WHITE = np.array([255.0, 255.0, 255.0])

REPORT_HEADER = ("level", "n_samples", "accuracy", "auc", "tp", "tn", "fp", "fn")
BANDS_HEADER = ("band", "r_lo", "r_hi", "mean_log_coeff")


class CommandError(Exception):
    """Runtime failure reported with exit code 1."""


# ---------------------------------------------------------------------------
# heatmaps


def colorize(values: np.ndarray) -> np.ndarray:
    """Map a 2-D array onto the black -> orange -> white ramp over [min, max].

    A constant map renders all black.
    """
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    t = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    t = t[..., None]
    low = BLACK + (ORANGE - BLACK) * np.clip(t * 2.0, 0.0, 1.0)
    high = ORANGE + (WHITE - ORANGE) * np.clip(t * 2.0 - 1.0, 0.0, 1.0)
    rgb = np.where(t <= 0.5, low, high)
    return np.floor(rgb + 0.5).astype(np.uint8)


def _image_files(root: Path) -> list[Path]:
    if not root.is_dir():
        raise CommandError(f"{root}: not a directory")
    files = sorted(root.rglob("*.ppm"))
    if not files:
        raise CommandError(f"{root}: no .ppm images found")
    return files


def cmd_spectrum(args) -> int:
    transform = Transform(args.transform)
    files = _image_files(Path(args.input))
    images = [read_ppm(f) for f in files]
    frames = [channel for img in images for channel in img]
    averaged = average_spectrum(frames, transform)
    shown = averaged
    if args.center_shift:
        if transform is not Transform.FFT_AMPLITUDE:
            raise CommandError("--center-shift applies to the fft transform only")
        shown = np.fft.fftshift(averaged)
    out = Path(args.out)
    write_ppm_rgb(out, colorize(shown))

    n_bands = 4
    edges = np.linspace(0.0, 1.0, n_bands + 1)
    with open(_sibling(out, ".bands.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BANDS_HEADER)
        for k, mean in enumerate(band_means(averaged, transform, n_bands)):
            writer.writerow([k, repr(edges[k]), repr(edges[k + 1]), repr(float(mean))])
    with open(_sibling(out, ".images.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path"] + [f"band{k}" for k in range(n_bands)])
        for f, img in zip(files, images):
            bands = band_means(log_scale(apply_transform(img, transform)), transform, n_bands)
            writer.writerow([f.relative_to(args.input).as_posix()] + [repr(float(b)) for b in bands])
    print(f"averaged {len(images)} images ({len(frames)} channels) -> {out}")
    return 0


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# ---------------------------------------------------------------------------
# corpus, training, evaluation


def cmd_synth(args) -> int:
    fractions = tuple(args.fractions) if args.fractions else DEFAULT_FRACTIONS
    corpus = build_corpus(args.n, args.size, fractions, args.seed, workers=thread_count())
    save_corpus(corpus, args.out)
    counts = corpus.balance()
    print(" ".join(f"{k}={r}+{f}" for k, (r, f) in counts.items()), f"-> {args.out}")
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.data)
    data = prepare(corpus, args.transform)
    config = TrainingConfig(max_epochs=args.epochs, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        run = fit(data, args.mode, config, log_path=out / "metrics.csv")
    except TrainingDiverged as exc:
        raise CommandError(f"training diverged: {exc}") from exc
    checkpoint.save(out / "model.mdcs", run.model, data.norm)
    best = run.training
    print(f"best epoch {best.best_epoch} val_acc {best.best_val_acc:.4f} test_auc {run.test.auc:.4f} -> {out}")
    return 0


def _fmt(x: float) -> str:
    return "undefined" if math.isnan(x) else repr(float(x))


def write_report(path: Path | str, frame: EvalReport, group: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for level, r in (("frame", frame), ("group", group)):
            writer.writerow([level, r.n_samples, repr(r.accuracy), _fmt(r.auc), r.tp, r.tn, r.fp, r.fn])


def cmd_eval(args) -> int:
    model, norm = checkpoint.load(args.model)
    corpus = load_corpus(args.data)
    if corpus.image_size != model.input_size:
        raise CommandError(f"checkpoint expects {model.input_size}px images, corpus has {corpus.image_size}px")
    data = prepare_with(corpus, norm).split(args.split)
    if len(data) == 0:
        raise CommandError(f"split {args.split!r} is empty")
    frame, group = score(model, data)
    write_report(args.report, frame, group)
    for level, r in (("frame", frame), ("group", group)):
        print(f"{level:5s} n={r.n_samples} acc={r.accuracy:.4f} auc={_fmt(r.auc)}")
    if not frame.auc_defined:
        print("warning: only one class present; AUC is undefined", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all(args.seed)
    ok = True
    for r in results:
        status = "PASS" if r.passed(TOLERANCE) else "FAIL"
        ok &= r.passed(TOLERANCE)
        print(f"{r.name:22s} max_rel_err={r.max_rel_error:.3e} n={r.n_checked} {status}")
    print("all suites pass" if ok else f"gradient check failed (tolerance {TOLERANCE:g})")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    corpus = load_corpus(args.data)
    rows = run_ablation(corpus, TrainingConfig(max_epochs=args.epochs, seed=args.seed))
    write_ablation_csv(args.out, rows)
    for r in rows:
        print(f"{r['config']:13s} {r['mode']:5s} {r['transform']:4s} auc={r['test_auc']:.4f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdcs", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic real/fake corpus")
    s.add_argument("--n", type=int, required=True, help="real/fake pairs to generate")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("spectrum", help="averaged log-spectrum heatmap of a directory of images")
    s.add_argument("--input", required=True)
    s.add_argument("--transform", choices=[t.value for t in Transform], default="dct")
    s.add_argument("--center-shift", action="store_true", help="fft only: put DC in the middle of the heatmap")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=[m.value for m in StitchMode], default="all")
    s.add_argument("--transform", choices=[t.value for t in Transform], default="dct")
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference checks of all backward rules")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", help="stitch-mode and transform ablations")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (CommandError, CorpusError, CheckpointError, OSError, ValueError) as exc:
        print(f"mdcs {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
