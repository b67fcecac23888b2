"""Train/evaluate helpers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import EvalReport, evaluate, evaluate_groups
from .network import DualBranchModel, StitchMode, build_model
from .spectral import Transform
from .synth import Corpus
from .training import (
    Normalization,
    SplitData,
    TrainingConfig,
    TrainResult,
    fit_normalization,
    predict_scores,
    prepare_split,
    train,
)

logger = logging.getLogger(__name__)

ABLATION_CONFIGS = (
    ("rgb_branch", StitchMode.RGB_ONLY, Transform.DCT),
    ("freq_branch", StitchMode.FREQ_ONLY, Transform.DCT),
    ("no_stitches", StitchMode.NO_STITCH, Transform.DCT),
    ("one_stitch", StitchMode.ONE_STITCH, Transform.DCT),
    ("all_stitches", StitchMode.ALL_STITCHES, Transform.DCT),
    ("dwt", StitchMode.ALL_STITCHES, Transform.DWT_HAAR),
    ("fft", StitchMode.ALL_STITCHES, Transform.FFT_AMPLITUDE),
    ("dct", StitchMode.ALL_STITCHES, Transform.DCT),
)
ABLATION_HEADER = ("config", "mode", "transform", "test_auc", "test_acc", "best_epoch", "best_val_acc")


@dataclass
class PreparedCorpus:
    norm: Normalization
    train: SplitData
    val: SplitData
    test: SplitData

    def split(self, name: str) -> SplitData:
        return getattr(self, name)


def prepare(corpus: Corpus, transform: Transform | str = Transform.DCT) -> PreparedCorpus:
    """Fit branch normalization on the training split and build model inputs."""
    if not corpus.train:
        raise ValueError("corpus has an empty training split")
    norm = fit_normalization(np.stack([s.image for s in corpus.train]), transform)
    return PreparedCorpus(norm, *(prepare_split(corpus.split(n), norm) for n in ("train", "val", "test")))


def prepare_with(corpus: Corpus, norm: Normalization) -> PreparedCorpus:
    return PreparedCorpus(norm, *(prepare_split(corpus.split(n), norm) for n in ("train", "val", "test")))


@dataclass
class RunResult:
    model: DualBranchModel
    training: TrainResult
    test: EvalReport


def fit(data: PreparedCorpus, mode: StitchMode | str, config: TrainingConfig, log_path=None) -> RunResult:
    model = build_model(mode, data.train.inputs[0].shape[-1], seed=config.seed)
    result = train(model, data.train, data.val, config, log_path=log_path)
    return RunResult(model, result, score(model, data.test)[0])


def score(model, split: SplitData) -> tuple[EvalReport, EvalReport]:
    """Frame-level and group-level reports for one split."""
    scores, _ = predict_scores(model, split)
    return evaluate(scores, split.labels), evaluate_groups(scores, split.labels, split.groups)


def run_ablation(corpus: Corpus, config: TrainingConfig) -> list[dict]:
    """Five stitch modes under DCT plus the three transforms under all stitches.

    Runs with identical (mode, transform) are trained once; the result is
    reported on every row that names that configuration.
    """
    prepared: dict[Transform, PreparedCorpus] = {}
    done: dict[tuple[StitchMode, Transform], RunResult] = {}
    rows = []
    for label, mode, transform in ABLATION_CONFIGS:
        key = (mode, transform)
        if key not in done:
            if transform not in prepared:
                prepared[transform] = prepare(corpus, transform)
            logger.info("ablation: training %s / %s", mode.value, transform.value)
            done[key] = fit(prepared[transform], mode, config)
        run = done[key]
        rows.append(
            {
                "config": label,
                "mode": mode.value,
                "transform": transform.value,
                "test_auc": run.test.auc,
                "test_acc": run.test.accuracy,
                "best_epoch": run.training.best_epoch,
                "best_val_acc": run.training.best_val_acc,
            }
        )
    return rows


def write_ablation_csv(path: Path | str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_HEADER)
        for r in rows:
            writer.writerow([r["config"], r["mode"], r["transform"], repr(float(r["test_auc"])),
                             repr(float(r["test_acc"])), r["best_epoch"], repr(float(r["best_val_acc"]))])


def read_ablation_csv(path: Path | str) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("test_auc", "test_acc", "best_val_acc"):
            r[k] = float(r[k])
        r["best_epoch"] = int(r["best_epoch"])
    return rows
