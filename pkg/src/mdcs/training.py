"""Adam with split learning rates, plateau decay and best-validation selection."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import tensor as T
from .metrics import accuracy
from .spectral import (
    Branch,
    BranchStats,
    Transform,
    apply_normalization,
    apply_transform,
    fit_branch_stats,
    log_scale,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)

N_ALPHA_COLUMNS = 4


@dataclass(frozen=True)
class TrainingConfig:
    base_lr: float = 2e-4
    stitch_lr: float = 1e-3
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_factor: float = 0.2
    plateau_patience: int = 3
    max_epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("base_lr", "stitch_lr", "plateau_factor", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be at least 1")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be at least 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    base_lr: float
    stitch_lr: float
    alphas: list[tuple[float, float, float, float]] = field(default_factory=list)


class Model(Protocol):
    def forward(self, *inputs) -> Tensor: ...

    def parameters(self) -> dict[str, Tensor]: ...

    def is_stitch_param(self, name: str) -> bool: ...


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: dict[str, np.ndarray] | None, records):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.records = records


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, config: TrainingConfig) -> None:
    """One bias-corrected Adam update of ``param`` in place."""
    if not np.all(np.isfinite(grad)):
        bad = int(np.sum(~np.isfinite(grad)))
        raise FloatingPointError(f"non-finite gradient ({bad} of {grad.size} entries)")
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1**state.t)
    v_hat = state.v / (1 - b2**state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


class Adam:
    """Adam over a model's named parameters; stitch alphas get their own rate."""

    def __init__(self, params: dict[str, Tensor], is_stitch, config: TrainingConfig):
        self.params = params
        self.is_stitch = is_stitch
        self.config = config
        self.base_lr = config.base_lr
        self.stitch_lr = config.stitch_lr
        self.state = {name: AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            grad = np.zeros_like(p.data) if p.grad is None else p.grad
            lr = self.stitch_lr if self.is_stitch(name) else self.base_lr
            try:
                adam_step(p.data, grad, self.state[name], lr, self.config)
            except FloatingPointError as exc:
                raise FloatingPointError(f"{name}: {exc}") from None

    def scale_lr(self, factor: float) -> None:
        self.base_lr *= factor
        self.stitch_lr *= factor


# ---------------------------------------------------------------------------
# plateau schedule


class PlateauScheduler:
    """Decay after ``patience`` consecutive epochs without a new best loss.

    A loss equal to the best so far counts as no improvement.  The counter
    resets after every decay; the best loss is kept.
    """

    def __init__(self, factor: float = 0.2, patience: int = 3):
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.wait = 0

    def update(self, loss: float) -> bool:
        """Feed one epoch's validation loss; True if the rate should decay now."""
        if loss < self.best:
            self.best = loss
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            return True
        return False


def plateau_schedule(history: Sequence[float], current_lr: float, config: TrainingConfig = TrainingConfig()) -> float:
    """Rate to use after the last epoch in ``history``.

    Pure function of the history: replays the whole loss sequence and decays
    ``current_lr`` once if the final epoch completes a plateau.
    """
    if len(history) == 0:
        raise ValueError("plateau_schedule needs at least one epoch")
    sched = PlateauScheduler(config.plateau_factor, config.plateau_patience)
    decay = False
    for loss in history:
        decay = sched.update(loss)
    return current_lr * config.plateau_factor if decay else current_lr


# ---------------------------------------------------------------------------
# data


@dataclass
class SplitData:
    """Model-ready arrays for one split."""

    inputs: tuple[np.ndarray, ...]
    labels: np.ndarray
    groups: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.size)

    def take(self, idx) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
        return tuple(x[idx] for x in self.inputs), self.labels[idx]


@dataclass
class Normalization:
    spatial: BranchStats
    frequency: BranchStats
    transform: Transform


def frequency_maps(images: np.ndarray, transform: Transform | str) -> np.ndarray:
    """Per-channel log-scaled spectra of a [M, C, N, N] stack."""
    return log_scale(apply_transform(images, transform))


def fit_normalization(train_images: np.ndarray, transform: Transform | str = Transform.DCT) -> Normalization:
    return Normalization(
        spatial=fit_branch_stats(train_images, Branch.SPATIAL),
        frequency=fit_branch_stats(frequency_maps(train_images, transform), Branch.FREQUENCY),
        transform=Transform(transform),
    )


def prepare_split(samples, norm: Normalization) -> SplitData:
    if len(samples) == 0:
        return SplitData((np.zeros((0, 3, 1, 1)),) * 2, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    images = np.stack([s.image for s in samples])
    spatial = apply_normalization(images, norm.spatial)
    freq = apply_normalization(frequency_maps(images, norm.transform), norm.frequency)
    labels = np.array([int(s.label) for s in samples], dtype=np.int64)
    groups = np.array([s.group_id for s in samples], dtype=np.int64)
    return SplitData((spatial, freq), labels, groups)


# ---------------------------------------------------------------------------
# loop


def snapshot(model: Model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.parameters().items()}


def restore(model: Model, state: dict[str, np.ndarray]) -> None:
    for name, p in model.parameters().items():
        p.data[...] = state[name]


def predict_scores(model: Model, data: SplitData, batch_size: int = 64) -> tuple[np.ndarray, float]:
    """Softmax FAKE probability per sample and the mean cross-entropy."""
    scores = np.empty(len(data))
    total = 0.0
    for start in range(0, len(data), batch_size):
        idx = slice(start, start + batch_size)
        inputs, labels = data.take(idx)
        logits = model.forward(*inputs)
        loss = T.softmax_cross_entropy(logits, labels)
        total += loss.item() * labels.size
        scores[idx] = T.softmax(logits.data)[:, 1]
    return scores, total / max(len(data), 1)


def alpha_snapshot(model) -> list[tuple[float, float, float, float]]:
    units = getattr(model, "stitch_units", [])
    return [tuple(float(a) for a in u.alpha.data) for u in units]


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    records: list[EpochRecord]

    @property
    def best_val_acc(self) -> float:
        return self.records[self.best_epoch - 1].val_acc


def select_best(accuracies: Sequence[float]) -> int:
    """1-based epoch with the highest accuracy; ties go to the earliest."""
    best = 0
    for i, a in enumerate(accuracies):
        if a > accuracies[best]:
            best = i
    return best + 1


def train(model: Model, train_data: SplitData, val_data: SplitData, config: TrainingConfig = TrainingConfig(),
          log_path: Path | str | None = None) -> TrainResult:
    """Train in place and return the best-validation-accuracy state.

    The model is left holding the best parameters.  Shuffling uses a
    generator seeded from ``config.seed``, so two runs with equal inputs are
    bit-identical.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation splits must be non-empty")
    params = model.parameters()
    opt = Adam(params, model.is_stitch_param, config)
    sched = PlateauScheduler(config.plateau_factor, config.plateau_patience)
    rng = np.random.default_rng(config.seed)
    records: list[EpochRecord] = []
    best_state = snapshot(model)
    best_epoch = 0
    last_good = snapshot(model)

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_data))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            inputs, labels = train_data.take(idx)
            for p in params.values():
                p.zero_grad()
            with T.Tape() as tape:
                loss = T.softmax_cross_entropy(model.forward(*inputs), labels)
            value = loss.item()
            if not math.isfinite(value):
                restore(model, last_good)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {start // config.batch_size}",
                                       best_state if best_epoch else last_good, records)
            tape.backward(loss)
            try:
                opt.step()
            except FloatingPointError as exc:
                restore(model, last_good)
                raise TrainingDiverged(str(exc), best_state if best_epoch else last_good, records) from exc
            total += value * labels.size
            seen += labels.size
        last_good = snapshot(model)

        scores, val_loss = predict_scores(model, val_data)
        val_acc = accuracy(scores, val_data.labels)
        rec = EpochRecord(epoch, total / seen, val_loss, val_acc, opt.base_lr, opt.stitch_lr, alpha_snapshot(model))
        records.append(rec)
        logger.info("epoch %d train_loss %.5f val_loss %.5f val_acc %.4f", epoch, rec.train_loss, val_loss, val_acc)
        if best_epoch == 0 or val_acc > records[best_epoch - 1].val_acc:
            best_epoch = epoch
            best_state = snapshot(model)
        if sched.update(val_loss):
            opt.scale_lr(config.plateau_factor)
            logger.info("plateau: learning rates now %.3g / %.3g", opt.base_lr, opt.stitch_lr)
        if log_path is not None:
            write_metrics_csv(log_path, records)

    restore(model, best_state)
    return TrainResult(best_state, best_epoch, records)


def metrics_header(n_units: int = N_ALPHA_COLUMNS) -> list[str]:
    cols = ["epoch", "train_loss", "val_loss", "val_acc", "base_lr", "stitch_lr"]
    for k in range(1, n_units + 1):
        cols += [f"alpha_{which}_{k}" for which in ("rr", "rd", "dr", "dd")]
    return cols


def write_metrics_csv(path: Path | str, records: Sequence[EpochRecord]) -> None:
    """Per-epoch log; absent stitch units leave their alpha cells empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(metrics_header())
        for r in records:
            row = [r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc), repr(r.base_lr), repr(r.stitch_lr)]
            for k in range(N_ALPHA_COLUMNS):
                row += [repr(a) for a in r.alphas[k]] if k < len(r.alphas) else [""] * 4
            writer.writerow(row)
