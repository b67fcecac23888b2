"""Accuracy, tie-exact ROC AUC and per-group score averaging."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

THRESHOLD = 0.5


class UndefinedAUC(ValueError):
    """AUC needs at least one positive and one negative."""


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    auc: float  # nan when only one class is present
    tp: int
    tn: int
    fp: int
    fn: int
    n_samples: int

    @property
    def auc_defined(self) -> bool:
        return not math.isnan(self.auc)


def _pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    return s, y


def accuracy(scores, labels, threshold: float = THRESHOLD) -> float:
    """Fraction of correct decisions; ``score >= threshold`` means FAKE (1)."""
    s, y = _pair(scores, labels)
    if s.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean((s >= threshold).astype(int) == y))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; tied pairs count one half."""
    s, y = _pair(scores, labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC("AUC is undefined when only one class is present")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pairs(scores, labels) -> float:
    """O(P*N) pair counting; the reference for :func:`auc`."""
    s, y = _pair(scores, labels)
    pos = s[y == 1]
    neg = s[y != 1]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedAUC("AUC is undefined when only one class is present")
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (pos.size * neg.size)


def group_average_scores(scores, group_ids) -> tuple[np.ndarray, np.ndarray]:
    """Mean score per group.  Returns ``(group ids sorted ascending, means)``."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    g = np.asarray(group_ids).reshape(-1)
    if s.shape != g.shape:
        raise ValueError(f"{s.size} scores but {g.size} group ids")
    groups, inverse = np.unique(g, return_inverse=True)
    sums = np.zeros(groups.size)
    np.add.at(sums, inverse, s)
    counts = np.bincount(inverse, minlength=groups.size)
    return groups, sums / counts


def evaluate(scores, labels, threshold: float = THRESHOLD) -> EvalReport:
    s, y = _pair(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    tn = int(np.sum(~pred & (y != 1)))
    fp = int(np.sum(pred & (y != 1)))
    fn = int(np.sum(~pred & (y == 1)))
    try:
        area = auc(s, y)
    except UndefinedAUC:
        area = float("nan")
    return EvalReport(accuracy(s, y, threshold), area, tp, tn, fp, fn, int(s.size))


def evaluate_groups(scores, labels, group_ids: Sequence[int], threshold: float = THRESHOLD) -> EvalReport:
    """Report on per-group mean scores, each group taking the label of its members.

    Real and fake frames of a pair share a group id, so groups here are keyed
    by (group id, label).
    """
    s, y = _pair(scores, labels)
    keys = np.asarray(group_ids, dtype=np.int64) * 2 + y.astype(np.int64)
    groups, means = group_average_scores(s, keys)
    return evaluate(means, groups % 2, threshold)
