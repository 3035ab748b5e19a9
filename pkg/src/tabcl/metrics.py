"""Continual-learning metrics over an accuracy matrix, plus rank-based AUROC.

Experience indices are 1-based throughout, matching how results are reported:
``acc[t, t_prime]`` is the accuracy of the model after experience ``t`` on the
test split of experience ``t_prime <= t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class UndefinedMetric(ValueError):
    """The metric has no value for these inputs (e.g. AUROC on one class)."""


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.shape} predictions vs {labels.shape} labels")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == labels))


@dataclass
class ScoredPredictions:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError("scores and labels must be aligned 1-D vectors")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary")


def auroc(sp: ScoredPredictions) -> float:
    """P(score of a random positive > score of a random negative), ties count 1/2.

    Computed from midranks (Mann-Whitney U), which counts ties exactly as 1/2.
    """
    pos = sp.labels == 1
    n_pos = int(pos.sum())
    n_neg = sp.labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUROC needs at least one positive and one negative label")
    ranks = rankdata(sp.scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class AccuracyMatrix:
    """Lower-triangular table of accuracies (and optional AUROCs) per cell."""

    n_experiences: int
    acc: dict[tuple[int, int], float] = field(default_factory=dict)
    counts: dict[tuple[int, int], int] = field(default_factory=dict)
    auroc: dict[tuple[int, int], float | None] = field(default_factory=dict)

    def record(self, t: int, t_prime: int, value: float, count: int = 0, auroc_value: float | None = None):
        if not 1 <= t_prime <= t <= self.n_experiences:
            raise ValueError(f"cell ({t}, {t_prime}) is outside the lower triangle of a {self.n_experiences}-experience matrix")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.acc[t, t_prime] = float(value)
        self.counts[t, t_prime] = int(count)
        self.auroc[t, t_prime] = None if auroc_value is None else float(auroc_value)

    def get(self, t: int, t_prime: int) -> float:
        try:
            return self.acc[t, t_prime]
        except KeyError:
            raise KeyError(f"accuracy cell (t={t}, t'={t_prime}) has not been recorded") from None

    def row(self, t: int) -> np.ndarray:
        return np.array([self.get(t, k) for k in range(1, t + 1)])

    @classmethod
    def from_array(cls, a: np.ndarray) -> "AccuracyMatrix":
        """Build from a square array; entries above the diagonal are ignored."""
        a = np.asarray(a, dtype=np.float64)
        m = cls(a.shape[0])
        for t in range(1, a.shape[0] + 1):
            for k in range(1, t + 1):
                m.record(t, k, a[t - 1, k - 1])
        return m

    def to_nested(self) -> list[list[float]]:
        """Row t holds a_t^1 .. a_t^t; rows stop at the last recorded experience."""
        out = []
        for t in range(1, self.n_experiences + 1):
            if (t, 1) not in self.acc:
                break
            out.append([self.acc[t, k] for k in range(1, t + 1)])
        return out

    def auroc_nested(self) -> list[list[float | None]]:
        out = []
        for t in range(1, self.n_experiences + 1):
            if (t, 1) not in self.acc:
                break
            out.append([self.auroc.get((t, k)) for k in range(1, t + 1)])
        return out


def _mean(values) -> float:
    # correctly rounded sum, so the result does not depend on summation order
    values = list(values)
    return math.fsum(values) / len(values)


def average_accuracy(m: AccuracyMatrix, t: int) -> float:
    return _mean(m.row(t))


def forgetting(m: AccuracyMatrix, t: int, t_prime: int) -> float:
    """Largest drop on experience t_prime from its best earlier accuracy; may be negative."""
    if not 1 <= t_prime < t:
        raise ValueError(f"forgetting needs 1 <= t' < t, got t={t}, t'={t_prime}")
    best = max(m.get(s, t_prime) for s in range(t_prime, t))
    return best - m.get(t, t_prime)


def average_forgetting(m: AccuracyMatrix, t: int) -> float | None:
    """Mean forgetting over earlier experiences; None at t = 1 where it is undefined."""
    if t < 2:
        return None
    # running max of each column, so each cell is read once
    a = np.full((t, t - 1), np.nan)
    for s in range(1, t + 1):
        for k in range(1, min(s, t - 1) + 1):
            a[s - 1, k - 1] = m.get(s, k)
    best = np.fmax.accumulate(a[:-1], axis=0)[-1]
    return _mean(best - a[-1])


def average_auroc(m: AccuracyMatrix, t: int) -> float | None:
    """Mean of the defined AUROC cells in row t; None if none is defined."""
    vals = [m.auroc.get((t, k)) for k in range(1, t + 1)]
    vals = [v for v in vals if v is not None]
    return _mean(vals) if vals else None


def fmt(value: float | None) -> str:
    return "-" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{value:.4f}"
