from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence

import numpy as np

from macdm.core.exceptions import ShapeMismatchError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts with CML as the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @classmethod
    def from_predictions(cls, y_true: Iterable[int], y_pred: Iterable[int]) -> "ConfusionCounts":
        truth = np.asarray(list(y_true), dtype=np.int64)
        pred = np.asarray(list(y_pred), dtype=np.int64)
        if truth.shape != pred.shape:
            raise ShapeMismatchError(f"{truth.shape[0]} labels vs {pred.shape[0]} predictions")
        return cls(
            tp=int(((truth == 1) & (pred == 1)).sum()),
            fp=int(((truth == 0) & (pred == 1)).sum()),
            tn=int(((truth == 0) & (pred == 0)).sum()),
            fn=int(((truth == 1) & (pred == 0)).sum()),
        )


def _ratio(num: int, den: int, name: str) -> Fraction:
    if den == 0:
        raise UndefinedMetricError(f"{name} is undefined: zero denominator")
    return Fraction(num, den)


def accuracy(c: ConfusionCounts) -> Fraction:
    return _ratio(c.tp + c.tn, c.total, "accuracy")


def sensitivity(c: ConfusionCounts) -> Fraction:
    return _ratio(c.tp, c.tp + c.fn, "sensitivity")


def specificity(c: ConfusionCounts) -> Fraction:
    return _ratio(c.tn, c.tn + c.fp, "specificity")


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]

    @classmethod
    def partial(cls, counts: ConfusionCounts) -> "ClassificationMetrics":
        """Like classification_metrics, but undefined entries become None."""

        def safe(fn) -> Optional[float]:
            try:
                return float(fn(counts))
            except UndefinedMetricError:
                return None

        return cls(safe(accuracy), safe(sensitivity), safe(specificity))


def classification_metrics(counts: ConfusionCounts) -> ClassificationMetrics:
    """Exact (rational) accuracy, sensitivity and specificity; any zero denominator raises."""
    return ClassificationMetrics(
        accuracy=float(accuracy(counts)),
        sensitivity=float(sensitivity(counts)),
        specificity=float(specificity(counts)),
    )


def dice(pred_mask: np.ndarray, true_mask: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|), with two empty masks scoring 1."""
    pred = np.asarray(pred_mask) > 0
    true = np.asarray(true_mask) > 0
    if pred.shape != true.shape:
        raise ShapeMismatchError(f"mask shapes differ: {pred.shape} vs {true.shape}")
    denominator = int(pred.sum()) + int(true.sum())
    if denominator == 0:
        return 1.0
    return float(Fraction(2 * int((pred & true).sum()), denominator))


@dataclass(frozen=True)
class DiceSummary:
    scores: Sequence[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores)) if len(self.scores) else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.scores, ddof=1)) if len(self.scores) > 1 else 0.0


def mean_std(values: Sequence[float]) -> List[float]:
    arr = np.asarray(values, dtype=np.float64)
    return [float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0]
