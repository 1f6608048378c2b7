"""Binary-classification metrics with VALID as the positive class."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import EmptyCounts

METRIC_NAMES = ("soundness", "fpr", "precision", "recall", "f1", "accuracy")
SHORT_NAMES = {"soundness": "S", "fpr": "FPR", "precision": "Pr", "recall": "Re", "f1": "F1", "accuracy": "Ac"}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def add(self, predicted: bool, actual: bool) -> "ConfusionCounts":
        if predicted and actual:
            return ConfusionCounts(self.tp + 1, self.fp, self.tn, self.fn)
        if predicted:
            return ConfusionCounts(self.tp, self.fp + 1, self.tn, self.fn)
        if actual:
            return ConfusionCounts(self.tp, self.fp, self.tn, self.fn + 1)
        return ConfusionCounts(self.tp, self.fp, self.tn + 1, self.fn)

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def round_half_up(x: Fraction, places: int = 1) -> Fraction:
    scale = 10**places
    return Fraction(math.floor(x * scale + Fraction(1, 2)), scale)


@dataclass(frozen=True)
class MetricsRow:
    """Percentages kept as exact rationals; :meth:`display` rounds for output."""

    soundness: Fraction
    fpr: Fraction
    precision: Fraction
    recall: Fraction
    f1: Fraction
    accuracy: Fraction

    def display(self, places: int = 1) -> dict[str, str]:
        return {name: f"{float(round_half_up(getattr(self, name), places)):.{places}f}" for name in METRIC_NAMES}

    def rounded(self, places: int = 1) -> dict[str, float]:
        return {name: float(round_half_up(getattr(self, name), places)) for name in METRIC_NAMES}

    def to_json(self) -> dict:
        return {
            name: {"num": getattr(self, name).numerator, "den": getattr(self, name).denominator, "display": shown}
            for name, shown in self.display().items()
        }

    def line(self) -> str:
        shown = self.display()
        return " ".join(f"{SHORT_NAMES[n]}={shown[n]}" for n in METRIC_NAMES)


def compute_metrics(c: ConfusionCounts) -> MetricsRow:
    """Soundness, FPR, precision, recall, F1 and accuracy as percentages.

    Empty denominators give 0.  Soundness is 100 * (1 - fp / total).
    """
    if c.total == 0:
        raise EmptyCounts("no samples to compute metrics over")
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
    return MetricsRow(
        soundness=100 * (1 - Fraction(c.fp, c.total)),
        fpr=100 * _ratio(c.fp, c.fp + c.tn),
        precision=100 * precision,
        recall=100 * recall,
        f1=100 * f1,
        accuracy=100 * Fraction(c.tp + c.tn, c.total),
    )
