"""Confusion matrices and the skill scores derived from them."""
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from flarecast.exceptions import DataError, UndefinedScoreError

FL = 'FL'
NF = 'NF'
DEFAULT_THRESHOLD = 0.5
# Rendered in place of a recall whose subgroup is empty.
NO_DATA = 'NA'


@dataclass(frozen=True)
class ConfusionMatrix:
    """FL is the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ('tp', 'fp', 'tn', 'fn'):
            if getattr(self, name) < 0:
                raise DataError(f"confusion matrix count {name} is negative")

    @classmethod
    def from_labels(cls, pairs: Iterable[Sequence[str]]) -> 'ConfusionMatrix':
        """Tally (true, predicted) label pairs."""
        tp = fp = tn = fn = 0
        for true, predicted in pairs:
            if true == FL:
                tp, fn = (tp + 1, fn) if predicted == FL else (tp, fn + 1)
            else:
                fp, tn = (fp + 1, tn) if predicted == FL else (fp, tn + 1)
        return cls(tp, fp, tn, fn)

    @classmethod
    def from_records(cls, records) -> 'ConfusionMatrix':
        return cls.from_labels((r.true_label, r.predicted_label) for r in records)

    def __add__(self, other: 'ConfusionMatrix') -> 'ConfusionMatrix':
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    def as_dict(self):
        return {'tp': self.tp, 'fp': self.fp, 'tn': self.tn, 'fn': self.fn}


def tss(cm: ConfusionMatrix) -> float:
    """True skill statistic: tp/(tp+fn) - fp/(fp+tn)."""
    if cm.positives == 0 or cm.negatives == 0:
        raise UndefinedScoreError(f"TSS undefined with P={cm.positives}, N={cm.negatives}")
    return cm.tp / cm.positives - cm.fp / cm.negatives


def hss(cm: ConfusionMatrix) -> float:
    """Heidke skill score: 2(tp*tn - fn*fp) / (P(fn+tn) + (tp+fp)N)."""
    denominator = cm.positives * (cm.fn + cm.tn) + (cm.tp + cm.fp) * cm.negatives
    if denominator == 0:
        raise UndefinedScoreError(f"HSS undefined for {cm.as_dict()}")
    return 2.0 * (cm.tp * cm.tn - cm.fn * cm.fp) / denominator


def recall(tp: int, fn: int) -> Optional[float]:
    """tp/(tp+fn), or None for an empty subgroup."""
    if tp < 0 or fn < 0:
        raise DataError("recall counts must be non-negative")
    if tp + fn == 0:
        return None
    return tp / (tp + fn)


def format_recall(value: Optional[float], places: int = 2) -> str:
    return NO_DATA if value is None else f"{value:.{places}f}"


def predicted_label(fl_probability: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    return FL if fl_probability >= threshold else NF


def aggregate_ar_probability(probabilities: Iterable[float]) -> float:
    """Chance that at least one active region flares: 1 - prod(1 - p_i)."""
    survival = 1.0
    for p in probabilities:
        if not 0.0 <= p <= 1.0:
            raise DataError(f"probability {p!r} outside [0, 1]")
        survival *= 1.0 - p
    return 1.0 - survival
