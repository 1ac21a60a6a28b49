"""Confusion matrix and the detection metric suite (Attack is the positive class)."""

from __future__ import annotations

from typing import Dict, Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .can_core import Label
from .errors import EmptyMatrix

Verdict = Union[Label, bool, int]

UNDEFINED = "—"


class ConfusionMatrix(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = Field(0, ge=0)
    fp: int = Field(0, ge=0)
    fn: int = Field(0, ge=0)
    tn: int = Field(0, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp, fp=self.fp + other.fp, fn=self.fn + other.fn, tn=self.tn + other.tn
        )


class Metrics(BaseModel):
    """Derived rates; ``None`` marks a zero denominator."""

    model_config = ConfigDict(frozen=True)

    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    fpr: Optional[float] = None
    fnr: Optional[float] = None
    accuracy: Optional[float] = None


def _is_attack(value: Verdict) -> bool:
    if isinstance(value, Label):
        return value is Label.ATTACK
    return bool(value)


def accumulate(cm: ConfusionMatrix, predicted: Verdict, actual: Verdict) -> ConfusionMatrix:
    pred, true = _is_attack(predicted), _is_attack(actual)
    if pred and true:
        return cm.model_copy(update={"tp": cm.tp + 1})
    if pred:
        return cm.model_copy(update={"fp": cm.fp + 1})
    if true:
        return cm.model_copy(update={"fn": cm.fn + 1})
    return cm.model_copy(update={"tn": cm.tn + 1})


def confusion_from_arrays(predicted: Sequence[int] | np.ndarray, actual: Sequence[int] | np.ndarray) -> ConfusionMatrix:
    pred = np.asarray(predicted).astype(bool)
    true = np.asarray(actual).astype(bool)
    if pred.shape != true.shape:
        raise ValueError(f"prediction/label length mismatch: {pred.shape} vs {true.shape}")
    return ConfusionMatrix(
        tp=int(np.sum(pred & true)),
        fp=int(np.sum(pred & ~true)),
        fn=int(np.sum(~pred & true)),
        tn=int(np.sum(~pred & ~true)),
    )


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def compute(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise EmptyMatrix("cannot derive metrics from an empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(
        precision=precision,
        recall=recall,
        f1=f1,
        fpr=_ratio(cm.fp, cm.fp + cm.tn),
        fnr=_ratio(cm.fn, cm.fn + cm.tp),
        accuracy=(cm.tp + cm.tn) / cm.total,
    )


def average_accuracy(metrics: Iterable[Metrics]) -> float:
    values = [m.accuracy for m in metrics]
    if not values or any(v is None for v in values):
        raise EmptyMatrix("average accuracy needs at least one defined accuracy")
    return float(sum(values) / len(values))


# Published confusion matrices of the quantised model on the four attack captures.
REFERENCE_CONFUSION: Dict[str, ConfusionMatrix] = {
    "dos": ConfusionMatrix(tp=16269, fn=0, fp=5, tn=33726),
    "fuzzy": ConfusionMatrix(tp=11012, fn=166, fp=69, tn=38753),
    "rpm": ConfusionMatrix(tp=13080, fn=211, fp=316, tn=36393),
    "gear": ConfusionMatrix(tp=19299, fn=117, fp=471, tn=30113),
}
