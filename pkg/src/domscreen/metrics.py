"""Confusion-matrix statistics for the valuable / non-valuable screen."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError

VALUABLE = 1
NON_VALUABLE = -1


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def _require_nonempty(self):
        if self.total < 1:
            raise ValidationError("metrics need at least one counted prediction")


def _is_positive(label) -> bool:
    if label in (VALUABLE, True, "valuable", "+"):
        return True
    if label in (NON_VALUABLE, 0, False, "non_valuable", "-"):
        return False
    raise ValidationError(f"not a binary label: {label!r}")


def confusion(predictions: Sequence, truths: Sequence) -> ConfusionCounts:
    if len(predictions) != len(truths):
        raise ValidationError(f"{len(predictions)} predictions but {len(truths)} truths")
    if not predictions:
        raise ValidationError("confusion matrix of an empty set")
    tp = tn = fp = fn = 0
    for p, t in zip(predictions, truths):
        p, t = _is_positive(p), _is_positive(t)
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, tn, fp, fn)


def accuracy(c: ConfusionCounts) -> float:
    c._require_nonempty()
    return (c.tp + c.tn) / c.total


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise ValidationError("sensitivity undefined: no actual positives")
    return c.tp / (c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    if c.fp + c.tn == 0:
        raise ValidationError("specificity undefined: no actual negatives")
    return c.tn / (c.fp + c.tn)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 whenever a marginal total is zero."""
    c._require_nonempty()
    radicand = (c.tp + c.fn) * (c.tp + c.fp) * (c.tn + c.fp) * (c.tn + c.fn)
    if radicand == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(radicand)


REPORT_COLUMNS = ("TP", "TN", "FP", "FN", "ACC", "SE", "SP", "MCC")


def report_row(c: ConfusionCounts) -> dict[str, float | int | None]:
    """All eight columns; SE/SP are None when their class is absent."""

    def safe(fn):
        try:
            return fn(c)
        except ValidationError:
            return None

    return {
        "TP": c.tp, "TN": c.tn, "FP": c.fp, "FN": c.fn,
        "ACC": accuracy(c), "SE": safe(sensitivity), "SP": safe(specificity), "MCC": mcc(c),
    }


def format_table(rows: dict[str, ConfusionCounts]) -> str:
    """Aligned text table, metrics rounded to three decimals."""
    label_width = max([len(name) for name in rows] + [3])
    header = " " * label_width + "".join(f"{col:>8}" for col in REPORT_COLUMNS)
    lines = [header]
    for name, counts in rows.items():
        row = report_row(counts)
        cells = []
        for col in REPORT_COLUMNS:
            value = row[col]
            if value is None:
                cells.append(f"{'n/a':>8}")
            elif isinstance(value, int):
                cells.append(f"{value:>8d}")
            else:
                cells.append(f"{value:>8.3f}")
        lines.append(f"{name:<{label_width}}" + "".join(cells))
    return "\n".join(lines)
