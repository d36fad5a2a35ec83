"""Confusion matrices, per-class precision/recall/F1 and class weights."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMatrix, UnknownLabel, ZeroCount


@dataclass
class ConfusionMatrix:
    classes: list[str]
    counts: np.ndarray = None  # rows: true class, columns: predicted class

    def __post_init__(self):
        self.classes = list(self.classes)
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")
        k = len(self.classes)
        if self.counts is None:
            self.counts = np.zeros((k, k), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k}")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")
        self._pos = {c: i for i, c in enumerate(self.classes)}

    def index(self, label: str) -> int:
        try:
            return self._pos[label]
        except KeyError:
            raise UnknownLabel(f"label {label!r} is not one of {self.classes}") from None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.classes != self.classes:
            raise ValueError("cannot merge matrices over different class lists")
        return ConfusionMatrix(self.classes, self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, true_label: str, predicted_label: str) -> ConfusionMatrix:
    cm.counts[cm.index(true_label), cm.index(predicted_label)] += 1
    return cm


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassMetrics:
    classes: list[str]
    per_class: dict[str, ClassScore]
    accuracy: float
    zero_division: list[str] = field(default_factory=list)  # "<class>:precision" / "<class>:recall"

    def to_record(self) -> dict:
        return {
            "classes": list(self.classes),
            "per_class": {c: vars(self.per_class[c]).copy() for c in self.classes},
            "accuracy": self.accuracy,
            "zero_division": list(self.zero_division),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ClassMetrics":
        return cls(list(rec["classes"]), {c: ClassScore(**rec["per_class"][c]) for c in rec["classes"]},
                   rec["accuracy"], list(rec["zero_division"]))


def compute_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    """Per-class precision, recall and F1 plus overall accuracy.

    A ratio with a zero denominator is reported as 0 and listed in
    ``zero_division``.
    """
    total = cm.total
    if total == 0:
        raise EmptyMatrix("confusion matrix has no counts")
    c = cm.counts
    per, flags = {}, []
    for i, name in enumerate(cm.classes):
        tp = int(c[i, i])
        predicted, actual = int(c[:, i].sum()), int(c[i, :].sum())
        if predicted:
            p = tp / predicted
        else:
            p = 0.0
            flags.append(f"{name}:precision")
        if actual:
            r = tp / actual
        else:
            r = 0.0
            flags.append(f"{name}:recall")
        per[name] = ClassScore(p, r, f1_score(p, r), actual)
    return ClassMetrics(list(cm.classes), per, int(np.trace(c)) / total, flags)


def compute_class_weights(counts: dict[str, int]) -> dict[str, float]:
    """Balanced inverse-frequency weights ``N / (K * n_c)``."""
    if not counts:
        raise ZeroCount("no classes given")
    zero = [k for k, n in counts.items() if n <= 0]
    if zero:
        raise ZeroCount(f"class(es) with no samples: {zero}")
    n_total, k = sum(counts.values()), len(counts)
    return {c: n_total / (k * n) for c, n in counts.items()}


def report(metrics: ClassMetrics) -> tuple[str, dict]:
    """Two-decimal text table (class rows, then accuracy) and the full-precision record."""
    width = max([len("accuracy")] + [len(c) for c in metrics.classes])
    lines = [f"{'':<{width}}  precision  recall  f1-score  support"]
    for c in metrics.classes:
        s = metrics.per_class[c]
        lines.append(f"{c:<{width}}  {s.precision:>9.2f}  {s.recall:>6.2f}  {s.f1:>8.2f}  {s.support:>7d}")
    support = sum(s.support for s in metrics.per_class.values())
    lines.append(f"{'accuracy':<{width}}  {'':>9}  {'':>6}  {metrics.accuracy:>8.2f}  {support:>7d}")
    return "\n".join(lines) + "\n", metrics.to_record()


def read_predictions(text: str) -> list[tuple[str, str, str]]:
    """Rows of ``(image id, true label, predicted label)``; a header row is optional."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(x.strip() for x in r)]
    if rows and [x.strip().lower() for x in rows[0]][1:3] == ["true", "predicted"]:
        rows = rows[1:]
    out = []
    for n, r in enumerate(rows, 1):
        if len(r) != 3:
            raise ValueError(f"row {n}: expected 3 fields (image id, true, predicted), got {len(r)}")
        out.append(tuple(x.strip() for x in r))
    return out


def confusion_from_rows(rows, classes=None) -> ConfusionMatrix:
    if classes is None:
        classes = sorted({t for _, t, _ in rows} | {p for _, _, p in rows})
    cm = ConfusionMatrix(classes)
    for _, t, p in rows:
        accumulate(cm, t, p)
    return cm


def metrics_json(metrics: ClassMetrics) -> str:
    return json.dumps(metrics.to_record(), indent=2, sort_keys=True) + "\n"


def metrics_close(a: ClassMetrics, b: ClassMetrics, tol: float = 0.0) -> bool:
    if a.classes != b.classes or a.zero_division != b.zero_division:
        return False
    pairs = [(a.accuracy, b.accuracy)]
    for c in a.classes:
        x, y = a.per_class[c], b.per_class[c]
        if x.support != y.support:
            return False
        pairs += [(x.precision, y.precision), (x.recall, y.recall), (x.f1, y.f1)]
    return all(math.isclose(u, v, rel_tol=0, abs_tol=tol) for u, v in pairs)
