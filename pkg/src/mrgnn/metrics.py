"""Binary and multi-class classification metrics."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "UndefinedMetricError",
    "MetricsReport",
    "roc_auc",
    "average_precision",
    "auprc",
    "confusion_matrix",
    "confusion_and_aggregates",
    "binary_report",
    "multiclass_report",
    "BINARY_COLUMNS",
    "MULTICLASS_COLUMNS",
]

BINARY_COLUMNS = ("auc", "accuracy", "recall", "f1")
MULTICLASS_COLUMNS = ("micro_avg", "macro_recall", "macro_precision", "macro_f1", "auprc")


class UndefinedMetricError(ValueError):
    pass


def _ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney estimate of P(positive outscores negative); ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores for {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes present")
    u = _ranks(s)[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores: Sequence[float], relevant: Sequence[bool]) -> float:
    """Step-wise sum of precision times recall increment down the ranked list.

    Tied scores form one threshold, so the result does not depend on how
    ties happen to be ordered.
    """
    s = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevant, dtype=bool)
    total = int(rel.sum())
    if total == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, rel = s[order], rel[order]
    ap = 0.0
    tp = 0
    prev_recall = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j + 1 < n and s[j + 1] == s[i]:
            j += 1
        tp += int(rel[i : j + 1].sum())
        recall = tp / total
        precision = tp / (j + 1)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return ap


def auprc(scores_per_class: np.ndarray, labels: Sequence[int]) -> float:
    """Macro average of one-vs-rest average precision over classes present in ``labels``."""
    P = np.asarray(scores_per_class, dtype=np.float64)
    y = np.asarray(labels)
    if P.ndim != 2 or P.shape[0] != len(y):
        raise ValueError(f"scores shape {P.shape} does not match {len(y)} labels")
    present = []
    for c in range(P.shape[1]):
        if np.any(y == c):
            present.append(c)
        else:
            warnings.warn(f"class {c} has no positive samples; excluded from AUPRC", stacklevel=2)
    if not present:
        raise UndefinedMetricError("no class has positives")
    return float(np.mean([average_precision(P[:, c], y == c) for c in present]))


def confusion_matrix(predictions: Sequence[int], labels: Sequence[int], k: int) -> np.ndarray:
    """Rows are true labels, columns predictions."""
    p = np.asarray(predictions, dtype=np.intp)
    y = np.asarray(labels, dtype=np.intp)
    if p.shape != y.shape:
        raise ValueError(f"{len(p)} predictions for {len(y)} labels")
    for name, arr in (("label", y), ("prediction", p)):
        bad = arr[(arr < 0) | (arr >= k)]
        if bad.size:
            raise ValueError(f"{name} {int(bad[0])} outside 0..{k - 1}")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def _per_class(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(cm).astype(float)
    precision = np.array([_safe_div(tp[c], cm[:, c].sum()) for c in range(len(cm))])
    recall = np.array([_safe_div(tp[c], cm[c, :].sum()) for c in range(len(cm))])
    f1 = np.array([_safe_div(2 * p * r, p + r) for p, r in zip(precision, recall)])
    return precision, recall, f1


@dataclass
class MetricsReport:
    task: str
    values: dict[str, float]
    confusion: np.ndarray
    loss: float | None = None
    extra: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    @property
    def columns(self) -> tuple[str, ...]:
        return BINARY_COLUMNS if self.task == "binary" else MULTICLASS_COLUMNS

    def to_dict(self) -> dict:
        d = {"task": self.task, **self.values, "confusion": self.confusion.tolist()}
        if self.loss is not None:
            d["loss"] = self.loss
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        # undefined metrics (NaN) become null so the output stays strict JSON
        doc = {k: (None if isinstance(v, float) and v != v else v) for k, v in self.to_dict().items()}
        return json.dumps(doc, sort_keys=True, allow_nan=False)

    def to_csv(self) -> str:
        """Header plus one row, in the column order used for the result tables."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerow([repr(float(self.values[c])) if c in self.values else "" for c in self.columns])
        return buf.getvalue()


def confusion_and_aggregates(predictions: Sequence[int], labels: Sequence[int], k: int) -> MetricsReport:
    """Confusion matrix with micro and macro aggregates (and positive-class stats when ``k == 2``)."""
    cm = confusion_matrix(predictions, labels, k)
    total = int(cm.sum())
    precision, recall, f1 = _per_class(cm)
    values = {
        "micro_avg": _safe_div(float(np.trace(cm)), total),
        "macro_recall": float(recall.mean()),
        "macro_precision": float(precision.mean()),
        "macro_f1": float(f1.mean()),
    }
    if k == 2:
        values.update(
            accuracy=values["micro_avg"],
            precision=float(precision[1]),
            recall=float(recall[1]),
            f1=float(f1[1]),
        )
    return MetricsReport("binary" if k == 2 else "multiclass", values, cm)


def binary_report(probs: np.ndarray, labels: Sequence[int]) -> MetricsReport:
    """AUC from the positive-class probability, the rest from the argmax label."""
    probs = np.asarray(probs, dtype=np.float64)
    report = confusion_and_aggregates(np.argmax(probs, axis=1), labels, 2)
    try:
        report.values["auc"] = roc_auc(probs[:, 1], labels)
    except UndefinedMetricError:
        report.values["auc"] = float("nan")
    return report


def multiclass_report(probs: np.ndarray, labels: Sequence[int], k: int) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    report = confusion_and_aggregates(np.argmax(probs, axis=1), labels, k)
    report.task = "multiclass"
    report.values["auprc"] = auprc(probs, labels)
    return report
