"""Confusion-matrix arithmetic: per-class precision/recall/F1/support,
overall accuracy, and report rendering/export.

Conventions: precision is 0 when a class was never predicted, recall is 0
when a class has no true samples, F1 is 0 when precision + recall is 0.
Rounded percents use round-half-up.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class EvalReport:
    class_names: list[str]
    confusion: np.ndarray  # K x K int, rows = true, columns = predicted
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    accuracy: float


def percent(x: float) -> int:
    """Round-half-up to whole percent (0.835 -> 84)."""
    return int(math.floor(100.0 * x + 0.5))


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[int(t), int(p)] += 1
    return cm


def classification_report(confusion) -> dict:
    """Derive precision/recall/F1/support/accuracy from a K x K count matrix."""
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {cm.shape}")
    if np.any(cm < 0):
        raise ShapeError("confusion matrix entries must be >= 0")
    diag = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0)
    total = cm.sum()
    accuracy = float(diag.sum() / total) if total else 0.0
    return {
        "precision": precision.tolist(),
        "recall": recall.tolist(),
        "f1": f1.tolist(),
        "support": cm.sum(axis=1).astype(int).tolist(),
        "accuracy": accuracy,
    }


def make_report(confusion, class_names) -> EvalReport:
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.shape[0] != len(class_names):
        raise ShapeError(
            f"{len(class_names)} class names for a {cm.shape} confusion matrix"
        )
    rep = classification_report(cm)
    return EvalReport(list(class_names), cm, rep["precision"], rep["recall"],
                      rep["f1"], rep["support"], rep["accuracy"])


def render_text(report: EvalReport) -> str:
    """Classification-report grid plus the confusion matrix."""
    names = report.class_names
    width = max(12, *(len(n) for n in names)) + 2
    head = "".ljust(12) + "".join(n.rjust(width) for n in names)
    lines = [head]
    for label, values in (("precision", report.precision),
                          ("recall", report.recall),
                          ("f1-score", report.f1)):
        lines.append(label.ljust(12) +
                     "".join(f"{percent(v)}%".rjust(width) for v in values))
    lines.append("support".ljust(12) +
                 "".join(str(s).rjust(width) for s in report.support))
    lines.append("")
    lines.append(f"accuracy: {100.0 * report.accuracy:.1f}% "
                 f"({int(np.trace(report.confusion))}/{int(report.confusion.sum())})")
    lines.append("")
    lines.append("confusion matrix (rows = true, columns = predicted)")
    lines.append("".ljust(12) + "".join(n.rjust(width) for n in names))
    for name, row in zip(names, report.confusion):
        lines.append(name.ljust(12) + "".join(str(int(v)).rjust(width) for v in row))
    return "\n".join(lines)


def report_to_json(report: EvalReport) -> dict:
    """Exact counts plus both rational and rounded-percent metric forms."""
    cm = report.confusion
    diag = np.diag(cm)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    per_class = {}
    for i, name in enumerate(report.class_names):
        per_class[name] = {
            "precision": {"fraction": [int(diag[i]), int(col[i])],
                          "value": report.precision[i],
                          "percent": percent(report.precision[i])},
            "recall": {"fraction": [int(diag[i]), int(row[i])],
                       "value": report.recall[i],
                       "percent": percent(report.recall[i])},
            "f1": {"value": report.f1[i], "percent": percent(report.f1[i])},
            "support": int(report.support[i]),
        }
    return {
        "classes": report.class_names,
        "confusion": cm.astype(int).tolist(),
        "per_class": per_class,
        "accuracy": {"fraction": [int(diag.sum()), int(cm.sum())],
                     "value": report.accuracy,
                     "percent": percent(report.accuracy)},
    }


def report_from_json(payload: dict) -> EvalReport:
    return make_report(np.asarray(payload["confusion"], dtype=np.int64),
                       payload["classes"])


def export_report(report: EvalReport, path, fmt: str = "json") -> None:
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_to_json(report), fh, indent=2)
            fh.write("\n")
    elif fmt == "text":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_text(report) + "\n")
    else:
        raise ValueError(f"format must be 'json' or 'text', got {fmt!r}")
