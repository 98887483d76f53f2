"""Scoring of predicted subject labels: accuracy, per-class metrics, confusion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import SubjectVocabulary
from .errors import EmptyInput, LabelOutOfRange, LengthMismatch


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    support: int
    precision: float
    recall: float
    f1: float
    # True when the corresponding denominator was zero and the value was
    # reported as 0 by convention.
    precision_degenerate: bool = False
    recall_degenerate: bool = False


@dataclass
class EvalReport:
    accuracy: float
    per_class: list[ClassMetrics]
    confusion: np.ndarray  # K x K, rows = gold, columns = predicted
    n: int


def _check_pair(predictions: np.ndarray, gold: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if predictions.shape != gold.shape or predictions.ndim != 1:
        raise LengthMismatch(f"predictions {predictions.shape} vs gold {gold.shape}")
    if predictions.size == 0:
        raise EmptyInput("nothing to evaluate")
    return predictions, gold


def accuracy(predictions: np.ndarray, gold: np.ndarray) -> float:
    predictions, gold = _check_pair(predictions, gold)
    return float((predictions == gold).mean())


def confusion_matrix(predictions: np.ndarray, gold: np.ndarray, num_classes: int) -> np.ndarray:
    predictions, gold = _check_pair(predictions, gold)
    for name, values in (("predictions", predictions), ("gold", gold)):
        if values.min() < 0 or values.max() >= num_classes:
            raise LabelOutOfRange(f"{name} outside 0..{num_classes - 1}")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (gold, predictions), 1)
    return matrix


def build_report(predictions: np.ndarray, gold: np.ndarray,
                 vocab: SubjectVocabulary) -> EvalReport:
    """Full report; zero-denominator metrics are 0 with a degenerate flag, never NaN."""
    predictions, gold = _check_pair(predictions, gold)
    confusion = confusion_matrix(predictions, gold, vocab.K)
    n = int(confusion.sum())
    diag = np.diag(confusion)
    col_sums = confusion.sum(axis=0)
    row_sums = confusion.sum(axis=1)

    per_class = []
    for i, name in enumerate(vocab.names):
        p_deg = col_sums[i] == 0
        r_deg = row_sums[i] == 0
        precision = 0.0 if p_deg else diag[i] / col_sums[i]
        recall = 0.0 if r_deg else diag[i] / row_sums[i]
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        per_class.append(ClassMetrics(label=name, support=int(row_sums[i]),
                                      precision=float(precision), recall=float(recall),
                                      f1=float(f1), precision_degenerate=bool(p_deg),
                                      recall_degenerate=bool(r_deg)))

    return EvalReport(accuracy=float(diag.sum() / n), per_class=per_class,
                      confusion=confusion, n=n)


def format_report(report: EvalReport) -> str:
    lines = [f"{'class':<40}{'support':>10}{'precision':>12}{'recall':>10}{'f1':>10}"]
    for m in report.per_class:
        flags = "*" if m.precision_degenerate or m.recall_degenerate else ""
        lines.append(f"{m.label:<40}{m.support:>10}{m.precision:>12.4f}"
                     f"{m.recall:>10.4f}{m.f1:>10.4f}{flags}")
    lines.append(f"{'accuracy':<40}{report.n:>10}{report.accuracy:>12.4f}")
    if any(m.precision_degenerate or m.recall_degenerate for m in report.per_class):
        lines.append("(* zero-denominator metric reported as 0)")
    return "\n".join(lines)


def write_report_kv(report: EvalReport, path: str | Path) -> None:
    """Flat machine-readable key=value serialization."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"n={report.n}\n")
        f.write(f"accuracy={report.accuracy!r}\n")
        for m in report.per_class:
            key = m.label.replace("=", "_")
            f.write(f"support.{key}={m.support}\n")
            f.write(f"precision.{key}={m.precision!r}\n")
            f.write(f"recall.{key}={m.recall!r}\n")
            f.write(f"f1.{key}={m.f1!r}\n")
            if m.precision_degenerate:
                f.write(f"precision_degenerate.{key}=1\n")
            if m.recall_degenerate:
                f.write(f"recall_degenerate.{key}=1\n")


def write_confusion_csv(report: EvalReport, vocab: SubjectVocabulary,
                        path: str | Path) -> None:
    """Confusion matrix as CSV with class names on both axes (rows = gold)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["gold\\predicted", *vocab.names])
        for name, row in zip(vocab.names, report.confusion):
            writer.writerow([name, *row.tolist()])
