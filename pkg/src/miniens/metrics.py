"""Confusion matrices and the accuracy / weighted P,R / macro-F1 report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import LABELS
from .errors import EmptyEvaluation, LengthMismatch

N = len(LABELS)


def confusion(gold: Sequence[int], pred: Sequence[int]) -> np.ndarray:
    """3x3 counts, rows = gold class, columns = predicted class."""
    if len(gold) != len(pred):
        raise LengthMismatch(f"gold has {len(gold)} labels, pred has {len(pred)}")
    cm = np.zeros((N, N), dtype=np.int64)
    for g, p in zip(gold, pred):
        if not (0 <= int(g) < N and 0 <= int(p) < N):
            raise ValueError(f"labels must be in 0..{N - 1}, got gold={g} pred={p}")
        cm[int(g), int(p)] += 1
    return cm


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    macro_f1: float
    per_class: tuple[ClassScores, ...]

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.accuracy, self.weighted_precision, self.weighted_recall, self.macro_f1)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def report(cm: np.ndarray) -> MetricsReport:
    """Scores from a confusion matrix; empty denominators score 0, absent classes count in macro F1."""
    cm = np.asarray(cm)
    total = int(cm.sum())
    if total == 0:
        raise EmptyEvaluation("cannot score an empty evaluation")
    per_class = []
    for c in range(N):
        tp = int(cm[c, c])
        support = int(cm[c, :].sum())
        precision = _ratio(tp, int(cm[:, c].sum()))
        recall = _ratio(tp, support)
        f1 = _ratio(2 * precision * recall, precision + recall)
        per_class.append(ClassScores(precision, recall, f1, support))
    return MetricsReport(
        accuracy=int(np.trace(cm)) / total,
        weighted_precision=sum(s.support * s.precision for s in per_class) / total,
        weighted_recall=sum(s.support * s.recall for s in per_class) / total,
        macro_f1=sum(s.f1 for s in per_class) / N,
        per_class=tuple(per_class),
    )


def evaluate(gold: Sequence[int], pred: Sequence[int]) -> MetricsReport:
    return report(confusion(gold, pred))


def format_row(report_: MetricsReport) -> str:
    """One TSV row: accuracy, weighted precision, weighted recall, macro F1."""
    return "\t".join(f"{x:.6f}" for x in report_.as_row())


def results_table(rows: Sequence[tuple[str, str, MetricsReport]]) -> str:
    """Aligned text table of (language, system, report) rows.

    The best macro F1 per language is flagged with ``*``; the first row wins ties.
    """
    best: dict[str, int] = {}
    for i, (lang, _, rep) in enumerate(rows):
        if lang not in best or rep.macro_f1 > rows[best[lang]][2].macro_f1:
            best[lang] = i
    header = ("Language", "System", "Accuracy", "W-Precision", "W-Recall", "Macro-F1")
    body = []
    for i, (lang, system, rep) in enumerate(rows):
        mark = "*" if best.get(lang) == i else " "
        body.append((lang, system + mark, *(f"{x:.4f}" for x in rep.as_row())))
    widths = [max(len(r[j]) for r in [header, *body]) for j in range(len(header))]

    def fmt(r):
        left = [r[0].ljust(widths[0]), r[1].ljust(widths[1])]
        right = [r[j].rjust(widths[j]) for j in range(2, len(r))]
        return "  ".join(left + right).rstrip()

    rule = "-" * len(fmt(header))
    lines = ["Sentiment results (test sets)", rule, fmt(header), rule]
    lines += [fmt(r) for r in body]
    lines += [rule, "* best system for the language (macro F1)"]
    return "\n".join(lines) + "\n"
