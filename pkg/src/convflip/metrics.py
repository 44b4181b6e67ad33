"""Precision/recall/F1, weighted F1, trigger F1 and confusion matrices.

Empty denominators yield 0 for precision, recall and F1.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .dialogue import EMOTION_NAMES, TriggerAnnotation
from .instances import context_window

NON_TRIGGER, TRIGGER = 0, 1


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    classes: tuple
    per_class: dict
    weighted_f1: float
    confusion: np.ndarray  # rows = actual, columns = predicted
    trigger_f1: float | None = None
    names: tuple = field(default=())

    def to_json(self) -> dict:
        names = self.names or tuple(str(c) for c in self.classes)
        out = {
            "classes": list(names),
            "per_class": {
                n: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
                for n, s in zip(names, (self.per_class[c] for c in self.classes))
            },
            "weighted_f1": self.weighted_f1,
            "confusion": self.confusion.tolist(),
        }
        if self.trigger_f1 is not None:
            out["trigger_f1"] = self.trigger_f1
        return out

    def to_text(self) -> str:
        names = self.names or tuple(str(c) for c in self.classes)
        width = max(10, *(len(n) for n in names))
        lines = [f"{'class':<{width}} {'precision':>9} {'recall':>9} {'f1':>9} {'support':>8}"]
        for n, c in zip(names, self.classes):
            s = self.per_class[c]
            lines.append(f"{n:<{width}} {s.precision:>9.4f} {s.recall:>9.4f} {s.f1:>9.4f} {s.support:>8d}")
        lines.append(f"{'weighted':<{width}} {'':>9} {'':>9} {self.weighted_f1:>9.4f} {int(self.confusion.sum()):>8d}")
        if self.trigger_f1 is not None:
            lines.append(f"{'trigger':<{width}} {'':>9} {'':>9} {self.trigger_f1:>9.4f}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        names = self.names or tuple(str(c) for c in self.classes)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actual\\predicted", *names])
        for n, row in zip(names, self.confusion.tolist()):
            w.writerow([n, *row])
        return buf.getvalue()


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


def confusion_matrix(gold: Sequence, pred: Sequence, classes: Sequence[Hashable]) -> np.ndarray:
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    pos = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for g, p in zip(gold, pred):
        try:
            cm[pos[g], pos[p]] += 1
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} not in class set") from None
    return cm


def report_from_confusion(cm: np.ndarray, classes: Sequence[Hashable], positive=None, names=()) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    per = {}
    weighted = 0.0
    total = int(cm.sum())
    for i, c in enumerate(classes):
        tp = int(cm[i, i])
        support = int(cm[i].sum())
        precision = _div(tp, int(cm[:, i].sum()))
        recall = _div(tp, support)
        f1 = _div(2 * precision * recall, precision + recall)
        per[c] = ClassScores(precision, recall, f1, support)
        weighted += f1 * support
    trigger = per[positive].f1 if positive is not None else None
    return MetricsReport(tuple(classes), per, _div(weighted, total), cm, trigger, tuple(names))


def classification_report(gold: Sequence, pred: Sequence, classes: Sequence[Hashable], positive=None, names=()) -> MetricsReport:
    """Per-class and support-weighted scores; ``positive`` selects the class reported as trigger F1."""
    if not names and list(classes) == list(range(len(EMOTION_NAMES))):
        names = EMOTION_NAMES
    return report_from_confusion(confusion_matrix(gold, pred, classes), classes, positive, names)


def binary_report(gold: Sequence[int], pred: Sequence[int]) -> MetricsReport:
    return classification_report(gold, pred, [NON_TRIGGER, TRIGGER], positive=TRIGGER, names=("non-trigger", "trigger"))


def binary_report_from_counts(tp: int, fp: int, fn: int, tn: int = 0) -> MetricsReport:
    cm = np.array([[tn, fp], [fn, tp]], dtype=np.int64)
    return report_from_confusion(cm, [NON_TRIGGER, TRIGGER], positive=TRIGGER, names=("non-trigger", "trigger"))


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    return _div(2 * tp, 2 * tp + fp + fn)


def weighted_f1(gold: Sequence, pred: Sequence, classes: Sequence | None = None) -> float:
    classes = sorted(set(gold) | set(pred)) if classes is None else classes
    if not classes:
        return 0.0
    return classification_report(gold, pred, classes).weighted_f1


# ------------------------------------------------------------------ trigger evaluation


def trigger_decisions(
    gold: Mapping[str, Iterable[TriggerAnnotation]],
    predicted: Mapping[str, Iterable[TriggerAnnotation]],
    window: int,
) -> tuple[list[int], list[int]]:
    """Flatten every (target, candidate) pair into aligned gold/predicted binary labels.

    Candidates are the window positions plus any gold or predicted position outside it,
    so out-of-window gold triggers surface as misses.
    """
    gold_map = {(did, a.target_index): a.trigger_indices for did, items in gold.items() for a in items}
    pred_map: dict = {}
    for did, items in predicted.items():
        for a in items:
            key = (did, a.target_index)
            if key not in gold_map:
                raise ValueError(f"prediction for unknown target {key}")
            pred_map[key] = a.trigger_indices
    g_out, p_out = [], []
    for key in sorted(gold_map):
        g = gold_map[key]
        p = pred_map.get(key, frozenset())
        candidates = sorted(set(context_window(key[1], window)) | g | p)
        g_out += [int(k in g) for k in candidates]
        p_out += [int(k in p) for k in candidates]
    return g_out, p_out


def efr_dialogue_report(
    gold: Mapping[str, Iterable[TriggerAnnotation]],
    predicted: Mapping[str, Iterable[TriggerAnnotation]],
    window: int = 5,
) -> MetricsReport:
    g, p = trigger_decisions(gold, predicted, window)
    return binary_report(g, p)


def write_report(report: MetricsReport, out_dir, stem: str) -> list:
    out_dir = Path(out_dir)
    paths = [out_dir / f"{stem}.json", out_dir / f"{stem}.txt", out_dir / f"{stem}_confusion.csv"]
    paths[0].write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths[1].write_text(report.to_text(), encoding="utf-8")
    paths[2].write_text(report.confusion_csv(), encoding="utf-8")
    return paths
