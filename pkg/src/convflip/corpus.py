"""Corpus ingestion (MELD-style CSV or JSONL) and dataset statistics."""

from __future__ import annotations

import csv
import json
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dialogue import (
    EMOTION_NAMES,
    NUM_EMOTIONS,
    Dialogue,
    Emotion,
    TriggerAnnotation,
    Utterance,
    detect_flips,
    validate_annotation,
)

SPLITS = ("train", "dev", "test")
CSV_COLUMNS = ("Dialogue_ID", "Utterance_ID", "Speaker", "Utterance", "Emotion")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Corpus:
    split: str
    dialogues: tuple[Dialogue, ...]
    annotations: dict[str, tuple[TriggerAnnotation, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}, expected one of {SPLITS}")
        object.__setattr__(self, "dialogues", tuple(self.dialogues))
        anns = {k: tuple(v) for k, v in self.annotations.items()}
        object.__setattr__(self, "annotations", anns)
        by_id = self.by_id
        if len(by_id) != len(self.dialogues):
            raise CorpusError("duplicate dialogue ids in corpus")
        for did, items in anns.items():
            if did not in by_id:
                raise CorpusError(f"annotation references unknown dialogue {did!r}")
            targets = set()
            for ann in items:
                problems = validate_annotation(by_id[did], ann)
                if problems:
                    raise CorpusError(
                        f"dialogue {did!r}, target {ann.target_index}: " + "; ".join(problems)
                    )
                if ann.target_index in targets:
                    raise CorpusError(f"dialogue {did!r}: duplicate annotation for target {ann.target_index}")
                targets.add(ann.target_index)

    @property
    def by_id(self) -> dict[str, Dialogue]:
        return {d.id: d for d in self.dialogues}

    def annotations_for(self, dialogue_id: str) -> tuple[TriggerAnnotation, ...]:
        return self.annotations.get(dialogue_id, ())

    def __len__(self) -> int:
        return len(self.dialogues)


# ---------------------------------------------------------------- parsing


def _read_utterance_jsonl(path: Path) -> "OrderedDict[str, list]":
    groups: OrderedDict[str, list] = OrderedDict()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                did = str(rec["dialogue_id"])
                idx = int(rec["utterance_index"])
                speaker = str(rec["speaker"])
                text = str(rec["text"])
                emotion = Emotion.parse(rec["emotion"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed utterance record ({exc})") from None
            groups.setdefault(did, []).append((idx, speaker, text, emotion, lineno))
    for did, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        indices = [r[0] for r in rows]
        if indices != list(range(1, len(rows) + 1)):
            raise CorpusError(
                f"{path}:{rows[0][4]}: dialogue {did!r} utterance indices must be 1..n, got {indices}"
            )
    return groups


def _read_utterance_csv(path: Path) -> "OrderedDict[str, list]":
    groups: OrderedDict[str, list] = OrderedDict()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise CorpusError(f"{path}:1: missing CSV columns {missing}")
        for row in reader:
            lineno = reader.line_num
            try:
                did = str(row["Dialogue_ID"]).strip()
                uid = int(row["Utterance_ID"])
                speaker = str(row["Speaker"]).strip()
                text = row["Utterance"]
                emotion = Emotion.parse(row["Emotion"])
                if not did or not speaker or text is None:
                    raise ValueError("empty field")
            except (TypeError, ValueError, AttributeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed row ({exc})") from None
            groups.setdefault(did, []).append((uid, speaker, text, emotion, lineno))
    for did, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        ids = [r[0] for r in rows]
        if len(set(ids)) != len(ids):
            raise CorpusError(f"{path}:{rows[0][4]}: dialogue {did!r} repeats an Utterance_ID")
    return groups


def read_dialogues(path) -> list[Dialogue]:
    """Read a dialogue file; ``.csv`` uses the MELD column layout, anything else JSONL.

    CSV utterance ids (0-based in MELD, possibly with gaps) are renumbered 1..n in id order.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"{path}: no such file")
    if path.suffix.lower() == ".csv":
        groups = _read_utterance_csv(path)
    else:
        groups = _read_utterance_jsonl(path)
    dialogues = []
    for did, rows in groups.items():
        utts = tuple(
            Utterance(i, speaker, text, emo) for i, (_, speaker, text, emo, _) in enumerate(rows, start=1)
        )
        dialogues.append(Dialogue(did, utts))
    return dialogues


def read_annotations(path) -> "OrderedDict[str, list[TriggerAnnotation]]":
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"{path}: no such file")
    out: OrderedDict[str, list[TriggerAnnotation]] = OrderedDict()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                did = str(rec["dialogue_id"])
                target = int(rec["target_index"])
                triggers = [int(k) for k in rec["trigger_indices"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed annotation record ({exc})") from None
            out.setdefault(did, []).append(TriggerAnnotation(target, frozenset(triggers)))
    return out


def parse_corpus(dialogue_file, annotation_file=None, split: str = "train") -> Corpus:
    dialogues = read_dialogues(dialogue_file)
    if not dialogues:
        raise CorpusError(f"{dialogue_file}: empty corpus")
    anns = read_annotations(annotation_file) if annotation_file is not None else {}
    for did in anns:
        anns[did].sort(key=lambda a: a.target_index)
    return Corpus(split, tuple(dialogues), dict(anns))


def annotation_records(annotations: dict[str, Iterable[TriggerAnnotation]]) -> list[dict]:
    return [
        {"dialogue_id": did, "target_index": a.target_index, "trigger_indices": sorted(a.trigger_indices)}
        for did, items in annotations.items()
        for a in items
    ]


def write_annotations(annotations: dict[str, Iterable[TriggerAnnotation]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in annotation_records(annotations):
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_corpus(corpus: Corpus, dialogue_path, annotation_path=None) -> None:
    """Serialize to the canonical JSONL pair."""
    with open(dialogue_path, "w", encoding="utf-8") as fh:
        for d in corpus.dialogues:
            for u in d.utterances:
                rec = {
                    "dialogue_id": d.id,
                    "utterance_index": u.index,
                    "speaker": str(u.speaker),
                    "text": u.text,
                    "emotion": u.emotion.label,
                }
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    if annotation_path is not None:
        write_annotations(corpus.annotations, annotation_path)


def filter_flip_dialogues(corpus: Corpus) -> Corpus:
    kept = tuple(d for d in corpus.dialogues if detect_flips(d))
    ids = {d.id for d in kept}
    anns = {k: v for k, v in corpus.annotations.items() if k in ids}
    return Corpus(corpus.split, kept, anns)


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class DirectionalityMatrix:
    counts: np.ndarray  # rows = source emotion, cols = target emotion

    def __getitem__(self, key) -> int:
        src, tgt = key
        return int(self.counts[Emotion.parse(src), Emotion.parse(tgt)])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_json(self) -> dict:
        return {"labels": list(EMOTION_NAMES), "rows": "source", "columns": "target", "counts": self.counts.tolist()}


@dataclass(frozen=True)
class DistanceHistogram:
    counts: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def mass_within(self, max_distance: int) -> float:
        if not self.counts:
            return 0.0
        return sum(c for d, c in self.counts.items() if d <= max_distance) / self.total

    def to_json(self) -> list[list[int]]:
        return [[d, c] for d, c in sorted(self.counts.items())]


@dataclass(frozen=True)
class SplitSummary:
    split: str
    emotion_counts: dict[str, int]
    total_utterances: int
    dialogues: int
    flip_dialogues: int
    flip_utterances: int
    triggers: int

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "emotion_counts": dict(self.emotion_counts),
            "total_utterances": self.total_utterances,
            "dialogues": self.dialogues,
            "flip_dialogues": self.flip_dialogues,
            "flip_utterances": self.flip_utterances,
            "triggers": self.triggers,
        }


def directionality_matrix(corpus: Corpus) -> DirectionalityMatrix:
    counts = np.zeros((NUM_EMOTIONS, NUM_EMOTIONS), dtype=np.int64)
    for d in corpus.dialogues:
        for f in detect_flips(d):
            counts[f.source_emotion, f.target_emotion] += 1
    return DirectionalityMatrix(counts)


def trigger_distance_histogram(corpus: Corpus) -> DistanceHistogram:
    counts: Counter = Counter()
    for items in corpus.annotations.values():
        for ann in items:
            for k in ann.trigger_indices:
                counts[ann.target_index - k] += 1
    return DistanceHistogram(dict(sorted(counts.items())))


def split_summary(corpus: Corpus) -> SplitSummary:
    per = Counter()
    flip_dialogues = flip_utts = 0
    for d in corpus.dialogues:
        per.update(u.emotion for u in d.utterances)
        n_flips = len(detect_flips(d))
        flip_utts += n_flips
        flip_dialogues += n_flips > 0
    triggers = sum(len(a.trigger_indices) for items in corpus.annotations.values() for a in items)
    return SplitSummary(
        split=corpus.split,
        emotion_counts={e.label: per[e] for e in Emotion},
        total_utterances=sum(per.values()),
        dialogues=len(corpus.dialogues),
        flip_dialogues=flip_dialogues,
        flip_utterances=flip_utts,
        triggers=triggers,
    )


def stats_report(corpus: Corpus) -> dict:
    return {
        "summary": split_summary(corpus).to_json(),
        "directionality": directionality_matrix(corpus).to_json(),
        "trigger_distance": trigger_distance_histogram(corpus).to_json(),
    }


def write_stats_csv(corpus: Corpus, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    summary = split_summary(corpus)
    p = out_dir / f"summary_{corpus.split}.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", *EMOTION_NAMES, "total"])
        w.writerow([summary.split, *(summary.emotion_counts[e] for e in EMOTION_NAMES), summary.total_utterances])
    paths.append(p)
    p = out_dir / f"directionality_{corpus.split}.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source\\target", *EMOTION_NAMES])
        for name, row in zip(EMOTION_NAMES, directionality_matrix(corpus).counts.tolist()):
            w.writerow([name, *row])
    paths.append(p)
    p = out_dir / f"trigger_distance_{corpus.split}.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["distance", "count"])
        w.writerows(trigger_distance_histogram(corpus).to_json())
    paths.append(p)
    return paths


# ---------------------------------------------------------------- emotion predictions


def read_emotion_labels(path) -> "OrderedDict[str, dict[int, Emotion]]":
    """Per-utterance emotion records ``{dialogue_id, utterance_index, emotion}`` keyed by dialogue."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"{path}: no such file")
    out: OrderedDict[str, dict[int, Emotion]] = OrderedDict()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                did, idx = str(rec["dialogue_id"]), int(rec["utterance_index"])
                emotion = Emotion.parse(rec["emotion"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed emotion record ({exc})") from None
            if idx in out.setdefault(did, {}):
                raise CorpusError(f"{path}:{lineno}: duplicate key ({did!r}, {idx})")
            out[did][idx] = emotion
    return out


def write_emotion_labels(labels: dict[str, Iterable[Emotion]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for did, items in labels.items():
            for idx, e in enumerate(items, start=1):
                fh.write(json.dumps({"dialogue_id": did, "utterance_index": idx, "emotion": Emotion(e).label}) + "\n")


def align_emotion_labels(corpus: Corpus, labels: dict[str, dict[int, Emotion]]) -> dict[str, list[int]]:
    """Keyed join against the corpus; any missing or extra (dialogue, utterance) key is an error."""
    want = {(d.id, u.index) for d in corpus.dialogues for u in d.utterances}
    have = {(did, idx) for did, items in labels.items() for idx in items}
    if want != have:
        missing, extra = sorted(want - have)[:3], sorted(have - want)[:3]
        raise CorpusError(f"emotion label keys do not match the corpus (missing {missing}, unexpected {extra})")
    return {d.id: [int(labels[d.id][u.index]) for u in d.utterances] for d in corpus.dialogues}
