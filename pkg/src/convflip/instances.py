"""Windowed trigger-classification instances, one per utterance."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .dialogue import Dialogue, TriggerAnnotation, flip_targets

DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class EfrInstance:
    dialogue_id: str
    target_index: int
    context_indices: tuple[int, ...]
    labels: tuple[int, ...]
    has_flip: bool

    def __len__(self) -> int:
        return len(self.context_indices)

    def to_json(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "target_index": self.target_index,
            "context_indices": list(self.context_indices),
            "labels": list(self.labels),
            "has_flip": self.has_flip,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "EfrInstance":
        return cls(
            str(rec["dialogue_id"]),
            int(rec["target_index"]),
            tuple(int(i) for i in rec["context_indices"]),
            tuple(int(v) for v in rec["labels"]),
            bool(rec["has_flip"]),
        )


def context_window(target_index: int, window: int) -> tuple[int, ...]:
    return tuple(range(max(1, target_index - window + 1), target_index + 1))


def compile_instances(
    dialogue: Dialogue, anns: Iterable[TriggerAnnotation], window: int = DEFAULT_WINDOW
) -> list[EfrInstance]:
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    n = len(dialogue)
    by_target = {}
    for a in anns:
        if not 1 <= a.target_index <= n:
            raise ValueError(f"dialogue {dialogue.id!r}: annotation for nonexistent target {a.target_index}")
        by_target[a.target_index] = a.trigger_indices
    flips = flip_targets(dialogue)
    out = []
    for t in range(1, n + 1):
        ctx = context_window(t, window)
        gold = by_target.get(t, frozenset())
        labels = tuple(int(i in gold) for i in ctx)
        out.append(EfrInstance(dialogue.id, t, ctx, labels, t in flips))
    return out


def compile_corpus(corpus, window: int = DEFAULT_WINDOW) -> list[EfrInstance]:
    out = []
    for d in corpus.dialogues:
        out.extend(compile_instances(d, corpus.annotations_for(d.id), window))
    return out


def window_loss_report(instances: Sequence[EfrInstance], anns: dict[str, Iterable[TriggerAnnotation]]) -> int:
    """Number of gold (target, trigger) pairs that fall outside their instance's window."""
    windows = {(i.dialogue_id, i.target_index): set(i.context_indices) for i in instances}
    dropped = 0
    for did, items in anns.items():
        for a in items:
            ctx = windows.get((did, a.target_index))
            if ctx is None:
                continue
            dropped += sum(1 for k in a.trigger_indices if k not in ctx)
    return dropped


def write_instances(instances: Iterable[EfrInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json()) + "\n")


def read_instances(path) -> list[EfrInstance]:
    with open(path, encoding="utf-8") as fh:
        return [EfrInstance.from_json(json.loads(line)) for line in fh if line.strip()]
