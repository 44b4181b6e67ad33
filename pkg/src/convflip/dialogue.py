"""Dialogues, speakers, emotions and emotion-flip detection.

Utterance positions are 1-based everywhere in this package.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence


class Emotion(enum.IntEnum):
    DISGUST = 0
    JOY = 1
    SURPRISE = 2
    ANGER = 3
    FEAR = 4
    NEUTRAL = 5
    SADNESS = 6

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "str | int | Emotion") -> "Emotion":
        """Accept a canonical name, an alias ("happy", "sad", ...) or an index."""
        if isinstance(value, Emotion):
            return value
        if isinstance(value, int):
            return cls(value)
        key = str(value).strip().lower()
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown emotion {value!r}") from None


NUM_EMOTIONS = len(Emotion)
EMOTION_NAMES = tuple(e.label for e in Emotion)

_ALIASES = {e.label: e for e in Emotion}
_ALIASES.update(
    {
        "happy": Emotion.JOY,
        "happiness": Emotion.JOY,
        "sad": Emotion.SADNESS,
        "angry": Emotion.ANGER,
        "surprised": Emotion.SURPRISE,
        "disgusted": Emotion.DISGUST,
        "afraid": Emotion.FEAR,
    }
)


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: Hashable
    text: str
    emotion: Emotion

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"utterance index must be >= 1, got {self.index}")
        if self.speaker is None or self.speaker == "":
            raise ValueError(f"utterance {self.index} has an empty speaker")
        object.__setattr__(self, "emotion", Emotion.parse(self.emotion))


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        utts = tuple(self.utterances)
        object.__setattr__(self, "utterances", utts)
        if not utts:
            raise ValueError(f"dialogue {self.id!r} is empty")
        for expected, u in enumerate(utts, start=1):
            if u.index != expected:
                raise ValueError(
                    f"dialogue {self.id!r}: utterance indices must run 1..n in order, "
                    f"found {u.index} at position {expected}"
                )

    @classmethod
    def build(cls, id: str, rows: Iterable[tuple]) -> "Dialogue":
        """Build from ``(speaker, text, emotion)`` rows, numbering them 1..n."""
        return cls(id, tuple(Utterance(i, s, t, e) for i, (s, t, e) in enumerate(rows, start=1)))

    def __len__(self) -> int:
        return len(self.utterances)

    def __getitem__(self, index: int) -> Utterance:
        # 1-based
        if not 1 <= index <= len(self.utterances):
            raise IndexError(f"utterance index {index} out of range 1..{len(self.utterances)}")
        return self.utterances[index - 1]

    @property
    def speakers(self) -> tuple:
        """Speakers in order of first appearance."""
        seen = {}
        for u in self.utterances:
            seen.setdefault(u.speaker, None)
        return tuple(seen)

    @property
    def emotions(self) -> tuple[Emotion, ...]:
        return tuple(u.emotion for u in self.utterances)


@dataclass(frozen=True)
class FlipEvent:
    speaker: Hashable
    target_index: int
    previous_index: int
    source_emotion: Emotion
    target_emotion: Emotion


@dataclass(frozen=True)
class TriggerAnnotation:
    target_index: int
    trigger_indices: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "trigger_indices", frozenset(int(k) for k in self.trigger_indices))


@dataclass(frozen=True)
class SpeakerSequence:
    speaker: Hashable
    utterances: tuple[Utterance, ...]

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(u.index for u in self.utterances)


def detect_flips(dialogue: Dialogue) -> list[FlipEvent]:
    """One event per utterance whose emotion differs from the same speaker's previous one."""
    last: dict = {}
    flips = []
    for u in dialogue.utterances:
        prev = last.get(u.speaker)
        if prev is not None and prev.emotion != u.emotion:
            flips.append(FlipEvent(u.speaker, u.index, prev.index, prev.emotion, u.emotion))
        last[u.speaker] = u
    return flips


def flip_targets(dialogue: Dialogue) -> frozenset[int]:
    return frozenset(f.target_index for f in detect_flips(dialogue))


def speaker_view(dialogue: Dialogue, speaker) -> SpeakerSequence:
    return SpeakerSequence(speaker, tuple(u for u in dialogue.utterances if u.speaker == speaker))


def speaker_roles(speakers: Sequence[Hashable], max_roles: int | None = None) -> list[int]:
    """Map each speaker to its 0-based order of first appearance, capped at ``max_roles - 1``."""
    order: dict = {}
    roles = []
    for s in speakers:
        role = order.setdefault(s, len(order))
        if max_roles is not None:
            role = min(role, max_roles - 1)
        roles.append(role)
    return roles


def validate_annotation(dialogue: Dialogue, ann: TriggerAnnotation) -> list[str]:
    """Return the list of broken rules; an empty list means the annotation is valid."""
    n = len(dialogue)
    problems = []
    target = ann.target_index
    if not 1 <= target <= n:
        problems.append(f"out-of-range target {target} (dialogue has {n} utterances)")
    elif target not in flip_targets(dialogue):
        problems.append(f"target not a flip: utterance {target}")
    for k in sorted(ann.trigger_indices):
        if k < 1 or k > n:
            problems.append(f"out-of-range trigger {k}")
        elif k > target:
            problems.append(f"future trigger {k} after target {target}")
    return problems
