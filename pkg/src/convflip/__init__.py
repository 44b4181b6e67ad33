"""Emotion recognition and emotion-flip trigger reasoning for multi-party dialogue."""

from .dialogue import (
    EMOTION_NAMES,
    Dialogue,
    Emotion,
    FlipEvent,
    SpeakerSequence,
    TriggerAnnotation,
    Utterance,
    detect_flips,
    speaker_view,
    validate_annotation,
)

__version__ = "0.1.0"

__all__ = [
    "EMOTION_NAMES",
    "Dialogue",
    "Emotion",
    "FlipEvent",
    "SpeakerSequence",
    "TriggerAnnotation",
    "Utterance",
    "detect_flips",
    "speaker_view",
    "validate_annotation",
]
