"""Fixed-width utterance vectors: precomputed file lookups with a hashed fallback."""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dialogue import Dialogue, Utterance

EMBED_DIM = 768
HASH_BINS = 4096
DEFAULT_SEED = 13

_TOKEN = re.compile(r"\w+", re.UNICODE)


class EmbeddingError(ValueError):
    pass


@lru_cache(maxsize=4)
def _projection(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((HASH_BINS, EMBED_DIM))
    proj.setflags(write=False)
    return proj


def _bin(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % HASH_BINS


def hashed_vector(text: str, seed: int = DEFAULT_SEED) -> np.ndarray:
    bag = np.zeros(HASH_BINS)
    for tok in _TOKEN.findall(text.lower()):
        bag[_bin(tok)] += 1.0
    if not bag.any():
        return np.zeros(EMBED_DIM)
    vec = bag @ _projection(seed)
    return vec / np.linalg.norm(vec)


@dataclass(frozen=True)
class EmbeddingStore:
    entries: dict = field(default_factory=dict)  # (dialogue_id, utterance_index) -> vector
    seed: int = DEFAULT_SEED

    @property
    def source(self) -> str:
        return "file" if self.entries else "hashed-fallback"

    def __len__(self) -> int:
        return len(self.entries)

    def embed(self, dialogue_id: str, utterance: Utterance) -> np.ndarray:
        vec = self.entries.get((str(dialogue_id), utterance.index))
        if vec is not None:
            return vec
        return hashed_vector(utterance.text, self.seed)

    def dialogue_matrix(self, dialogue: Dialogue) -> np.ndarray:
        return np.stack([self.embed(dialogue.id, u) for u in dialogue.utterances])


def embed(store: EmbeddingStore, dialogue_id: str, utterance: Utterance) -> np.ndarray:
    return store.embed(dialogue_id, utterance)


def load_store(path, seed: int = DEFAULT_SEED) -> EmbeddingStore:
    path = Path(path)
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (str(rec["dialogue_id"]), int(rec["utterance_index"]))
                values = [float(v) for v in rec["vector"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise EmbeddingError(f"{path}:{lineno}: malformed record ({exc})") from None
            if len(values) != EMBED_DIM:
                raise EmbeddingError(f"{path}:{lineno}: vector width {len(values)}, expected {EMBED_DIM}")
            if not all(math.isfinite(v) for v in values):
                raise EmbeddingError(f"{path}:{lineno}: non-finite value in vector")
            if key in entries:
                raise EmbeddingError(f"{path}:{lineno}: duplicate key {key}")
            vec = np.asarray(values, dtype=np.float64)
            vec.setflags(write=False)
            entries[key] = vec
    return EmbeddingStore(entries, seed)


def write_store(store: EmbeddingStore, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (did, idx), vec in store.entries.items():
            rec = {"dialogue_id": did, "utterance_index": idx, "vector": [float(v) for v in vec]}
            fh.write(json.dumps(rec) + "\n")
