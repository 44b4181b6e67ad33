"""Transformer trigger classifier over windowed instances.

Each context utterance's encoder output ``h_i`` is paired with the target's ``h_t``
(``h_i ⊕ h_t``) and classified trigger / non-trigger by a single linear layer.
Emotion labels can be injected at the input (early fusion) or next to the
classifier input (late fusion).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .dialogue import NUM_EMOTIONS, Dialogue, FlipEvent, TriggerAnnotation
from .embeddings import EMBED_DIM
from .instances import DEFAULT_WINDOW, EfrInstance, compile_instances
from .training import TrainingError, adam, as_dict, check_finite, init_weights, seed_everything, torch_dtype

CONDITIONING_MODES = ("none", "early", "late")
LABEL_SOURCES = ("gold", "predicted", "absent")
BASE_LR = 5e-8
CASCADE_LR = 5e-7


@dataclass(frozen=True)
class EfrHyperParams:
    model_width: int = EMBED_DIM
    encoder_layers: int = 6
    attention_heads: int = 8
    feedforward_width: int = 2048
    dropout: float = 0.2
    learning_rate: float | None = None
    batch_size: int = 128
    max_epochs: int = 1000
    window: int = DEFAULT_WINDOW
    conditioning: str = "none"
    label_source: str = "absent"
    seed: int = 0
    mask_non_flips: bool = True
    high_precision: bool = False

    def __post_init__(self):
        if self.model_width % self.attention_heads:
            raise ValueError(f"model_width {self.model_width} not divisible by {self.attention_heads} heads")
        if self.window < 1 or self.encoder_layers < 1:
            raise ValueError("window and encoder_layers must be >= 1")
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"conditioning must be one of {CONDITIONING_MODES}")
        if self.label_source not in LABEL_SOURCES:
            raise ValueError(f"label_source must be one of {LABEL_SOURCES}")
        if self.conditioning != "none" and self.label_source == "absent":
            raise ValueError(f"conditioning={self.conditioning!r} needs emotion labels (label_source gold or predicted)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        true_labels = self.conditioning != "none" and self.label_source == "gold"
        return CASCADE_LR if true_labels else BASE_LR

    @property
    def uses_labels(self) -> bool:
        return self.conditioning != "none"


class Conditioned(NamedTuple):
    vectors: torch.Tensor
    indicators: torch.Tensor | None
    width_delta: int


def condition_inputs(vectors: torch.Tensor, emotions: torch.Tensor | None, mode: str) -> Conditioned:
    """Attach 7-wide emotion indicators according to the conditioning mode.

    ``early`` widens every input by 7; ``late`` keeps inputs and returns the indicators
    for the classifier, which grows by 14 (context and target indicator).
    """
    if mode == "none":
        return Conditioned(vectors, None, 0)
    if mode not in CONDITIONING_MODES:
        raise ValueError(f"unknown conditioning mode {mode!r}")
    if emotions is None:
        raise ValueError(f"conditioning={mode!r} requires emotion labels")
    onehot = F.one_hot(torch.as_tensor(emotions, dtype=torch.long), NUM_EMOTIONS).to(vectors.dtype)
    if mode == "early":
        return Conditioned(torch.cat([vectors, onehot], dim=-1), None, 0)
    return Conditioned(vectors, onehot, 2 * NUM_EMOTIONS)


def sinusoid_table(length: int, width: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    rate = torch.exp(torch.arange(0, width, 2, dtype=torch.float64) * (-math.log(10000.0) / width))
    table = torch.zeros(length, width, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * rate)
    table[:, 1::2] = torch.cos(pos * rate)[:, : width // 2]
    return table


class EncoderLayer(nn.Module):
    """Pre-norm self-attention + feedforward block."""

    def __init__(self, width: int, heads: int, ff_width: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(width)
        self.query = nn.Linear(width, width)
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)
        self.out = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.ff1 = nn.Linear(width, ff_width)
        self.ff2 = nn.Linear(ff_width, width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, k, d = x.shape
        dh = d // self.heads
        y = self.norm1(x)

        def split(t):
            return t.view(b, k, self.heads, dh).transpose(1, 2)

        q, key, v = split(self.query(y)), split(self.key(y)), split(self.value(y))
        att = torch.softmax(q @ key.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        ctx = (self.drop(att) @ v).transpose(1, 2).reshape(b, k, d)
        x = x + self.drop(self.out(ctx))
        x = x + self.drop(self.ff2(self.drop(torch.relu(self.ff1(self.norm2(x))))))
        return x


class EfrTX(nn.Module):
    def __init__(self, hp: EfrHyperParams):
        super().__init__()
        self.hp = hp
        d = hp.model_width
        self.input_proj = nn.Linear(d + NUM_EMOTIONS, d) if hp.conditioning == "early" else None
        self.layers = nn.ModuleList(
            EncoderLayer(d, hp.attention_heads, hp.feedforward_width, hp.dropout) for _ in range(hp.encoder_layers)
        )
        self.final_norm = nn.LayerNorm(d)
        self.drop = nn.Dropout(hp.dropout)
        extra = 2 * NUM_EMOTIONS if hp.conditioning == "late" else 0
        self.classifier = nn.Linear(2 * d + extra, 2)  # 1536 -> 2 without late fusion
        init_weights(self)
        dtype = torch_dtype(hp.high_precision)
        self.register_buffer("positions", sinusoid_table(hp.window, d).to(dtype), persistent=False)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.classifier.weight.dtype

    @property
    def classifier_width(self) -> int:
        return self.classifier.in_features

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        k = x.shape[1]
        # unit-norm utterance vectors would otherwise be drowned by the O(1) position entries
        h = self.drop(x * math.sqrt(self.hp.model_width) + self.positions[:k])
        for layer in self.layers:
            h = layer(h)
        return self.final_norm(h)

    def forward(self, x: torch.Tensor, emotions: torch.Tensor | None = None) -> torch.Tensor:
        """Trigger logits ``(B, k, 2)`` for instance vectors ``(B, k, d)`` (or ``(k, d)``)."""
        squeeze = x.dim() == 2
        if squeeze:
            x = x[None]
            emotions = None if emotions is None else torch.as_tensor(emotions)[None]
        if x.shape[-1] != self.hp.model_width:
            raise ValueError(f"expected vector width {self.hp.model_width}, got {x.shape[-1]}")
        k = x.shape[1]
        if not 1 <= k <= self.hp.window:
            raise ValueError(f"instance length {k} outside 1..{self.hp.window}")
        cond = condition_inputs(x, emotions, self.hp.conditioning)
        inp = cond.vectors if self.input_proj is None else self.input_proj(cond.vectors)
        h = self.encode(inp)
        target = h[:, -1:, :].expand_as(h)
        parts = [h, target]
        if cond.indicators is not None:
            parts += [cond.indicators, cond.indicators[:, -1:, :].expand_as(cond.indicators)]
        logits = self.classifier(torch.cat(parts, dim=-1))
        return logits[0] if squeeze else logits


def forward_instance(model: EfrTX, vectors, emotions=None) -> torch.Tensor:
    """Per-position probabilities ``(k, 2)``: column 1 is the trigger class."""
    model.eval()
    x = torch.as_tensor(np.asarray(vectors), dtype=model.dtype)
    with torch.no_grad():
        return torch.softmax(model(x, emotions), dim=-1)


# ------------------------------------------------------------------ data


class Batch(NamedTuple):
    x: torch.Tensor  # (B, k, d)
    emotions: torch.Tensor | None  # (B, k)
    labels: torch.Tensor  # (B, k)
    mask: torch.Tensor  # (B,) 1.0 for flip targets


def _instance_arrays(inst: EfrInstance, vectors: Mapping[str, np.ndarray], labels: Mapping | None):
    rows = [i - 1 for i in inst.context_indices]
    x = np.asarray(vectors[inst.dialogue_id])[rows]
    emo = None if labels is None else [int(labels[inst.dialogue_id][r]) for r in rows]
    return x, emo


def make_batches(
    instances: Sequence[EfrInstance],
    vectors: Mapping[str, np.ndarray],
    hp: EfrHyperParams,
    labels: Mapping[str, Sequence[int]] | None = None,
) -> list[Batch]:
    """Group equal-length instances (no padding); groups ordered by length, then input order."""
    if hp.uses_labels and labels is None:
        raise ValueError(f"conditioning={hp.conditioning!r} requires emotion labels")
    dtype = torch_dtype(hp.high_precision)
    groups: OrderedDict[int, list[EfrInstance]] = OrderedDict()
    for inst in instances:
        if len(inst) > hp.window:
            raise ValueError(f"instance ({inst.dialogue_id}, {inst.target_index}) longer than window {hp.window}")
        groups.setdefault(len(inst), []).append(inst)
    out = []
    for k in sorted(groups):
        items = groups[k]
        for s in range(0, len(items), hp.batch_size):
            chunk = items[s : s + hp.batch_size]
            xs, emos = zip(*(_instance_arrays(i, vectors, labels if hp.uses_labels else None) for i in chunk))
            out.append(
                Batch(
                    torch.as_tensor(np.stack(xs), dtype=dtype),
                    torch.as_tensor(emos, dtype=torch.long) if hp.uses_labels else None,
                    torch.as_tensor([i.labels for i in chunk], dtype=torch.long),
                    torch.as_tensor([float(i.has_flip or not hp.mask_non_flips) for i in chunk], dtype=dtype),
                )
            )
    return out


def efr_loss(logits: torch.Tensor, batch: Batch) -> torch.Tensor:
    """Cross-entropy summed over context positions, zeroed for non-flip targets, averaged over the batch."""
    ce = F.cross_entropy(logits.reshape(-1, 2), batch.labels.reshape(-1), reduction="none").view(batch.labels.shape)
    return (ce.sum(dim=1) * batch.mask).sum() / batch.labels.shape[0]


def train_efr(
    instances: Sequence[EfrInstance],
    vectors: Mapping[str, np.ndarray],
    hp: EfrHyperParams,
    labels: Mapping[str, Sequence[int]] | None = None,
    model: EfrTX | None = None,
    callback=None,
):
    """Adam on the flip-masked trigger loss; returns ``(model, log)``."""
    if not instances:
        raise TrainingError("empty instance set")
    rng = seed_everything(hp.seed)
    model = model if model is not None else EfrTX(hp)
    torch.manual_seed(hp.seed)  # dropout stream independent of how many weights were initialized
    data = make_batches(instances, vectors, hp, labels)
    opt = adam(model.parameters(), hp.lr)
    log = []
    for epoch in range(1, hp.max_epochs + 1):
        model.train()
        losses, gold, pred = [], [], []
        for step, idx in enumerate(rng.permutation(len(data))):
            batch = data[idx]
            opt.zero_grad()
            logits = model(batch.x, batch.emotions)
            loss = efr_loss(logits, batch)
            check_finite(loss, epoch, step)
            loss.backward()
            opt.step()
            losses.append(loss.item())
            keep = batch.mask > 0
            gold += batch.labels[keep].reshape(-1).tolist()
            pred += torch.argmax(logits.detach()[keep], dim=-1).reshape(-1).tolist()
        log.append({"epoch": epoch, "loss": float(np.mean(losses)), "train_f1": metrics.f1_from_counts(*_counts(gold, pred))})
        if callback is not None and callback(model, log[-1]):
            break
    model.eval()
    return model, log


def _counts(gold, pred) -> tuple[int, int, int]:
    tp = sum(1 for g, p in zip(gold, pred) if g and p)
    fp = sum(1 for g, p in zip(gold, pred) if p and not g)
    fn = sum(1 for g, p in zip(gold, pred) if g and not p)
    return tp, fp, fn


def decide(probs: torch.Tensor) -> list[bool]:
    # strict: ties go to non-trigger
    return [bool(p[1] > p[0]) for p in probs]


def predict_triggers(
    model: EfrTX,
    dialogue: Dialogue,
    vectors: np.ndarray,
    flips: Sequence[FlipEvent],
    emotions: Sequence[int] | None = None,
) -> list[TriggerAnnotation]:
    hp = model.hp
    if hp.uses_labels and emotions is None:
        raise ValueError(f"conditioning={hp.conditioning!r} requires emotion labels")
    by_target = {i.target_index: i for i in compile_instances(dialogue, (), hp.window)}
    out = []
    for f in flips:
        inst = by_target[f.target_index]
        rows = [i - 1 for i in inst.context_indices]
        emo = None if not hp.uses_labels else [int(emotions[r]) for r in rows]
        probs = forward_instance(model, np.asarray(vectors)[rows], emo)
        chosen = [i for i, yes in zip(inst.context_indices, decide(probs)) if yes]
        out.append(TriggerAnnotation(f.target_index, frozenset(chosen)))
    return out


def save_efr(model: EfrTX, path) -> None:
    save_checkpoint(path, "efr-tx", as_dict(model.hp), model.state_dict())


def load_efr(path) -> EfrTX:
    kind, hparams, state = load_checkpoint(path)
    if kind != "efr-tx":
        raise ValueError(f"{path}: expected an efr-tx checkpoint, found {kind}")
    model = EfrTX(EfrHyperParams(**hparams))
    model.load_state_dict(state)
    model.eval()
    return model
