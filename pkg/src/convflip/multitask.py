"""Joint emotion + trigger model: one ERC-MMN trunk, two parallel heads, summed losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .dialogue import Dialogue, TriggerAnnotation, detect_flips, flip_targets, speaker_roles
from .embeddings import EmbeddingStore
from .erc_mmn import ErcHyperParams, ErcMMN, dialogue_tensors, mlp
from .instances import DEFAULT_WINDOW, context_window
from .training import TrainingError, adam, as_dict, batches, check_finite, seed_everything


@dataclass(frozen=True)
class MultiHyperParams:
    erc: ErcHyperParams = field(default_factory=lambda: ErcHyperParams(learning_rate=1e-4))
    window: int = DEFAULT_WINDOW
    erc_weight: float = 1.0
    efr_weight: float = 1.0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")

    @property
    def efr_head_dims(self) -> tuple[int, ...]:
        # 1536 -> 1536 -> 1536 -> 768 -> 384 -> 2 at the default width
        h = self.erc.hidden_width
        return (2 * h, 2 * h, 2 * h, h, h // 2, 2)


class MultiMMN(nn.Module):
    """``erc`` holds the shared trunk and the emotion head; ``efr_head`` is the trigger head."""

    def __init__(self, hp: MultiHyperParams):
        super().__init__()
        self.hp = hp
        self.erc = ErcMMN(hp.erc)
        # built after the trunk so the trunk initialization matches a standalone ErcMMN
        self.efr_head = mlp(hp.efr_head_dims, hp.erc.dropout)
        for m in self.efr_head:
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)
        self.efr_head.to(self.erc.dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.erc.dtype

    def efr_logits(self, z: torch.Tensor, targets: Sequence[int]) -> list[torch.Tensor]:
        """For each 1-based target ``t``: logits ``(k, 2)`` over its window.

        The candidate row ``z_i`` and the target row ``z_t`` are summed, keeping the head
        input at ``2h``.
        """
        out = []
        for t in targets:
            rows = [i - 1 for i in context_window(t, self.hp.window)]
            pair = z[rows] + z[t - 1][None]
            out.append(self.efr_head(pair))
        return out

    def forward(self, x: torch.Tensor, roles: Sequence[int], gold: Sequence[int] | None = None):
        z = self.erc.encode(x, roles, gold)
        erc = self.erc.classifier(z)
        efr = self.efr_logits(z, range(1, x.shape[0] + 1))
        return erc, efr


def forward_multi(model: MultiMMN, vectors, speakers, hp: MultiHyperParams | None = None):
    """``(erc probabilities n x 7, [trigger probabilities k x 2 per target])`` in eval mode."""
    hp = hp or model.hp
    x = torch.as_tensor(np.asarray(vectors), dtype=model.dtype)
    model.eval()
    with torch.no_grad():
        erc, efr = model(x, speaker_roles(list(speakers), hp.erc.max_roles))
    return torch.softmax(erc, dim=-1), [torch.softmax(e, dim=-1) for e in efr]


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class MultiExample:
    x: torch.Tensor
    roles: list
    emotions: torch.Tensor
    targets: tuple[int, ...]  # 1-based flip targets inside the (possibly truncated) dialogue
    trigger_labels: tuple[torch.Tensor, ...]  # aligned with targets, window-length 0/1 vectors


def multi_example(dialogue: Dialogue, anns: Sequence[TriggerAnnotation], store: EmbeddingStore, hp: MultiHyperParams) -> MultiExample:
    x, roles, emotions = dialogue_tensors(dialogue, store, hp.erc, truncate=True)
    offset = len(dialogue) - x.shape[0]
    gold = {a.target_index: a.trigger_indices for a in anns}
    targets, labels = [], []
    for t in sorted(flip_targets(dialogue)):
        if t <= offset:
            continue
        local = t - offset
        window = context_window(local, hp.window)
        trig = gold.get(t, frozenset())
        labels.append(torch.as_tensor([int(i + offset in trig) for i in window], dtype=torch.long))
        targets.append(local)
    return MultiExample(x, roles, emotions, tuple(targets), tuple(labels))


def multi_batch_loss(model: MultiMMN, batch: Sequence[MultiExample]):
    """Weighted sum of the emotion loss and the flip-masked trigger loss.

    The emotion term is the mean utterance cross-entropy (as in ``erc_batch_loss``). The
    trigger term sums cross-entropy over the window positions of every flip target and is
    divided by the number of utterances (instances) in the batch.
    """
    hp = model.hp
    erc_sum = efr_sum = None
    count = 0
    erc_gold, erc_pred, efr_gold, efr_pred = [], [], [], []
    for ex in batch:
        z = model.erc.encode(ex.x, ex.roles, ex.emotions.tolist())
        logits = model.erc.classifier(z)
        ce = F.cross_entropy(logits, ex.emotions, reduction="sum")
        erc_sum = ce if erc_sum is None else erc_sum + ce
        count += len(ex.emotions)
        erc_gold += ex.emotions.tolist()
        erc_pred += torch.argmax(logits.detach(), dim=-1).tolist()
        if not hp.efr_weight or not ex.targets:
            continue
        for t_logits, y in zip(model.efr_logits(z, ex.targets), ex.trigger_labels):
            ce = F.cross_entropy(t_logits, y, reduction="sum")
            efr_sum = ce if efr_sum is None else efr_sum + ce
            efr_gold += y.tolist()
            efr_pred += torch.argmax(t_logits.detach(), dim=-1).tolist()
    total = hp.erc_weight * (erc_sum / count)
    if efr_sum is not None:
        total = total + hp.efr_weight * (efr_sum / count)
    return total, (erc_gold, erc_pred), (efr_gold, efr_pred)


def train_multi(corpus, store: EmbeddingStore, hp: MultiHyperParams, model: MultiMMN | None = None, callback=None):
    if not corpus.dialogues:
        raise TrainingError("empty corpus")
    erc_hp = hp.erc
    rng = seed_everything(erc_hp.seed)
    model = model if model is not None else MultiMMN(hp)
    torch.manual_seed(erc_hp.seed)  # dropout stream independent of how many weights were initialized
    data = [multi_example(d, corpus.annotations_for(d.id), store, hp) for d in corpus.dialogues]
    opt = adam(model.parameters(), erc_hp.learning_rate)
    log = []
    for epoch in range(1, erc_hp.max_epochs + 1):
        model.train()
        losses, eg, ep, tg, tp = [], [], [], [], []
        for step, batch in enumerate(batches(data, erc_hp.batch_size, rng)):
            opt.zero_grad()
            loss, (g1, p1), (g2, p2) = multi_batch_loss(model, batch)
            check_finite(loss, epoch, step)
            loss.backward()
            opt.step()
            losses.append(loss.item())
            eg += g1
            ep += p1
            tg += g2
            tp += p2
        log.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "train_f1": metrics.weighted_f1(eg, ep),
                "train_trigger_f1": metrics.binary_report(tg, tp).trigger_f1 if tg else 0.0,
            }
        )
        if callback is not None and callback(model, log[-1]):
            break
    model.eval()
    return model, log


def predict_multi(model: MultiMMN, dialogue: Dialogue, store: EmbeddingStore):
    """Emotion argmax per utterance and trigger annotations for every detected flip."""
    x, roles, _ = dialogue_tensors(dialogue, store, model.hp.erc)
    targets = [f.target_index for f in detect_flips(dialogue)]
    model.eval()
    with torch.no_grad():
        z = model.erc.encode(x, roles)
        emotions = torch.argmax(model.erc.classifier(z), dim=-1).tolist()
        anns = []
        for t, logits in zip(targets, model.efr_logits(z, targets)):
            probs = torch.softmax(logits, dim=-1)
            window = context_window(t, model.hp.window)
            anns.append(TriggerAnnotation(t, frozenset(i for i, p in zip(window, probs) if p[1] > p[0])))
    return emotions, anns


def save_multi(model: MultiMMN, path) -> None:
    hp = as_dict(model.hp)
    save_checkpoint(path, "multi-mmn", hp, model.state_dict())


def load_multi(path) -> MultiMMN:
    kind, hparams, state = load_checkpoint(path)
    if kind != "multi-mmn":
        raise ValueError(f"{path}: expected a multi-mmn checkpoint, found {kind}")
    hparams = dict(hparams)
    hparams["erc"] = ErcHyperParams(**hparams["erc"])
    model = MultiMMN(MultiHyperParams(**hparams))
    model.load_state_dict(state)
    model.eval()
    return model
