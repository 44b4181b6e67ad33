"""Masked memory network for emotion recognition in conversation.

Per utterance ``i`` (strictly causal, no future context):

1. attend the utterance over the global GRU states ``g_1..g_{i-1}``;
2. ``v_i = attended ⊕ u_i`` advances the speaker's GRU (giving ``h̄_i``) and the global GRU;
3. ``h̄_i`` is written into memory slot ``i``; ``hops`` rounds of
   (memory GRU over slots 1..i, masked attention with query ``h̄_i``) update the memory,
   which carries over to the next utterance;
4. the mean of the attended slots, ``ō_i``, is concatenated with ``h̄_i`` and classified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .dialogue import NUM_EMOTIONS, Dialogue, Emotion, speaker_roles
from .embeddings import EMBED_DIM, EmbeddingStore
from .training import (
    TrainingError,
    adam,
    as_dict,
    batches,
    check_finite,
    init_weights,
    seed_everything,
    torch_dtype,
)


@dataclass(frozen=True)
class ErcHyperParams:
    hidden_width: int = 768
    input_width: int = EMBED_DIM
    hops: int = 4
    max_seq_len: int = 15
    dropout: float = 0.5
    learning_rate: float = 1e-6
    batch_size: int = 8
    max_epochs: int = 100
    seed: int = 0
    max_roles: int = 8
    share_hops: bool = True
    label_memory: bool = False
    global_context: bool = True
    high_precision: bool = False

    def __post_init__(self):
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if self.hidden_width < 2 or self.input_width < 1:
            raise ValueError("hidden_width must be >= 2 and input_width >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_roles < 1 or self.max_seq_len < 1 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("max_roles, max_seq_len, batch_size must be positive; max_epochs >= 0")

    @property
    def classifier_dims(self) -> tuple[int, ...]:
        # 1536 -> 768 -> 384 -> 7 at the default width
        h = self.hidden_width
        return (2 * h, h, h // 2, NUM_EMOTIONS)


def mlp(dims: Sequence[int], dropout: float) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(dims) - 2:
            layers += [nn.ReLU(), nn.Dropout(dropout)]
    return nn.Sequential(*layers)


# ------------------------------------------------------------------ memory primitives

Projection = Callable[[torch.Tensor], torch.Tensor]


def masked_attention(
    slots: torch.Tensor,
    query: torch.Tensor,
    t: int,
    key_proj: Projection | None = None,
    query_proj: Projection | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Attention normalized over slots ``1..t`` only.

    Returns ``(beta, out)``: ``beta`` is zero beyond ``t``; ``out[j] = beta[j] * slots[j]``
    for ``j <= t`` and ``slots[j]`` unchanged otherwise.
    """
    n = slots.shape[0]
    if not 1 <= t <= n:
        raise ValueError(f"prefix length t={t} outside 1..{n}")
    keys = slots[:t] if key_proj is None else key_proj(slots[:t])
    q = query if query_proj is None else query_proj(query)
    scores = keys @ q / math.sqrt(q.shape[-1])
    beta_t = torch.softmax(scores, dim=0)
    beta = torch.cat([beta_t, beta_t.new_zeros(n - t)])
    out = torch.cat([beta_t[:, None] * slots[:t], slots[t:]])
    return beta, out


def memory_read(
    slots: torch.Tensor,
    query: torch.Tensor,
    t: int,
    hops: int,
    grus: Sequence[nn.GRU],
    key_projs: Sequence[Projection | None],
    query_projs: Sequence[Projection | None],
    indicators: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Run ``hops`` memory rounds; returns ``(o_bar, final slots, last beta)``.

    With a single GRU/projection set the hops share weights.
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    beta = None
    for hop in range(hops):
        j = 0 if len(grus) == 1 else hop
        inp = slots if indicators is None else torch.cat([slots, indicators], dim=-1)
        read, _ = grus[j](inp.unsqueeze(0))
        beta, slots = masked_attention(read[0], query, t, key_projs[j], query_projs[j])
    return slots[:t].mean(dim=0), slots, beta


# ------------------------------------------------------------------ model


class ErcMMN(nn.Module):
    def __init__(self, hp: ErcHyperParams):
        super().__init__()
        self.hp = hp
        h, d = hp.hidden_width, hp.input_width
        self.speaker_grus = nn.ModuleList(nn.GRUCell(h + d, h) for _ in range(hp.max_roles))
        self.global_gru = nn.GRUCell(h + d, h)
        self.global_key = nn.Linear(h, h, bias=False)
        self.global_query = nn.Linear(d, h, bias=False)
        n_mem = 1 if hp.share_hops else hp.hops
        slot_in = h + (NUM_EMOTIONS if hp.label_memory else 0)
        self.memory_grus = nn.ModuleList(nn.GRU(slot_in, h, batch_first=True) for _ in range(n_mem))
        self.memory_key = nn.ModuleList(nn.Linear(h, h, bias=False) for _ in range(n_mem))
        self.memory_query = nn.ModuleList(nn.Linear(h, h, bias=False) for _ in range(n_mem))
        self.classifier = mlp(hp.classifier_dims, hp.dropout)
        init_weights(self)
        self.to(torch_dtype(hp.high_precision))

    @property
    def dtype(self) -> torch.dtype:
        return self.global_key.weight.dtype

    def _check(self, x: torch.Tensor, roles: Sequence[int]) -> None:
        if x.dim() != 2 or x.shape[1] != self.hp.input_width:
            raise ValueError(f"expected vectors of shape (n, {self.hp.input_width}), got {tuple(x.shape)}")
        if len(roles) != x.shape[0]:
            raise ValueError(f"{len(roles)} speaker roles for {x.shape[0]} utterances")
        bad = [r for r in roles if not 0 <= r < self.hp.max_roles]
        if bad:
            raise ValueError(f"unknown speaker role(s) {bad}; model has {self.hp.max_roles}")

    def encode(self, x: torch.Tensor, roles: Sequence[int], gold: Sequence[int] | None = None, return_states: bool = False):
        """Per-utterance ``ō_i ⊕ h̄_i`` rows (n x 2h).

        ``gold`` labels feed the optional label memory (teacher forcing); without them the
        model's own argmax predictions of earlier utterances are used.
        """
        self._check(x, roles)
        hp = self.hp
        h = hp.hidden_width
        zeros = x.new_zeros(h)
        g = zeros
        g_hist: list[torch.Tensor] = []
        spk: dict[int, torch.Tensor] = {}
        bank: torch.Tensor | None = None
        seen_labels: list[int] = []
        rows, hbars, gs, obars = [], [], [], []
        for i in range(x.shape[0]):
            u = x[i]
            if hp.global_context and g_hist:
                hist = torch.stack(g_hist)
                scores = self.global_key(hist) @ self.global_query(u) / math.sqrt(h)
                attended = torch.softmax(scores, dim=0) @ hist
            else:
                attended = zeros
            v = torch.cat([attended, u])
            role = roles[i]
            hbar = self.speaker_grus[role](v[None], spk.get(role, zeros)[None])[0]
            spk[role] = hbar
            if hp.global_context:
                g = self.global_gru(v[None], g[None])[0]
                g_hist.append(g)
            bank = hbar[None] if bank is None else torch.cat([bank, hbar[None]])
            indicators = None
            if hp.label_memory:
                indicators = x.new_zeros(i + 1, NUM_EMOTIONS)
                for j, lab in enumerate(seen_labels):
                    indicators[j, lab] = 1.0
            obar, bank, _ = memory_read(
                bank, hbar, i + 1, hp.hops, self.memory_grus, self.memory_key, self.memory_query, indicators
            )
            z = torch.cat([obar, hbar])
            rows.append(z)
            if hp.label_memory:
                if gold is not None:
                    seen_labels.append(int(gold[i]))
                else:
                    with torch.no_grad():
                        seen_labels.append(int(torch.argmax(self.classifier(z))))
            if return_states:
                hbars.append(hbar)
                gs.append(g)
                obars.append(obar)
        z = torch.stack(rows)
        if return_states:
            return z, {"h_bar": torch.stack(hbars), "g": torch.stack(gs), "o_bar": torch.stack(obars)}
        return z

    def forward(self, x: torch.Tensor, roles: Sequence[int], gold: Sequence[int] | None = None) -> torch.Tensor:
        return self.classifier(self.encode(x, roles, gold))


# ------------------------------------------------------------------ data helpers


def dialogue_tensors(dialogue: Dialogue, store: EmbeddingStore, hp: ErcHyperParams, truncate: bool = False):
    """Vectors, speaker roles and gold labels; ``truncate`` keeps the last ``max_seq_len`` utterances."""
    x = store.dialogue_matrix(dialogue)
    speakers = [u.speaker for u in dialogue.utterances]
    labels = [int(u.emotion) for u in dialogue.utterances]
    if truncate and len(labels) > hp.max_seq_len:
        x, speakers, labels = x[-hp.max_seq_len :], speakers[-hp.max_seq_len :], labels[-hp.max_seq_len :]
    return (
        torch.as_tensor(x, dtype=torch_dtype(hp.high_precision)),
        speaker_roles(speakers, hp.max_roles),
        torch.as_tensor(labels, dtype=torch.long),
    )


def forward_dialogue(model: ErcMMN, vectors, speakers: Sequence, hp: ErcHyperParams | None = None) -> torch.Tensor:
    """Probability rows (n x 7) for one dialogue, in eval mode."""
    hp = hp or model.hp
    x = torch.as_tensor(np.asarray(vectors), dtype=model.dtype)
    model.eval()
    with torch.no_grad():
        return torch.softmax(model(x, speaker_roles(list(speakers), hp.max_roles)), dim=-1)


def predict_emotions(model: ErcMMN, dialogue: Dialogue, store: EmbeddingStore) -> list[Emotion]:
    x, roles, _ = dialogue_tensors(dialogue, store, model.hp)
    model.eval()
    with torch.no_grad():
        logits = model(x, roles)
    return [Emotion(int(k)) for k in torch.argmax(logits, dim=-1)]


# ------------------------------------------------------------------ training


def erc_batch_loss(model: ErcMMN, batch) -> tuple[torch.Tensor, list[int], list[int]]:
    """Mean cross-entropy over every utterance in the batch, summed in batch order."""
    total = None
    count = 0
    gold, pred = [], []
    for x, roles, labels in batch:
        logits = model(x, roles, labels.tolist())
        ce = F.cross_entropy(logits, labels, reduction="sum")
        total = ce if total is None else total + ce
        count += len(labels)
        gold += labels.tolist()
        pred += torch.argmax(logits.detach(), dim=-1).tolist()
    return total / count, gold, pred


def train_erc(corpus, store: EmbeddingStore, hp: ErcHyperParams, model: ErcMMN | None = None, callback=None):
    """Adam on mean utterance cross-entropy; returns ``(model, log)``.

    ``callback(model, entry)`` runs after every epoch; a truthy return stops training.
    """
    if not corpus.dialogues:
        raise TrainingError("empty corpus")
    rng = seed_everything(hp.seed)
    model = model if model is not None else ErcMMN(hp)
    torch.manual_seed(hp.seed)  # dropout stream independent of how many weights were initialized
    data = [dialogue_tensors(d, store, hp, truncate=True) for d in corpus.dialogues]
    opt = adam(model.parameters(), hp.learning_rate)
    log = []
    for epoch in range(1, hp.max_epochs + 1):
        model.train()
        losses, gold, pred = [], [], []
        for step, batch in enumerate(batches(data, hp.batch_size, rng)):
            opt.zero_grad()
            loss, g, p = erc_batch_loss(model, batch)
            check_finite(loss, epoch, step)
            loss.backward()
            opt.step()
            losses.append(loss.item())
            gold += g
            pred += p
        log.append({"epoch": epoch, "loss": float(np.mean(losses)), "train_f1": metrics.weighted_f1(gold, pred)})
        if callback is not None and callback(model, log[-1]):
            break
    model.eval()
    return model, log


def evaluate_erc(model: ErcMMN, corpus, store: EmbeddingStore) -> metrics.MetricsReport:
    gold, pred = [], []
    for d in corpus.dialogues:
        gold += [int(u.emotion) for u in d.utterances]
        pred += [int(e) for e in predict_emotions(model, d, store)]
    return metrics.classification_report(gold, pred, list(range(NUM_EMOTIONS)))


def save_erc(model: ErcMMN, path) -> None:
    save_checkpoint(path, "erc-mmn", as_dict(model.hp), model.state_dict())


def load_erc(path) -> ErcMMN:
    kind, hparams, state = load_checkpoint(path)
    if kind != "erc-mmn":
        raise ValueError(f"{path}: expected an erc-mmn checkpoint, found {kind}")
    model = ErcMMN(ErcHyperParams(**hparams))
    model.load_state_dict(state)
    model.eval()
    return model

