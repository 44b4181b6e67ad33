"""Hyperparameter sweeps: memory hops for ERC-MMN, encoder depth for EFR-TX.

Each setting is trained from the same seed and evaluated on the given corpus; one
report (JSON, text, confusion CSV) is written per setting plus a summary table.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path
from typing import Sequence

from . import metrics
from .dialogue import detect_flips
from .efr_tx import EfrHyperParams, predict_triggers, train_efr
from .embeddings import EmbeddingStore
from .erc_mmn import ErcHyperParams, evaluate_erc, train_erc
from .instances import compile_corpus

HOPS = (1, 2, 3, 4, 5)
LAYERS = (1, 2, 3, 4, 5, 6, 7, 8)


def efr_gold_labels(corpus):
    return {d.id: [int(u.emotion) for u in d.utterances] for d in corpus.dialogues}


def evaluate_efr(model, corpus, store: EmbeddingStore, emotions=None) -> metrics.MetricsReport:
    pred = {}
    for d in corpus.dialogues:
        vecs = store.dialogue_matrix(d)
        emo = None if emotions is None else emotions[d.id]
        pred[d.id] = predict_triggers(model, d, vecs, detect_flips(d), emo)
    return metrics.efr_dialogue_report(corpus.annotations, pred, model.hp.window)


def _summary(out_dir: Path, name: str, rows: list[dict]) -> Path:
    path = out_dir / f"{name}_summary.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def sweep_hops(corpus, store: EmbeddingStore, hp: ErcHyperParams, out_dir, values: Sequence[int] = HOPS) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for hops in values:
        setting = dataclasses.replace(hp, hops=hops)
        model, log = train_erc(corpus, store, setting)
        report = evaluate_erc(model, corpus, store)
        metrics.write_report(report, out_dir, f"hops_{hops}")
        (out_dir / f"hops_{hops}_log.jsonl").write_text("".join(json.dumps(e) + "\n" for e in log), encoding="utf-8")
        rows.append({"hops": hops, "weighted_f1": f"{report.weighted_f1:.4f}", "epochs": len(log)})
    _summary(out_dir, "hops", rows)
    return rows


def sweep_layers(
    corpus, store: EmbeddingStore, hp: EfrHyperParams, out_dir, values: Sequence[int] = LAYERS, emotions=None
) -> list[dict]:
    """``emotions`` (dialogue id -> label list) is needed for predicted-label conditioning."""
    if hp.uses_labels and emotions is None:
        if hp.label_source != "gold":
            raise ValueError("predicted-label conditioning needs emotion labels")
        emotions = efr_gold_labels(corpus)
    emotions = emotions if hp.uses_labels else None
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    instances = compile_corpus(corpus, hp.window)
    vectors = {d.id: store.dialogue_matrix(d) for d in corpus.dialogues}
    rows = []
    for layers in values:
        setting = dataclasses.replace(hp, encoder_layers=layers)
        model, log = train_efr(instances, vectors, setting, emotions)
        report = evaluate_efr(model, corpus, store, emotions)
        metrics.write_report(report, out_dir, f"layers_{layers}")
        (out_dir / f"layers_{layers}_log.jsonl").write_text("".join(json.dumps(e) + "\n" for e in log), encoding="utf-8")
        rows.append({"layers": layers, "trigger_f1": f"{report.trigger_f1:.4f}", "epochs": len(log)})
    _summary(out_dir, "layers", rows)
    return rows
