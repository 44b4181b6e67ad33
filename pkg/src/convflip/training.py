"""Plumbing shared by the trainers: seeding, initialization, batching."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
from torch import nn


class TrainingError(RuntimeError):
    pass


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def init_weights(module: nn.Module) -> None:
    """Fan-based uniform for matrices, zeros for biases, ones for norm gains."""
    gains = {id(m.weight) for m in module.modules() if isinstance(m, nn.LayerNorm)}
    with torch.no_grad():
        for p in module.parameters():
            if id(p) in gains:
                p.fill_(1.0)
            elif p.dim() >= 2:
                nn.init.xavier_uniform_(p)
            else:
                p.zero_()


def adam(params, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def batches(items: list, batch_size: int, rng: np.random.Generator | None) -> list[list]:
    order = np.arange(len(items)) if rng is None else rng.permutation(len(items))
    return [[items[i] for i in order[s : s + batch_size]] for s in range(0, len(items), batch_size)]


def check_finite(loss: torch.Tensor, epoch: int, step: int) -> None:
    if not math.isfinite(loss.item()):
        raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}")


def as_dict(hp) -> dict:
    return dataclasses.asdict(hp)


def torch_dtype(high_precision: bool) -> torch.dtype:
    return torch.float64 if high_precision else torch.float32
