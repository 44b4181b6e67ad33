"""Run configuration: defaults, YAML/JSON files, CONVFLIP_ environment overrides, flags.

Precedence, lowest first: built-in defaults, config file, environment, command-line flags.
Environment keys map onto the document with ``__`` as the nesting separator, e.g.
``CONVFLIP_ERC__HOPS=3`` or ``CONVFLIP_SEED=7``; values are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .corpus import SPLITS
from .efr_tx import EfrHyperParams
from .erc_mmn import ErcHyperParams
from .multitask import MultiHyperParams

ENV_PREFIX = "CONVFLIP_"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class DataPaths:
    dialogues: str | None = None
    triggers: str | None = None
    embeddings: str | None = None
    emotion_labels: str | None = None  # predicted-emotion JSONL for label_source=predicted


@dataclass(frozen=True)
class MultiSection:
    learning_rate: float = 1e-4
    erc_weight: float = 1.0
    efr_weight: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    split: str = "train"
    data: DataPaths = field(default_factory=DataPaths)
    erc: ErcHyperParams = field(default_factory=ErcHyperParams)
    efr: EfrHyperParams = field(default_factory=EfrHyperParams)
    multi: MultiSection = field(default_factory=MultiSection)

    @property
    def erc_hparams(self) -> ErcHyperParams:
        return dataclasses.replace(self.erc, seed=self.seed)

    @property
    def efr_hparams(self) -> EfrHyperParams:
        return dataclasses.replace(self.efr, seed=self.seed)

    @property
    def multi_hparams(self) -> MultiHyperParams:
        trunk = dataclasses.replace(self.erc, seed=self.seed, learning_rate=self.multi.learning_rate)
        return MultiHyperParams(trunk, self.efr.window, self.multi.erc_weight, self.multi.efr_weight)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"data": DataPaths, "erc": ErcHyperParams, "efr": EfrHyperParams, "multi": MultiSection}


def default_document() -> dict:
    return RunConfig().to_json()


def _merge(base: dict, update: Mapping, where: str, problems: list[str]) -> None:
    for key, value in update.items():
        path = f"{where}{key}"
        if key not in base:
            problems.append(f"unknown key {path!r}")
        elif isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                problems.append(f"{path!r} must be a mapping")
            else:
                _merge(base[key], value, path + ".", problems)
        else:
            base[key] = value


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"{path}: no such config file"])
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: unreadable config ({exc})"]) from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return doc


def env_overrides(environ: Mapping[str, str]) -> dict:
    doc: dict[str, Any] = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        keys = name[len(ENV_PREFIX) :].lower().split("__")
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = yaml.safe_load(environ[name])
    return doc


def _coerce(doc: dict, problems: list[str]) -> dict:
    """Check scalar types against the defaults; ints are accepted where floats are expected."""
    defaults = default_document()

    def walk(d, ref, where):
        for k, v in d.items():
            r = ref[k]
            if isinstance(r, dict):
                walk(v, r, f"{where}{k}.")
                continue
            if v is None or r is None:
                continue
            if isinstance(r, bool):
                ok = isinstance(v, bool)
            elif isinstance(r, float):
                ok = isinstance(v, (int, float)) and not isinstance(v, bool)
                if ok:
                    d[k] = float(v)
            elif isinstance(r, int):
                ok = isinstance(v, int) and not isinstance(v, bool)
            else:
                ok = isinstance(v, str)
            if not ok:
                problems.append(f"{where}{k}: expected {type(r).__name__}, got {v!r}")

    walk(doc, defaults, "")
    # learning_rate on efr defaults to None (schedule-derived); accept numbers
    lr = doc["efr"].get("learning_rate")
    if lr is not None and not (isinstance(lr, (int, float)) and not isinstance(lr, bool)):
        problems.append(f"efr.learning_rate: expected number, got {lr!r}")
    return doc


def build_config(doc: Mapping) -> RunConfig:
    """Validate a full document and construct the config, reporting every problem at once."""
    problems: list[str] = []
    doc = _coerce(copy.deepcopy(dict(doc)), problems)
    if doc["split"] not in SPLITS:
        problems.append(f"split must be one of {SPLITS}, got {doc['split']!r}")
    sections = {}
    for name, cls in _SECTIONS.items():
        try:
            sections[name] = cls(**doc[name])
        except (TypeError, ValueError) as exc:
            problems.append(f"{name}: {exc}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(seed=doc["seed"], out=doc["out"], split=doc["split"], **sections)


def load_config(path=None, environ: Mapping[str, str] | None = None, overrides: Mapping | None = None) -> RunConfig:
    doc = default_document()
    problems: list[str] = []
    if path is not None:
        _merge(doc, read_config_file(path), "", problems)
    _merge(doc, env_overrides(os.environ if environ is None else environ), "", problems)
    if overrides:
        _merge(doc, overrides, "", problems)
    if problems:
        raise ConfigError(problems)
    return build_config(doc)
