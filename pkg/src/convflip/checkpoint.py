"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON header
(kind, hyperparameters, tensor manifest with shapes/dtypes/offsets), then the raw
little-endian tensor bytes in manifest order. Output is byte-stable for equal inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"CVFLIP\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, kind: str, hparams: dict, state: dict[str, torch.Tensor]) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name in sorted(state):
        arr = state[name].detach().cpu().contiguous().numpy()
        dtype = arr.dtype.newbyteorder("<")
        raw = arr.astype(dtype, copy=False).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype.str, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind, "hparams": hparams, "tensors": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[str, dict, dict[str, torch.Tensor]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    body = data[16 + hlen :]
    state = {}
    for t in header["tensors"]:
        chunk = body[t["offset"] : t["offset"] + t["nbytes"]]
        if len(chunk) != t["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {t['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(t["dtype"])).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy())
    return header["kind"], header["hparams"], state
