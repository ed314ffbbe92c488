"""Checkpoint files: a JSON metadata line followed by one blob per parameter.

Parameters are written float32 row-major, so save/load round-trips
bit-exactly. Metadata carries whatever the trainer wants to persist
(config hash, epoch, schedule state) plus the named parameter table.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import IoFailure
from ..graphcore import pack_blob, unpack_blob
from .layers import Module


def save_checkpoint(path: Path, model: Module, meta: dict) -> None:
    named = model.named_parameters()
    header = {
        "format": "sg-checkpoint",
        "version": 1,
        "meta": meta,
        "params": [{"name": name, "shape": list(p.shape)} for name, p in named],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, p in named:
            fh.write(pack_blob(p.data.reshape(1, -1)))


def load_checkpoint(path: Path, model: Module) -> dict:
    """Load parameters into ``model`` (names and shapes must match); return meta."""
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise IoFailure(f"malformed checkpoint: {path}")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IoFailure(f"malformed checkpoint header: {exc}") from exc
    if header.get("format") != "sg-checkpoint":
        raise IoFailure(f"not a checkpoint file: {path}")
    named = dict(model.named_parameters())
    table = header["params"]
    if [e["name"] for e in table] != list(named.keys()):
        raise IoFailure("checkpoint parameter table does not match the model")
    offset = nl + 1
    for entry in table:
        mat, offset = unpack_blob(raw, offset, origin=str(path))
        p = named[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != p.shape or mat.size != p.data.size:
            raise IoFailure(f"checkpoint shape mismatch for {entry['name']}")
        p.data = mat.reshape(shape).astype(p.data.dtype)
    if offset != len(raw):
        raise IoFailure(f"trailing bytes in checkpoint: {path}")
    return header["meta"]
