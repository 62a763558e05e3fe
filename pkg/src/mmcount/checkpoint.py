"""Portable checkpoint container (layout documented in docs/checkpoint_format.md).

    offset 0   4 bytes   magic b"MMCK"
    offset 4   uint32    format version (little-endian), currently 1
    offset 8   uint64    header length H in bytes (little-endian)
    offset 16  H bytes   UTF-8 JSON header
    then       tensor blobs, float32 little-endian, C order, at the offsets
               (relative to the end of the header) listed in header["tensors"]
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"MMCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


@dataclass
class ModelCheckpoint:
    kind: str  # "pix2pix" or "mmcount"
    config: dict
    tensors: dict[str, np.ndarray]
    seed: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    index = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        data = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "seed": int(ckpt.seed),
        "epoch": int(ckpt.epoch),
        "history": ckpt.history,
        "meta": ckpt.meta,
        "dtype": "float32-le",
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(head)))
        fh.write(head)
        for data in blobs:
            fh.write(data)


def load_checkpoint(path) -> ModelCheckpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    try:
        tensors = {}
        for entry in header["tensors"]:
            lo = start + entry["offset"]
            hi = lo + entry["nbytes"]
            if hi > len(raw):
                raise FormatError(f"{path}: tensor {entry['name']} truncated")
            arr = np.frombuffer(raw[lo:hi], dtype="<f4").reshape(entry["shape"])
            tensors[entry["name"]] = arr.astype(np.float32)
        return ModelCheckpoint(
            kind=header["kind"],
            config=header["config"],
            tensors=tensors,
            seed=header.get("seed", 0),
            epoch=header.get("epoch", 0),
            history=header.get("history", []),
            meta=header.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header ({exc!r})") from exc


def state_to_numpy(module, prefix: str = "") -> dict[str, np.ndarray]:
    p = f"{prefix}." if prefix else ""
    return {p + k: v.detach().cpu().numpy().astype(np.float32)
            for k, v in module.state_dict().items()}


def load_numpy_state(module, tensors: dict[str, np.ndarray]) -> None:
    import torch

    own = module.state_dict()
    missing = set(own) - set(tensors)
    unexpected = set(tensors) - set(own)
    if missing or unexpected:
        raise FormatError(f"checkpoint tensors do not match the model "
                          f"(missing {sorted(missing)}, unexpected {sorted(unexpected)})")
    module.load_state_dict({k: torch.from_numpy(np.array(v)).to(own[k].dtype)
                            for k, v in tensors.items()})
