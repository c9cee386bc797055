"""Flat, bit-exact checkpoint files.

Layout::

    8 bytes   magic b"HHFCKPT1"
    8 bytes   little-endian uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys): config, seed, meta, and one
              entry per tensor {name, shape, offset, nbytes}
    ...       concatenated little-endian float64 payloads

Writing the same content twice yields identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

from .errors import DataError

MAGIC = b"HHFCKPT1"
_LEN = struct.Struct("<Q")


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def namespace(self, prefix: str) -> Dict[str, np.ndarray]:
        prefix = prefix.rstrip("/") + "/"
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def has_namespace(self, prefix: str) -> bool:
        prefix = prefix.rstrip("/") + "/"
        return any(k.startswith(prefix) for k in self.tensors)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        data = np.asarray(arr, dtype="<f8", order="C")
        raw = data.tobytes()
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": 1,
        "config": ckpt.config,
        "seed": ckpt.seed,
        "meta": ckpt.meta,
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LEN.pack(len(head)) + head + b"".join(blobs)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:8] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (hlen,) = _LEN.unpack_from(buf, 8)
    start = 16 + hlen
    header = json.loads(buf[16:start].decode("utf-8"))
    tensors = {}
    for e in header["tensors"]:
        lo = start + e["offset"]
        raw = buf[lo : lo + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise DataError(f"truncated payload for {e['name']}")
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return Checkpoint(tensors, header.get("config", {}), header.get("seed"), header.get("meta", {}))


def save_checkpoint(path, ckpt: Checkpoint) -> str:
    """Write atomically; returns the SHA-256 of the file contents."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = encode_checkpoint(ckpt)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf)
    os.replace(tmp, path)
    return hashlib.sha256(buf).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def prefixed(state: Mapping[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    prefix = prefix.rstrip("/") + "/"
    return {prefix + k: v for k, v in state.items()}


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
