"""Versioned binary checkpoint of named float32 tensors.

Layout (little-endian)::

    b"BEAMCKPT"  uint32 version  uint32 header_len  header (UTF-8 JSON)  payloads

The header holds arbitrary metadata (configs, split, arm) plus a
``tensors`` list of ``{"name", "shape"}`` giving the payload order.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"BEAMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    header = dict(meta or {})
    names = sorted(tensors)
    header["tensors"] = [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    offset = start + hlen
    tensors = {}
    for item in header["tensors"]:
        shape = tuple(item["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {item['name']}")
        tensors[item["name"]] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).astype(np.float32)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, header
