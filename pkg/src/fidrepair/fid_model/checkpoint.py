"""Checkpoint container: magic, version, JSON header, raw little-endian tensors.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"FIDCKPT\\0"
    8       4     format version (uint32), currently 1
    12      8     header length H in bytes (uint64)
    20      H     UTF-8 JSON header: {"config": {...}, "extra": {...},
                  "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    20+H    ...   tensor data; each "offset" is relative to this point

``dtype`` is one of "float32", "float64", "int64".
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig

MAGIC = b"FIDCKPT\0"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def save_checkpoint(path, state: dict[str, torch.Tensor], cfg: ModelConfig, extra: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise TypeError(f"{name}: unsupported dtype {dtype}")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"config": cfg.to_dict(), "extra": extra or {}, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], ModelConfig, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    base = 20 + hlen
    state = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(raw[start : start + e["nbytes"]], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.astype(e["dtype"]))
    return state, ModelConfig.from_dict(header["config"]), header["extra"]
