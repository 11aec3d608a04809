"""Self-contained binary checkpoints.

Layout: 8-byte magic, u32 version, u64 header length, JSON header, raw
little-endian tensor payload. The header carries the config snapshot
(model dims, vocabulary, training settings), the tensor manifest with
offsets, optimizer moments, the step counter, and the generator state,
so a checkpoint alone can rebuild the model for evaluation.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CBCESNAP"
VERSION = 1

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    config: dict
    params: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_t: int = 0
    step: int = 0
    rng_state: dict | None = None


def _entries(group: str, arrays: dict, offset: int, blobs: list) -> tuple:
    out = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _DTYPE_TAGS[arr.dtype.name]
        blob = np.ascontiguousarray(arr).astype(tag, copy=False).tobytes()
        out.append({
            "group": group,
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    return out, offset


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blobs: list = []
    entries, offset = _entries("param", ckpt.params, 0, blobs)
    more, offset = _entries("adam_m", ckpt.adam_m, offset, blobs)
    entries += more
    more, offset = _entries("adam_v", ckpt.adam_v, offset, blobs)
    entries += more
    header = json.dumps({
        "config": ckpt.config,
        "step": ckpt.step,
        "adam_t": ckpt.adam_t,
        "rng_state": ckpt.rng_state,
        "tensors": entries,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for ent in header["tensors"]:
        raw = payload[ent["offset"] : ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPE_TAGS[ent["dtype"]]).astype(ent["dtype"])
        groups[ent["group"]][ent["name"]] = arr.reshape(ent["shape"])
    return Checkpoint(
        config=header["config"],
        params=groups["param"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        adam_t=header["adam_t"],
        step=header["step"],
        rng_state=header["rng_state"],
    )
