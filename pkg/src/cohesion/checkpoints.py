"""Self-describing checkpoint container with deterministic bytes.

Layout: a magic line, an 8-byte little-endian header length, a sorted-key
JSON header (kind, architecture and its hash, tensor index, arbitrary
metadata), then the raw little-endian tensor payload.  Identical content
always produces identical bytes, which torch.save does not guarantee across
processes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

MAGIC = b"COHESION-CKPT-1\n"


def architecture_hash(arch: dict) -> str:
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path: str | Path, kind: str, architecture: dict,
                    state: dict[str, torch.Tensor], meta: dict):
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name].detach().cpu().numpy())
        data = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        tensors.append({
            "name": name,
            "dtype": arr.dtype.str.replace(">", "<"),
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        blobs.append(data)
        offset += len(data)
    header = {
        "kind": kind,
        "architecture": architecture,
        "architecture_hash": architecture_hash(architecture),
        "tensors": tensors,
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[str, dict, dict[str, torch.Tensor], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a cohesion checkpoint")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len))
        payload = fh.read()
    state = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    return header["kind"], header["architecture"], state, header["meta"]
