"""Parameter checkpoints: a JSON manifest plus a float64 binary blob.

Single-file container layout (all little-endian):

    magic b"BKCP" | version u8 | header_len u32 | header JSON | blob

The header lists parameter names and shapes in order; the blob is their
float64 data concatenated in that same order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tensor

MAGIC = b"BKCP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: Mapping[str, Tensor], path) -> None:
    names = list(params)
    header = {
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic {raw[:4]!r})")
    (version,) = struct.unpack("<B", raw[4:5])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9 : 9 + header_len].decode("utf-8"))
    out: dict[str, np.ndarray] = {}
    offset = 9 + header_len
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = raw[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise CheckpointError(f"{path}: truncated blob for parameter {entry['name']!r}")
        out[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    return out


def restore_checkpoint(params: Mapping[str, Tensor], path) -> None:
    """Load a checkpoint into an existing parameter mapping, in place."""
    loaded = load_checkpoint(path)
    missing = set(params) - set(loaded)
    if missing:
        raise CheckpointError(f"{path}: checkpoint lacks parameters {sorted(missing)}")
    for name, tensor in params.items():
        if loaded[name].shape != tensor.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {loaded[name].shape}, expected {tensor.shape}"
            )
        tensor.data[...] = loaded[name]
