"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"SPIKEGZ1"``
    bytes 8..11   format version, uint32 (currently 1)
    bytes 12..19  header length in bytes, uint64
    header        UTF-8 JSON: model config echo (including neuron constants)
                  and the ordered array table ``[{name, shape}, ...]``
    payload       the arrays' raw float64 little-endian bytes, in table order

Both the header (sorted keys, fixed separators) and the payload are fully
determined by the model state, so identical models produce identical files
and a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .blocks import EgSpikeFormer, ModelConfig, build_model
from .errors import ContractError

MAGIC = b"SPIKEGZ1"
FORMAT_VERSION = 1


def checkpoint_bytes(model: EgSpikeFormer) -> bytes:
    arrays = model.state_arrays()
    table = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    header = json.dumps(
        {"config": model.config.to_dict(), "arrays": table, "format_version": FORMAT_VERSION},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(header)), header]
    for v in arrays.values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: EgSpikeFormer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path) -> EgSpikeFormer:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC) + 4)
    off = len(MAGIC) + 12
    header = json.loads(blob[off : off + header_len].decode("utf-8"))
    off += header_len

    model = build_model(ModelConfig.from_dict(header["config"]))
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
        off += n * 8
    model.load_state_arrays(arrays)
    return model
