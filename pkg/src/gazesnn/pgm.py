"""16-bit binary PGM (P5) reading and writing.

Samples are stored most-significant-byte first with maxval 65535, per the
Netpbm format. Float images in [0, 1] round-trip through
``round(x * 65535)``; writing then reading recovers the quantized values.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

MAXVAL = 65535


def write_pgm16(path, image: np.ndarray) -> None:
    """Write a (H, W) float array with values in [0, 1] as 16-bit PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ContractError(f"PGM image must be 2-D, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ContractError("PGM image values must lie in [0, 1]")
    quant = np.round(img * MAXVAL).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{MAXVAL}\n".encode("ascii"))
        fh.write(quant.tobytes())


def read_pgm16(path) -> np.ndarray:
    """Read a 16-bit binary PGM back into a float array in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ContractError(f"{path}: not a binary PGM file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != MAXVAL:
        raise ContractError(f"{path}: expected maxval {MAXVAL}, got {maxval}")
    raster = np.frombuffer(blob, dtype=">u2", count=width * height, offset=pos)
    return raster.reshape(height, width).astype(np.float64) / MAXVAL
