"""Versioned binary weight checkpoints.

Layout (little-endian)::

    magic      8 bytes  b"VRUCKPT\\0"
    version    u32
    fingerprint 32 bytes  sha256 digest of the graph structure
    count      u32
    count x { name_len u16, name utf-8, ndim u8, dims u32 * ndim, data f32 * prod(dims) }

Tensors appear in parameter declaration order.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"VRUCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], fingerprint: str) -> Path:
    path = Path(path)
    digest = bytes.fromhex(fingerprint)
    if len(digest) != 32:
        raise CheckpointError("fingerprint must be a sha256 hex digest")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(digest)
        f.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
    return path


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    """Returns ``(fingerprint_hex, {name: float32 array})`` in file order."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    version, = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    fingerprint = data[pos:pos + 32].hex()
    pos += 32
    count, = take("<I")
    tensors = {}
    for _ in range(count):
        n, = take("<H")
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        ndim, = take("<B")
        dims = take(f"<{ndim}I")
        size = int(np.prod(dims)) * 4
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += size
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return fingerprint, tensors
