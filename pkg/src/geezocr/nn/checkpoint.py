"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"GZOC" | u32 version (=1) | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 rank | rank x u32 dims
               | prod(dims) x f64 values (row-major)
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..tensor import Tensor
from .params import ModelParams

MAGIC = b"GZOC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(entries: ModelParams) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, t in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        data = np.ascontiguousarray(t.data, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> ModelParams:
    view = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    entries = ModelParams()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
        if name in entries:
            raise CheckpointError(f"duplicate entry {name!r}")
        entries[name] = Tensor(values)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last entry")
    return entries


def save_checkpoint(params: ModelParams, buffers: ModelParams | None, path: str | os.PathLike) -> None:
    """Write parameters followed by running statistics to ``path``."""
    entries = ModelParams(list(params.items()) + list((buffers or {}).items()))
    Path(path).write_bytes(encode_checkpoint(entries))


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    return decode_checkpoint(Path(path).read_bytes())
