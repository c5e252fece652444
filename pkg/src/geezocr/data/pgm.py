"""NetPBM graymap reading (P5 binary, P2 ASCII) and P5 writing."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


def _tokens(buf: bytes, start: int, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers, skipping ``#`` comments."""
    out = []
    pos = start
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        end = pos
        while end < n and not buf[end : end + 1].isspace() and buf[end : end + 1] != b"#":
            end += 1
        if end == pos:
            raise PGMError("unexpected end of header")
        try:
            out.append(int(buf[pos:end]))
        except ValueError:
            raise PGMError(f"bad header token {buf[pos:end]!r}") from None
        pos = end
    return out, pos


def parse_pgm(buf: bytes) -> tuple[np.ndarray, int]:
    """Decode a P5 or P2 graymap. Returns (raw integer pixels H x W, maxval)."""
    magic = buf[:2]
    if magic not in (b"P5", b"P2"):
        raise PGMError(f"not a PGM file (magic {magic!r})")
    (width, height, maxval), pos = _tokens(buf, 2, 3)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise PGMError(f"invalid header: {width}x{height}, maxval {maxval}")
    count = width * height
    if magic == b"P5":
        pos += 1  # exactly one whitespace byte before the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = buf[pos : pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise PGMError("truncated raster")
        pixels = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    else:
        values, _ = _tokens(buf, pos, count)
        pixels = np.array(values, dtype=np.int64)
    if pixels.max(initial=0) > maxval:
        raise PGMError("pixel value exceeds maxval")
    return pixels.reshape(height, width), maxval


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Pixels normalised to [0, 1] as ``raw / maxval``."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise PGMError(f"cannot read {path}: {e}") from e
    raw, maxval = parse_pgm(buf)
    return raw / float(maxval)


def encode_pgm(pixels: np.ndarray) -> bytes:
    """P5 encoding of values in [0, 1] (rounded to 8 bits)."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise PGMError("PGM images are two-dimensional")
    raw = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = raw.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + raw.tobytes()


def write_pgm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(pixels))
