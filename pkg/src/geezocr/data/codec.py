from __future__ import annotations

import os
import unicodedata
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def ethiopic_syllables(count: int = 182) -> list[str]:
    """The first ``count`` assigned letters of the Ethiopic block (U+1200 onward)."""
    out = []
    for cp in range(0x1200, 0x1380):
        ch = chr(cp)
        if unicodedata.category(ch) == "Lo":
            out.append(ch)
        if len(out) == count:
            return out
    raise ValueError(f"the Ethiopic block has only {len(out)} syllables")


class LabelCodec:
    """Bijection between characters and class indices 0..C-1; the CTC blank is C."""

    def __init__(self, chars: Iterable[str]):
        chars = list(chars)
        for ch in chars:
            if len(ch) != 1:
                raise ValueError(f"charset entries must be single characters, got {ch!r}")
        if len(set(chars)) != len(chars):
            raise ValueError("charset contains duplicates")
        self.chars = chars
        self.index_of = {ch: i for i, ch in enumerate(chars)}

    def __len__(self) -> int:
        return len(self.chars)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelCodec) and other.chars == self.chars

    @property
    def blank_index(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index_of[ch] for ch in text]
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} (U+{ord(e.args[0]):04X}) is not in the charset") from None

    def decode(self, indices: Sequence[int]) -> str:
        return "".join(self.chars[int(i)] for i in indices if 0 <= int(i) < len(self.chars))

    def unknown_chars(self, text: str) -> list[str]:
        return [ch for ch in text if ch not in self.index_of]

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "LabelCodec":
        return cls(sorted(set("".join(labels))))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LabelCodec":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text("".join(ch + "\n" for ch in self.chars), encoding="utf-8")


def encode_labels(labels: Sequence[str], codec: LabelCodec, pad_to: int) -> tuple[np.ndarray, np.ndarray]:
    """Index matrix right-padded with -1, and the true lengths."""
    matrix = np.full((len(labels), pad_to), -1, dtype=np.int64)
    lengths = np.zeros(len(labels), dtype=np.int64)
    for i, text in enumerate(labels):
        if len(text) > pad_to:
            raise ValueError(f"label {text!r} is longer than pad_to={pad_to}")
        idx = codec.encode(text)
        matrix[i, : len(idx)] = idx
        lengths[i] = len(idx)
    return matrix, lengths
