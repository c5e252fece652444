"""Dataset directories, samples, and writer-disjoint splitting.

A dataset directory holds ``labels.tsv`` (UTF-8, columns: relative image
path, label, writer id, style id) and the referenced PGM images.
"""

from __future__ import annotations

import csv
import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import LabelCodec
from .pgm import PGMError, read_pgm, write_pgm
from .transforms import resize_bilinear


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Sample:
    pixels: np.ndarray  # H x W, values in [0, 1], ink bright on a dark background
    label: str
    writer_id: str
    style_id: str


def load_dataset(
    directory: str | os.PathLike,
    codec: LabelCodec | None = None,
    image_hw: tuple[int, int] | None = None,
) -> list[Sample]:
    """Read every row of ``labels.tsv``.

    Images brighter than 0.5 on average are inverted so strokes are high.
    When ``image_hw`` is given, images of any other size are resized to it.
    """
    root = Path(directory)
    index = root / "labels.tsv"
    if not index.is_file():
        raise DatasetError(f"{index} does not exist")
    samples = []
    with index.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), 1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise DatasetError(f"labels.tsv row {lineno}: expected 4 columns, got {len(row)}")
            rel, label, writer, style = row
            if codec is not None:
                bad = codec.unknown_chars(label)
                if bad:
                    raise DatasetError(
                        f"labels.tsv row {lineno}: character {bad[0]!r} (U+{ord(bad[0]):04X}) is not in the charset"
                    )
            path = root / rel
            if not path.is_file():
                raise DatasetError(f"labels.tsv row {lineno}: missing image {rel}")
            try:
                pixels = read_pgm(path)
            except PGMError as e:
                raise DatasetError(f"labels.tsv row {lineno}: {e}") from e
            if pixels.mean() > 0.5:
                pixels = 1.0 - pixels
            if image_hw is not None and pixels.shape != tuple(image_hw):
                pixels = resize_bilinear(pixels, image_hw)
            samples.append(Sample(pixels, label, writer, style))
    return samples


def write_dataset(directory: str | os.PathLike, samples: Sequence[Sample]) -> None:
    """Write samples as P5 images plus ``labels.tsv``."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        for field_value in (s.label, s.writer_id, s.style_id):
            if "\t" in field_value or "\n" in field_value:
                raise DatasetError(f"sample {i}: tabs and newlines are not allowed in labels or ids")
        rel = f"images/{i:06d}.pgm"
        write_pgm(root / rel, s.pixels)
        rows.append(f"{rel}\t{s.label}\t{s.writer_id}\t{s.style_id}\n")
    (root / "labels.tsv").write_text("".join(rows), encoding="utf-8")


def split_by_writer(
    samples: Sequence[Sample],
    fractions: tuple[float, ...] = (0.70, 0.15, 0.15),
    rng: np.random.Generator | None = None,
) -> tuple[list[Sample], ...]:
    """Partition whole writers so split sizes approximate ``fractions`` of the sample count.

    Writers are visited in shuffled order and each goes to the split that is
    furthest below its target (ties to the earlier split). A split is never
    left empty while writers remain to fill it.
    """
    groups: OrderedDict[str, list[Sample]] = OrderedDict()
    for s in samples:
        groups.setdefault(s.writer_id, []).append(s)
    k = len(fractions)
    if len(groups) < k:
        raise DatasetError(f"need at least {k} writers to make {k} splits, found {len(groups)}")
    writers = list(groups)
    if rng is not None:
        writers = [writers[i] for i in rng.permutation(len(writers))]
    total = len(samples)
    targets = [f * total for f in fractions]
    sizes = [0] * k
    assigned: list[list[str]] = [[] for _ in range(k)]
    for pos, w in enumerate(writers):
        remaining = len(writers) - pos
        empty = [i for i in range(k) if not assigned[i]]
        if empty and remaining <= len(empty):
            choice = empty[0]
        else:
            deficits = [t - s for t, s in zip(targets, sizes)]
            choice = max(range(k), key=lambda i: (deficits[i], -i))
        assigned[choice].append(w)
        sizes[choice] += len(groups[w])
    return tuple([s for w in ws for s in groups[w]] for ws in assigned)


def stack_images(samples: Sequence[Sample]) -> np.ndarray:
    """(N, 1, H, W) float array."""
    return np.stack([s.pixels for s in samples])[:, None, :, :].astype(np.float64)
