"""Edit-distance metrics: CER, NED, word accuracy, confusion counts.

Orientation is fixed everywhere: the first argument is the ground truth, the
second the prediction. Characters are compared as Unicode scalar values.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numba
import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EditBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_length: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def _distance_table(a: Sequence[Hashable], b: Sequence[Hashable]) -> list[list[int]]:
    m = len(b)
    table = [list(range(m + 1))]
    prev = table[0]
    for i, ca in enumerate(a, 1):
        row = [i] * (m + 1)
        for j in range(1, m + 1):
            cost = prev[j - 1] + (ca != b[j - 1])
            up = prev[j] + 1
            left = row[j - 1] + 1
            row[j] = min(cost, up, left)
        table.append(row)
        prev = row
    return table


@numba.njit(cache=True)
def _edit_ops(a, b):
    # full table, then backtrace: (distance, S, D, I)
    n, m = a.shape[0], b.shape[0]
    t = np.empty((n + 1, m + 1), dtype=np.int64)
    for j in range(m + 1):
        t[0, j] = j
    for i in range(1, n + 1):
        t[i, 0] = i
        for j in range(1, m + 1):
            best = t[i - 1, j - 1] + (a[i - 1] != b[j - 1])
            if t[i - 1, j] + 1 < best:
                best = t[i - 1, j] + 1
            if t[i, j - 1] + 1 < best:
                best = t[i, j - 1] + 1
            t[i, j] = best
    i, j = n, m
    s = d = ins = 0
    while i > 0 or j > 0:
        here = t[i, j]
        if i > 0 and j > 0 and t[i - 1, j - 1] + (a[i - 1] != b[j - 1]) == here:
            if a[i - 1] != b[j - 1]:
                s += 1
            i -= 1
            j -= 1
        elif i > 0 and t[i - 1, j] + 1 == here:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return t[n, m], s, d, ins


@numba.njit(cache=True)
def _distance_only(a, b):
    m = b.shape[0]
    prev = np.arange(m + 1)
    row = np.empty(m + 1, dtype=prev.dtype)
    for i in range(1, a.shape[0] + 1):
        row[0] = i
        for j in range(1, m + 1):
            best = prev[j - 1] + (a[i - 1] != b[j - 1])
            best = min(best, prev[j] + 1, row[j - 1] + 1)
            row[j] = best
        prev, row = row, prev
    return prev[m]


def _codes(seq) -> np.ndarray | None:
    if isinstance(seq, str):
        return np.frombuffer(seq.encode("utf-32-le"), dtype=np.uint32)
    if isinstance(seq, np.ndarray) and seq.dtype.kind in "iu":
        return seq.astype(np.int64)
    if all(isinstance(v, (int, np.integer)) for v in seq):
        return np.asarray(list(seq), dtype=np.int64).reshape(-1)
    return None


_GAP = object()


def _python_ops(a, b) -> tuple[int, int, int, int]:
    pairs = aligned_pairs(a, b, _GAP)
    s = sum(1 for x, y in pairs if x is not _GAP and y is not _GAP and x != y)
    d = sum(1 for _, y in pairs if y is _GAP)
    ins = sum(1 for x, _ in pairs if x is _GAP)
    return s + d + ins, s, d, ins


def levenshtein(ground_truth: Sequence[Hashable], prediction: Sequence[Hashable]) -> tuple[int, EditBreakdown]:
    """Unit-cost edit distance plus an S/D/I breakdown from the backtrace.

    Deletions are ground-truth symbols missing from the prediction; insertions
    are extra predicted symbols. When several optimal moves exist the
    backtrace prefers substitution/match, then deletion, then insertion.
    """
    ca, cb = _codes(ground_truth), _codes(prediction)
    if ca is None or cb is None:
        dist, s, d, ins = _python_ops(ground_truth, prediction)
    else:
        dist, s, d, ins = _edit_ops(ca, cb)
    return int(dist), EditBreakdown(int(s), int(d), int(ins), len(ground_truth))


def edit_distance(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    ca, cb = _codes(a), _codes(b)
    if ca is None or cb is None:
        return _python_ops(a, b)[0]
    return int(_distance_only(ca, cb))


def cer(ground_truth: str, prediction: str) -> float:
    """(S + D + I) / N with N the ground-truth length; can exceed 1."""
    if len(ground_truth) == 0:
        raise ValueError("CER is undefined for an empty ground truth")
    return edit_distance(ground_truth, prediction) / len(ground_truth)


def ned(ground_truth: str, prediction: str) -> float:
    """Edit distance over the longer of the two lengths, in [0, 1]."""
    longest = max(len(ground_truth), len(prediction))
    if longest == 0:
        logger.debug("NED of two empty strings taken as 0")
        return 0.0
    return edit_distance(ground_truth, prediction) / longest


def word_accuracy(pairs: Sequence[tuple[str, str]]) -> float:
    if len(pairs) == 0:
        raise ValueError("word accuracy of an empty evaluation set")
    return sum(gt == pred for gt, pred in pairs) / len(pairs)


def confusion_matrix(pairs: Iterable[tuple[int, int]], num_classes: int) -> np.ndarray:
    """counts[true, predicted] over (true, predicted) class pairs."""
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in pairs:
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise IndexError(f"class pair ({t}, {p}) outside 0..{num_classes - 1}")
        counts[t, p] += 1
    return counts


def aligned_pairs(ground_truth: Sequence[int], prediction: Sequence[int], gap: int) -> list[tuple[int, int]]:
    """Character pairs along the levenshtein backtrace; ``gap`` stands for a missing symbol."""
    a, b = ground_truth, prediction
    table = _distance_table(a, b)
    i, j = len(a), len(b)
    out = []
    while i > 0 or j > 0:
        here = table[i][j]
        if i > 0 and j > 0 and table[i - 1][j - 1] + (a[i - 1] != b[j - 1]) == here:
            out.append((a[i - 1], b[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and table[i - 1][j] + 1 == here:
            out.append((a[i - 1], gap))
            i -= 1
        else:
            out.append((gap, b[j - 1]))
            j -= 1
    out.reverse()
    return out


@dataclass
class MetricsReport:
    cer: float
    ned: float
    word_accuracy: float
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))
    skipped: int = 0
    count: int = 0

    def to_dict(self) -> dict:
        return {
            "cer": float(self.cer),
            "ned": float(self.ned),
            "word_accuracy": float(self.word_accuracy),
            "skipped": int(self.skipped),
            "confusion": np.asarray(self.confusion).tolist(),
        }

    def to_json(self) -> str:
        # repr-based float formatting keeps full precision
        return json.dumps(self.to_dict(), sort_keys=False)


def evaluate_strings(
    pairs: Sequence[tuple[str, str]],
    confusion: np.ndarray | None = None,
    skipped: int = 0,
) -> MetricsReport:
    """Corpus CER (total edits over total ground-truth characters), mean NED, word accuracy."""
    if not pairs:
        raise ValueError("nothing to evaluate")
    edits = sum(edit_distance(gt, pred) for gt, pred in pairs)
    chars = sum(len(gt) for gt, _ in pairs)
    if chars == 0:
        raise ValueError("CER is undefined when every ground truth is empty")
    mean_ned = sum(ned(gt, pred) for gt, pred in pairs) / len(pairs)
    return MetricsReport(
        cer=edits / chars,
        ned=mean_ned,
        word_accuracy=word_accuracy(pairs),
        confusion=confusion if confusion is not None else np.zeros((0, 0), dtype=np.int64),
        skipped=skipped,
        count=len(pairs),
    )
