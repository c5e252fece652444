"""Connectionist temporal classification: loss, gradient, decoders, brute-force oracle.

Log-probabilities are laid out (T, N, K) with K = C + 1 classes; the blank is
the last class (index C) unless stated otherwise. All dynamic programming is
done in log space; log(0) is represented by the sentinel ``NEG``.
"""

from __future__ import annotations

import itertools
import logging
import math
from typing import Sequence

import numpy as np

from .tensor import Tensor, mul, record

logger = logging.getLogger(__name__)

NEG = -1e30
BRUTE_FORCE_LIMIT = 10**6


class CTCInfeasibleError(ValueError):
    """A label cannot be emitted in the available number of frames."""


def _lse(a, b):
    return np.maximum(np.logaddexp(a, b), NEG)


def _as_array(log_probs) -> np.ndarray:
    return log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs, dtype=np.float64)


def extend_label(label: Sequence[int], blank: int) -> np.ndarray:
    """Interleave blanks: (blank, l1, blank, l2, ..., blank)."""
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    return ext


def min_frames(label: Sequence[int]) -> int:
    """Fewest frames that can emit ``label``: one per symbol plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def is_feasible(label: Sequence[int], frames: int) -> bool:
    return min_frames(label) <= frames


def _clean_labels(labels, n: int, label_lengths=None) -> list[list[int]]:
    out = []
    for i in range(n):
        row = labels[i]
        row = [int(v) for v in (row.tolist() if isinstance(row, np.ndarray) else row)]
        if label_lengths is not None:
            row = row[: int(label_lengths[i])]
        else:
            row = [v for v in row if v >= 0]
        out.append(row)
    return out


def ctc_forward_backward(lp: np.ndarray, label: Sequence[int], blank: int) -> tuple[float, np.ndarray]:
    """Log-likelihood of ``label`` under one (T, K) log-probability matrix, and its gradient.

    Returns ``(log_p, dlogp)`` where ``dlogp[t, k]`` is the derivative of
    ``log p(label)`` with respect to ``lp[t, k]``.
    """
    steps, classes = lp.shape
    if not 0 <= blank < classes:
        raise ValueError(f"blank index {blank} outside {classes} classes")
    if any(not 0 <= v < classes or v == blank for v in label):
        raise ValueError("label contains the blank or an out-of-range class")
    if not is_feasible(label, steps):
        raise CTCInfeasibleError(
            f"label of length {len(label)} needs {min_frames(label)} frames, only {steps} available"
        )
    ext = extend_label(label, blank)
    size = len(ext)
    skip = np.zeros(size, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # (T, S)

    alpha = np.full((steps, size), NEG)
    alpha[0, 0] = emit[0, 0]
    if size > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, steps):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = _lse(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], _lse(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = np.maximum(acc + emit[t], NEG)

    beta = np.full((steps, size), NEG)
    beta[-1, -1] = emit[-1, -1]
    if size > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(steps - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = _lse(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], _lse(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = np.maximum(acc + emit[t], NEG)

    log_p = float(alpha[-1, -1] if size == 1 else _lse(alpha[-1, -1], alpha[-1, -2]))
    # occupancy of extended position s at frame t, normalised by p(label)
    post = np.exp(np.minimum(alpha + beta - emit - log_p, 0.0))
    grad = np.zeros_like(lp)
    for t in range(steps):
        np.add.at(grad[t], ext, post[t])
    return log_p, grad


def ctc_batch(
    log_probs,
    labels,
    input_lengths=None,
    label_lengths=None,
    blank: int | None = None,
) -> tuple[float, np.ndarray, list[int]]:
    """Mean negative log-likelihood over feasible items, its gradient, and skipped item indices.

    Infeasible items are excluded from both the mean and the gradient.
    """
    lp = _as_array(log_probs)
    steps, n, classes = lp.shape
    blank = classes - 1 if blank is None else blank
    labels = _clean_labels(labels, n, label_lengths)
    lengths = [steps] * n if input_lengths is None else [int(v) for v in input_lengths]
    grad = np.zeros_like(lp)
    total = 0.0
    used, skipped = 0, []
    for i, (label, frames) in enumerate(zip(labels, lengths)):
        if not is_feasible(label, frames):
            skipped.append(i)
            continue
        log_p, g = ctc_forward_backward(lp[:frames, i, :], label, blank)
        total -= log_p
        grad[:frames, i, :] = -g
        used += 1
    if used == 0:
        raise CTCInfeasibleError("no item in the batch has a feasible label")
    if skipped:
        logger.warning("skipped %d infeasible CTC item(s): %s", len(skipped), skipped)
    return total / used, grad / used, skipped


def ctc_loss(
    log_probs: Tensor,
    labels,
    input_lengths=None,
    label_lengths=None,
    blank: int | None = None,
) -> Tensor:
    """Mean CTC negative log-likelihood as a scalar tensor recorded on the active tape.

    The gradient is taken with respect to the log-probabilities themselves.
    """
    loss, grad, _ = ctc_batch(log_probs, labels, input_lengths, label_lengths, blank)
    return record(
        np.array(loss),
        (log_probs,),
        lambda g: (mul(g, Tensor(grad)),),
        twice=False,
        name="ctc_loss",
    )


def label_log_prob(lp: np.ndarray, label: Sequence[int], blank: int) -> float:
    """log p(label | frames) for one (T, K) matrix; NEG when infeasible."""
    if not is_feasible(label, lp.shape[0]):
        return NEG
    return ctc_forward_backward(lp, label, blank)[0]


def collapse(path: Sequence[int], blank: int) -> list[int]:
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def brute_force_ctc(log_probs, label: Sequence[int], blank: int | None = None) -> float:
    """log p(label) by enumerating every length-T path (test oracle)."""
    lp = _as_array(log_probs)
    steps, classes = lp.shape
    blank = classes - 1 if blank is None else blank
    if classes**steps > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{classes}^{steps} paths exceeds the enumeration limit of {BRUTE_FORCE_LIMIT}")
    target = [int(v) for v in label]
    terms = []
    for path in itertools.product(range(classes), repeat=steps):
        if collapse(path, blank) == target:
            terms.append(sum(lp[t, k] for t, k in enumerate(path)))
    if not terms:
        return -math.inf
    m = max(terms)
    return m + math.log(sum(math.exp(v - m) for v in terms))


def brute_force_best_label(log_probs, blank: int | None = None) -> tuple[list[int], float]:
    """Most probable collapsed label by exhaustive enumeration (test oracle)."""
    lp = _as_array(log_probs)
    steps, classes = lp.shape
    blank = classes - 1 if blank is None else blank
    if classes**steps > BRUTE_FORCE_LIMIT:
        raise ValueError("instance too large for enumeration")
    mass: dict[tuple[int, ...], float] = {}
    for path in itertools.product(range(classes), repeat=steps):
        key = tuple(collapse(path, blank))
        mass[key] = mass.get(key, 0.0) + math.exp(sum(lp[t, k] for t, k in enumerate(path)))
    best = max(mass, key=lambda k: (mass[k], -len(k)))
    return list(best), math.log(mass[best])


def greedy_decode(log_probs, blank: int | None = None) -> list[list[int]]:
    """Best-path decoding of a (T, N, K) tensor: per-frame argmax, collapse."""
    lp = _as_array(log_probs)
    if lp.ndim == 2:
        lp = lp[:, None, :]
    blank = lp.shape[2] - 1 if blank is None else blank
    best = lp.argmax(axis=2)  # ties -> lowest index
    return [collapse(best[:, i], blank) for i in range(lp.shape[1])]


def _beam_single(lp: np.ndarray, beam_width: int, blank: int) -> list[int]:
    steps, classes = lp.shape
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG]}  # prefix -> [log p_blank, log p_nonblank]
    for t in range(steps):
        row = lp[t]
        nxt: dict[tuple[int, ...], list[float]] = {}

        def slot(prefix):
            s = nxt.get(prefix)
            if s is None:
                s = nxt[prefix] = [NEG, NEG]
            return s

        for prefix, (pb, pnb) in beams.items():
            total = float(_lse(pb, pnb))
            s = slot(prefix)
            s[0] = float(_lse(s[0], total + row[blank]))
            last = prefix[-1] if prefix else None
            for k in range(classes):
                if k == blank:
                    continue
                p = row[k]
                ext = slot(prefix + (k,))
                if k == last:
                    # a repeat only extends the prefix after a blank
                    ext[1] = float(_lse(ext[1], pb + p))
                    s[1] = float(_lse(s[1], pnb + p))
                else:
                    ext[1] = float(_lse(ext[1], total + p))
        ranked = sorted(nxt.items(), key=lambda kv: (-float(_lse(*kv[1])), len(kv[0]), kv[0]))
        beams = dict(ranked[:beam_width])
    best = max(beams.items(), key=lambda kv: (float(_lse(*kv[1])), -len(kv[0])))[0]
    return list(best)


def beam_decode(log_probs, beam_width: int = 10, blank: int | None = None):
    """Prefix beam search.

    Accepts a (T, K) matrix (returns one index list) or a (T, N, K) batch
    (returns a list). The result is never less probable than the greedy
    best-path label under the exact summed-prefix probability.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be at least 1")
    lp = _as_array(log_probs)
    single = lp.ndim == 2
    if single:
        lp = lp[:, None, :]
    blank = lp.shape[2] - 1 if blank is None else blank
    results = []
    for i in range(lp.shape[1]):
        frames = lp[:, i, :]
        cand = _beam_single(frames, beam_width, blank)
        greedy = greedy_decode(frames, blank)[0]
        if cand != greedy and label_log_prob(frames, greedy, blank) > label_log_prob(frames, cand, blank):
            cand = greedy
        results.append(cand)
    return results[0] if single else results
