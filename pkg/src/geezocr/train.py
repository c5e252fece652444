"""Conventional (non-meta) training, prediction and evaluation loops."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ctc
from .data.codec import LabelCodec
from .data.dataset import Sample, stack_images
from .data.transforms import AugmentParams, augment
from .metrics import MetricsReport, aligned_pairs, confusion_matrix, evaluate_strings
from .nn.models import CharCNN, WordCRNN
from .nn.optim import Adam
from .nn.params import ModelParams
from .rng import make_rng
from .tensor import Tape, Tensor, gather_flat

logger = logging.getLogger(__name__)


class StopTraining(Exception):
    """Raised from an ``on_epoch`` callback to end training after that epoch."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.001
    augment: bool = False
    seed: int = 42


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None, min_batch: int = 1) -> list[np.ndarray]:
    """Shuffled index batches; a tail smaller than ``min_batch`` is folded into the previous batch."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_batch:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def nll_loss(log_probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under (N, K) log-probabilities."""
    n, k = log_probs.shape
    picked = gather_flat(log_probs, np.arange(n) * k + np.asarray(targets, dtype=np.int64))
    return -picked.mean()


def _augmented(samples: Sequence[Sample], params: AugmentParams, rng: np.random.Generator) -> list[Sample]:
    return [augment(s, params, rng) for s in samples]


def _fit(
    params: ModelParams,
    loss_fn: Callable[[list[int], np.random.Generator], Tensor],
    n: int,
    cfg: TrainConfig,
    min_batch: int,
    on_epoch: Callable[[dict], None] | None,
) -> list[dict]:
    opt = Adam(cfg.lr)
    names = list(params)
    history = []
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        rng = make_rng(cfg.seed, "epoch", epoch)
        total, seen = 0.0, 0
        for batch in iterate_batches(n, cfg.batch_size, rng, min_batch):
            with Tape() as tape:
                loss = loss_fn(list(batch), rng)
            grads = tape.gradient(loss, params.values())
            opt.step(params, dict(zip(names, grads)))
            total += loss.item() * len(batch)
            seen += len(batch)
        record = {"epoch": epoch, "loss": total / seen, "wall_time": time.perf_counter() - start}
        history.append(record)
        logger.info("epoch %d loss %.5f (%.1fs)", epoch, record["loss"], record["wall_time"])
        if on_epoch is not None:
            try:
                on_epoch(record)
            except StopTraining:
                break
    return history


# -- character classifier ----------------------------------------------------


def class_targets(samples: Sequence[Sample], codec: LabelCodec) -> np.ndarray:
    out = []
    for s in samples:
        if len(s.label) != 1:
            raise ValueError(f"character samples need single-character labels, got {s.label!r}")
        out.append(codec.encode(s.label)[0])
    return np.array(out, dtype=np.int64)


def train_char(
    model: CharCNN,
    params: ModelParams,
    buffers: ModelParams,
    samples: Sequence[Sample],
    codec: LabelCodec,
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    targets = class_targets(samples, codec)
    aug = AugmentParams()

    def loss_fn(batch, rng):
        chosen = [samples[i] for i in batch]
        if cfg.augment:
            chosen = _augmented(chosen, aug, rng)
        logp = model.forward(params, buffers, Tensor(stack_images(chosen)), train=True, rng=rng)
        return nll_loss(logp, targets[batch])

    return _fit(params, loss_fn, len(samples), cfg, 1, on_epoch)


def predict_char(model: CharCNN, params, buffers, samples: Sequence[Sample], batch_size: int = 128) -> np.ndarray:
    preds = []
    for i in range(0, len(samples), batch_size):
        x = Tensor(stack_images(samples[i : i + batch_size]))
        preds.append(model.forward(params, buffers, x, train=False).data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate_char(model: CharCNN, params, buffers, samples: Sequence[Sample], codec: LabelCodec) -> MetricsReport:
    """Classification metrics; ``word_accuracy`` is the plain accuracy here."""
    targets = class_targets(samples, codec)
    preds = predict_char(model, params, buffers, samples)
    pairs = [(s.label, codec.chars[int(p)]) for s, p in zip(samples, preds)]
    conf = confusion_matrix(zip(targets.tolist(), preds.tolist()), len(codec))
    return evaluate_strings(pairs, confusion=conf)


# -- word recognizer ---------------------------------------------------------


def word_ctc_loss(
    model: WordCRNN,
    params: ModelParams,
    buffers: ModelParams,
    samples: Sequence[Sample],
    codec: LabelCodec,
    train: bool,
    rng: np.random.Generator | None,
    bn_train: bool | None = None,
) -> Tensor:
    logp = model.forward(params, buffers, Tensor(stack_images(samples)), train=train, rng=rng, bn_train=bn_train)
    labels = [codec.encode(s.label) for s in samples]
    return ctc.ctc_loss(logp, labels, blank=model.config.blank_index)


def train_word(
    model: WordCRNN,
    params: ModelParams,
    buffers: ModelParams,
    samples: Sequence[Sample],
    codec: LabelCodec,
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    if len(codec) != model.config.num_classes:
        raise ValueError(f"charset has {len(codec)} characters, model expects {model.config.num_classes}")
    aug = AugmentParams()

    def loss_fn(batch, rng):
        chosen = [samples[i] for i in batch]
        if cfg.augment:
            chosen = _augmented(chosen, aug, rng)
        return word_ctc_loss(model, params, buffers, chosen, codec, True, rng)

    return _fit(params, loss_fn, len(samples), cfg, 2, on_epoch)


def decode_words(
    model: WordCRNN,
    params,
    buffers,
    samples: Sequence[Sample],
    codec: LabelCodec,
    decoder: str = "greedy",
    beam_width: int = 10,
    batch_size: int = 64,
) -> list[str]:
    blank = model.config.blank_index
    out: list[str] = []
    for i in range(0, len(samples), batch_size):
        logp = model.forward(params, buffers, Tensor(stack_images(samples[i : i + batch_size])), train=False).data
        if decoder == "greedy":
            seqs = ctc.greedy_decode(logp, blank)
        elif decoder == "beam":
            seqs = ctc.beam_decode(logp, beam_width, blank)
        else:
            raise ValueError(f"unknown decoder {decoder!r}")
        out.extend(codec.decode(s) for s in seqs)
    return out


def word_report(pairs: Sequence[tuple[str, str]], codec: LabelCodec, skipped: int = 0) -> MetricsReport:
    """String metrics plus an aligned character confusion matrix.

    The matrix is (C+1) x (C+1); index C stands for "no character", so
    deletions land in column C and insertions in row C.
    """
    gap = len(codec)
    counts = np.zeros((gap + 1, gap + 1), dtype=np.int64)
    for gt, pred in pairs:
        aligned = aligned_pairs(codec.encode(gt), codec.encode(pred), gap)
        counts += confusion_matrix(aligned, gap + 1)
    return evaluate_strings(pairs, confusion=counts, skipped=skipped)


def evaluate_word(
    model: WordCRNN,
    params,
    buffers,
    samples: Sequence[Sample],
    codec: LabelCodec,
    decoder: str = "greedy",
    beam_width: int = 10,
) -> MetricsReport:
    preds = decode_words(model, params, buffers, samples, codec, decoder, beam_width)
    frames = model.config.time_steps
    skipped = sum(1 for s in samples if not ctc.is_feasible(codec.encode(s.label), frames))
    return word_report([(s.label, p) for s, p in zip(samples, preds)], codec, skipped)
