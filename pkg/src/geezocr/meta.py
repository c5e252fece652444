"""Model-agnostic meta-learning over handwriting-style tasks.

A task is a set of samples from one style, split into a support set (used to
adapt) and a query set (used to score the adapted parameters). The outer loop
learns an initialization that adapts well after a few inner steps.

Two modes:

* ``first_order``: the inner loop runs Adam on a detached clone, and the query
  gradient taken at the adapted parameters is applied to the initialization.
* ``second_order``: the inner loop runs plain gradient steps recorded on the
  tape, so the query loss is differentiated exactly through the adaptation.
  Every op in the loss must then support higher-order differentiation.
"""

from __future__ import annotations

import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data.codec import LabelCodec
from .data.dataset import Sample
from .metrics import cer as char_error_rate
from .nn.models import WordCRNN
from .nn.optim import Adam
from .nn.params import ModelParams
from .rng import make_rng
from .tensor import Tape, TapeError, Tensor, current_tape
from .train import decode_words, word_ctc_loss

logger = logging.getLogger(__name__)

MODES = ("first_order", "second_order")

# loss_fn(params, samples, rng) -> scalar Tensor
LossFn = Callable[[ModelParams, Sequence, np.random.Generator], Tensor]


@dataclass
class MetaConfig:
    num_tasks: int = 100
    task_size: int = 50
    support_fraction: float = 0.5
    inner_steps: int = 1
    alpha: float = 0.001
    beta: float = 0.001
    meta_batch: int = 5
    epochs: int = 100
    mode: str = "first_order"

    def __post_init__(self):
        if not 0.0 < self.support_fraction < 1.0:
            raise ValueError(f"support_fraction must lie in (0, 1), got {self.support_fraction}")
        if self.inner_steps < 1:
            raise ValueError(f"inner_steps must be at least 1, got {self.inner_steps}")
        if self.num_tasks < 1 or self.task_size < 2:
            raise ValueError("num_tasks must be >= 1 and task_size >= 2")
        if not 1 <= self.meta_batch <= self.num_tasks:
            raise ValueError(f"meta_batch must be in [1, num_tasks], got {self.meta_batch}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def support_size(self) -> int:
        n = int(round(self.task_size * self.support_fraction))
        return min(max(n, 1), self.task_size - 1)


@dataclass(frozen=True)
class Task:
    support: tuple
    query: tuple
    style_id: str


def group_by_style(samples: Sequence[Sample]) -> "OrderedDict[str, list[Sample]]":
    groups: OrderedDict[str, list[Sample]] = OrderedDict()
    for s in samples:
        groups.setdefault(s.style_id, []).append(s)
    return groups


def make_tasks(dataset: Sequence[Sample], cfg: MetaConfig, rng: np.random.Generator) -> list[Task]:
    """Draw ``cfg.num_tasks`` single-style tasks of ``cfg.task_size`` samples.

    With at least ``num_tasks`` styles each task gets its own style; otherwise
    styles are reused round-robin and samples are redrawn for every task.
    """
    groups = group_by_style(dataset)
    if not groups:
        raise ValueError("cannot build tasks from an empty dataset")
    small = [(style, len(g)) for style, g in groups.items() if len(g) < cfg.task_size]
    if small:
        style, n = small[0]
        raise ValueError(f"style {style!r} has {n} samples, fewer than task_size={cfg.task_size}")
    styles = list(groups)
    order = [styles[i] for i in rng.permutation(len(styles))]
    if len(order) >= cfg.num_tasks:
        chosen = order[: cfg.num_tasks]
    else:
        chosen = [order[i % len(order)] for i in range(cfg.num_tasks)]
    k = cfg.support_size
    tasks = []
    for style in chosen:
        pool = groups[style]
        idx = rng.choice(len(pool), size=cfg.task_size, replace=False)
        picked = [pool[i] for i in idx]
        tasks.append(Task(tuple(picked[:k]), tuple(picked[k:]), style))
    return tasks


def inner_adapt(
    theta: ModelParams,
    support: Sequence,
    cfg: MetaConfig,
    loss_fn: LossFn,
    rng: np.random.Generator,
) -> ModelParams:
    """Adapted parameters after ``cfg.inner_steps`` updates on ``support``.

    ``theta`` itself is never modified. In ``second_order`` mode this must run
    inside an open tape, and the result stays a differentiable function of
    ``theta``.
    """
    if len(support) == 0:
        raise ValueError("support set is empty")
    if cfg.mode == "second_order":
        tape = current_tape()
        if tape is None:
            raise TapeError("second_order adaptation needs an open tape")
        names = list(theta)
        cur = ModelParams(theta)
        for _ in range(cfg.inner_steps):
            loss = loss_fn(cur, support, rng)
            grads = tape.gradient(loss, cur.values(), create_graph=True)
            cur = ModelParams((n, cur[n] - g * cfg.alpha) for n, g in zip(names, grads))
        return cur

    cur = theta.clone(requires_grad=True)
    opt = Adam(cfg.alpha)
    names = list(cur)
    for _ in range(cfg.inner_steps):
        with Tape() as tape:
            loss = loss_fn(cur, support, rng)
        grads = tape.gradient(loss, cur.values())
        opt.step(cur, dict(zip(names, grads)))
    return cur


def task_meta_gradient(
    theta: ModelParams,
    task: Task,
    cfg: MetaConfig,
    loss_fn: LossFn,
    rng: np.random.Generator,
) -> tuple[float, list[np.ndarray]]:
    """Query loss after adaptation and its gradient with respect to ``theta``."""
    if cfg.mode == "second_order":
        live = theta.clone(requires_grad=True)
        with Tape() as tape:
            adapted = inner_adapt(live, task.support, cfg, loss_fn, rng)
            loss = loss_fn(adapted, task.query, rng)
            grads = tape.gradient(loss, live.values())
    else:
        adapted = inner_adapt(theta, task.support, cfg, loss_fn, rng)
        with Tape() as tape:
            loss = loss_fn(adapted, task.query, rng)
        grads = tape.gradient(loss, adapted.values())
    return loss.item(), [g.data for g in grads]


def meta_gradient(
    theta: ModelParams,
    tasks: Sequence[Task],
    cfg: MetaConfig,
    loss_fn: LossFn,
    rng: np.random.Generator,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean query loss and mean meta-gradient over ``tasks`` (reduced in task order)."""
    if not tasks:
        raise ValueError("task batch is empty")
    names = list(theta)
    total = {n: np.zeros_like(theta[n].data) for n in names}
    losses = []
    for i, task in enumerate(tasks):
        task_rng = make_rng(int(rng.integers(0, 2**63)), "task", i)
        loss, grads = task_meta_gradient(theta, task, cfg, loss_fn, task_rng)
        losses.append(loss)
        for n, g in zip(names, grads):
            total[n] += g
    scale = 1.0 / len(tasks)
    return float(np.mean(losses)), {n: g * scale for n, g in total.items()}


def meta_step(
    theta: ModelParams,
    tasks: Sequence[Task],
    cfg: MetaConfig,
    outer: Adam,
    loss_fn: LossFn,
    rng: np.random.Generator,
) -> tuple[ModelParams, float]:
    """One outer Adam update of ``theta`` (in place); returns ``theta`` and the mean meta-loss."""
    loss, grads = meta_gradient(theta, tasks, cfg, loss_fn, rng)
    outer.step(theta, grads)
    return theta, loss


def meta_train(
    theta: ModelParams,
    tasks: Sequence[Task],
    cfg: MetaConfig,
    loss_fn: LossFn,
    seed: int = 42,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[ModelParams, list[dict]]:
    """``cfg.epochs`` passes over shuffled tasks in meta-batches; ``theta`` is updated in place."""
    if not tasks:
        raise ValueError("no tasks to meta-train on")
    outer = Adam(cfg.beta)
    log = []
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        rng = make_rng(seed, "meta-epoch", epoch)
        order = rng.permutation(len(tasks))
        losses = []
        for lo in range(0, len(order), cfg.meta_batch):
            batch = [tasks[i] for i in order[lo : lo + cfg.meta_batch]]
            _, loss = meta_step(theta, batch, cfg, outer, loss_fn, rng)
            losses.append(loss)
        mean = float(np.mean(losses))
        if not math.isfinite(mean):
            raise FloatingPointError(f"meta-loss is not finite at epoch {epoch}")
        record = {"epoch": epoch, "meta_loss": mean, "wall_time": time.perf_counter() - start}
        log.append(record)
        logger.info("meta epoch %d loss %.5f (%.1fs)", epoch, mean, record["wall_time"])
        if on_epoch is not None:
            on_epoch(record)
    return theta, log


# -- word recognizer glue ----------------------------------------------------


def word_loss_fn(model: WordCRNN, buffers: ModelParams, codec: LabelCodec) -> LossFn:
    """CTC loss closure for meta-learning: dropout on, batch-norm statistics frozen."""
    def loss_fn(params, samples, rng):
        return word_ctc_loss(model, params, buffers, list(samples), codec, True, rng, bn_train=False)

    return loss_fn


def query_cer(model: WordCRNN, params, buffers, samples: Sequence[Sample], codec: LabelCodec) -> float:
    """Corpus CER of greedy decodes over ``samples``."""
    preds = decode_words(model, params, buffers, list(samples), codec)
    errors = sum(char_error_rate(s.label, p) * len(s.label) for s, p in zip(samples, preds))
    return errors / sum(len(s.label) for s in samples)


def adaptation_gain(
    model: WordCRNN,
    theta: ModelParams,
    buffers: ModelParams,
    tasks: Sequence[Task],
    codec: LabelCodec,
    cfg: MetaConfig,
    seed: int = 42,
) -> list[dict]:
    """Per task: query CER before and after adapting on the support set."""
    loss_fn = word_loss_fn(model, buffers, codec)
    rows = []
    for i, task in enumerate(tasks):
        before = query_cer(model, theta, buffers, task.query, codec)
        adapted = inner_adapt(theta, task.support, cfg, loss_fn, make_rng(seed, "adapt", i))
        after = query_cer(model, adapted, buffers, task.query, codec)
        rows.append({"style_id": task.style_id, "cer_before": before, "cer_after": after})
    return rows
