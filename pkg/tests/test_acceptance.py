"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v -s``; the lines are
also collected into a summary section at the end of any pytest run.
"""

import itertools
import math
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from geezocr import ctc
from geezocr.cli import main as cli_main
from geezocr.data import Sample, split_by_writer, synth_generate
from geezocr.gradcheck import check_grads, rel_error
from geezocr.meta import MetaConfig, Task, adaptation_gain, make_tasks, meta_train, task_meta_gradient, word_loss_fn
from geezocr.metrics import cer, levenshtein, ned
from geezocr.nn import (
    CharCNN,
    CharCNNConfig,
    ModelParams,
    WordCRNN,
    WordCRNNConfig,
    batchnorm_forward,
    dense_forward,
    load_checkpoint,
    load_state,
    lstm_cell_step,
    save_checkpoint,
)
from geezocr.rng import make_rng
from geezocr.tensor import Tensor, conv2d, log_softmax, matmul, mean, tsum
from geezocr.train import StopTraining, TrainConfig, evaluate_char, evaluate_word, train_char, train_word

RESULTS: list[str] = []


def verdict(number, ok, detail, elapsed, limit):
    within = elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    line = f"[{status}] criterion {number}: {detail} ({elapsed:.1f}s, limit {limit:.0f}s)"
    RESULTS.append(line)
    print(line, file=sys.stderr)
    assert ok, line
    assert within, line


def random_log_probs(rng, steps, classes, n=None):
    shape = (steps, classes) if n is None else (steps, n, classes)
    logits = rng.normal(size=shape) * 2.0
    return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))


# 1 -------------------------------------------------------------------------


def test_criterion_1_ctc_matches_brute_force():
    start = time.perf_counter()
    rng = np.random.default_rng(20240101)
    worst, checked = 0.0, 0
    while checked < 250:
        steps, num_chars = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        label = rng.integers(0, num_chars, size=rng.integers(0, 4)).tolist()
        if not ctc.is_feasible(label, steps):
            continue
        lp = random_log_probs(rng, steps, num_chars + 1)
        loss = ctc.ctc_loss(Tensor(lp[:, None, :]), [label]).item()
        worst = max(worst, abs(loss + ctc.brute_force_ctc(lp, label)))
        checked += 1
    verdict(1, worst <= 1e-9, f"{checked} instances, max |diff| {worst:.2e} <= 1e-9", time.perf_counter() - start, 10)


# 2 -------------------------------------------------------------------------


def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(7)

    def rand(*shape):
        return Tensor(rng.uniform(-1, 1, shape), requires_grad=True)

    def probe(*shape):
        return Tensor(rng.uniform(-1, 1, shape))

    errors = {}
    x, w, b, p = rand(2, 2, 5, 4), rand(3, 2, 3, 3), rand(3), probe(2, 3, 5, 4)
    errors["conv2d"] = max(check_grads(lambda: tsum(conv2d(x, w, b) * p), [x, w, b]))
    x, w, b, p = rand(4, 5), rand(5, 3), rand(3), probe(4, 3)
    errors["dense"] = max(check_grads(lambda: tsum(dense_forward(x, w, b) * p), [x, w, b]))
    x, g, bt, p = rand(3, 2, 3, 2), rand(2), rand(2), probe(3, 2, 3, 2)
    errors["batchnorm"] = max(
        check_grads(lambda: tsum(batchnorm_forward(x, g, bt, True, np.zeros(2), np.ones(2)) * p), [x, g, bt])
    )
    x, h, c = rand(2, 3), rand(2, 4), rand(2, 4)
    wx, wh, b = rand(3, 16), rand(4, 16), rand(16)
    p1, p2 = probe(2, 4), probe(2, 4)

    def lstm_loss():
        h2, c2 = lstm_cell_step(x, h, c, wx, wh, b)
        return tsum(h2 * p1) + tsum(c2 * p2)

    errors["lstm_cell"] = max(check_grads(lstm_loss, [x, h, c, wx, wh, b]))
    x, p = rand(3, 6), probe(3, 6)
    errors["log_softmax"] = max(check_grads(lambda: tsum(log_softmax(x) * p), [x]))
    lp = Tensor(random_log_probs(rng, 5, 4, n=2), requires_grad=True)
    errors["ctc_loss"] = max(check_grads(lambda: ctc.ctc_loss(lp, [[0, 2], [1, 1]]), [lp], h=1e-6))

    cfg = WordCRNNConfig(
        num_classes=2, input_hw=(4, 16), block_channels=[2, 2], pool_schedule=[(2, 2), (2, 2)],
        lstm_hidden=2, lstm_layers=1, dropout=0.0,
    )
    model = WordCRNN(cfg)
    params, buffers = model.init_params(3), model.init_buffers()
    images = Tensor(rng.uniform(size=(2, 1, 4, 16)))
    micro = max(
        check_grads(
            lambda: ctc.ctc_loss(model.forward(params, buffers, images, train=False), [[0, 1], [1]]),
            list(params.values()),
        )
    )
    ok = max(errors.values()) <= 1e-5 and micro <= 1e-3
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f" (<= 1e-5); WordCRNN micro {micro:.1e} (<= 1e-3)"
    verdict(2, ok, detail, time.perf_counter() - start, 60)


# 3 -------------------------------------------------------------------------


@lru_cache(maxsize=None)
def naive_distance(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    if a[0] == b[0]:
        return naive_distance(a[1:], b[1:])
    return 1 + min(naive_distance(a[1:], b), naive_distance(a, b[1:]), naive_distance(a[1:], b[1:]))


def test_criterion_3_edit_distance_exhaustive():
    start = time.perf_counter()
    strings = ["".join(t) for k in range(7) for t in itertools.product("abc", repeat=k)]
    mismatches = 0
    for a in strings:
        for b in strings:
            d = naive_distance(a, b)
            dist, breakdown = levenshtein(a, b)
            if dist != d or breakdown.total != d:
                mismatches += 1
            longest = max(len(a), len(b))
            if longest and ned(a, b) != d / longest:
                mismatches += 1
            if a and cer(a, b) != d / len(a):
                mismatches += 1
    worked = cer("abc", "axc") == 1 / 3 and ned("abc", "ab") == 1 / 3
    pairs = len(strings) ** 2
    verdict(
        3, mismatches == 0 and worked, f"{pairs} pairs, {mismatches} mismatches, worked values exact: {worked}",
        time.perf_counter() - start, 60,
    )


# 4 -------------------------------------------------------------------------


def test_criterion_4_decoder_invariants():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    failures = 0
    for _ in range(10_000):
        steps, classes = int(rng.integers(1, 9)), int(rng.integers(2, 6))
        blank = classes - 1
        (out,) = ctc.greedy_decode(rng.normal(size=(steps, classes)))
        if blank in out:
            failures += 1
            continue
        frames = [f for sym in out for f in (sym, blank)]
        if frames:
            one_hot = np.full((len(frames), classes), ctc.NEG)
            one_hot[np.arange(len(frames)), frames] = 0.0
            failures += ctc.greedy_decode(one_hot) != [out]
    beam_misses = 0
    for _ in range(50):
        steps, classes = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        lp = random_log_probs(rng, steps, classes)
        best, best_lp = ctc.brute_force_best_label(lp)
        found = ctc.beam_decode(lp, beam_width=classes**steps)
        beam_misses += found != best or abs(ctc.label_log_prob(lp, found, classes - 1) - best_lp) > 1e-12
    verdict(
        4, failures == 0 and beam_misses == 0,
        f"greedy failures {failures}/10000, exhaustive beam misses {beam_misses}/50",
        time.perf_counter() - start, 30,
    )


# 5 -------------------------------------------------------------------------


def test_criterion_5_char_cnn_trainability():
    start = time.perf_counter()
    train, codec = synth_generate(10, 50, 10, "char", seed=42)
    held, _ = synth_generate(10, 20, 10, "char", seed=42, style_offset=100)
    model = CharCNN(CharCNNConfig(num_classes=10))
    params, buffers = model.init_params(42), model.init_buffers()
    train_char(model, params, buffers, train, codec, TrainConfig(epochs=20, batch_size=32, seed=42))
    train_acc = evaluate_char(model, params, buffers, train, codec).word_accuracy
    held_acc = evaluate_char(model, params, buffers, held, codec).word_accuracy
    verdict(
        5, train_acc >= 0.99 and held_acc >= 0.90,
        f"train accuracy {train_acc:.4f} (>= 0.99), held-out accuracy {held_acc:.4f} (>= 0.90)",
        time.perf_counter() - start, 600,
    )


# 6 -------------------------------------------------------------------------


def test_criterion_6_word_crnn_trainability():
    start = time.perf_counter()
    samples, codec = synth_generate(10, 10, 5, "word", seed=42, vocab_size=20)
    model = WordCRNN(WordCRNNConfig(num_classes=10, block_channels=[16, 32, 64, 128], lstm_hidden=64))
    params, buffers = model.init_params(42), model.init_buffers()
    seen = {"epoch": 0, "cer": math.inf}

    def check(record):
        seen["epoch"] = record["epoch"]
        if record["epoch"] % 5 == 0:
            seen["cer"] = evaluate_word(model, params, buffers, samples, codec).cer
            if seen["cer"] <= 0.05:
                raise StopTraining

    train_word(model, params, buffers, samples, codec, TrainConfig(epochs=50, batch_size=8, lr=0.002, seed=42), check)
    verdict(
        6, seen["cer"] <= 0.05, f"training CER {seen['cer']:.4f} (<= 0.05) after {seen['epoch']} epochs",
        time.perf_counter() - start, 1200,
    )


# 7 -------------------------------------------------------------------------

PRETRAIN_EPOCHS = 18
META_EPOCHS = 2


def test_criterion_7_maml_adaptation_gain():
    start = time.perf_counter()
    pool, codec = synth_generate(10, 120, 40, "word", seed=42, vocab_size=20)
    held, _ = synth_generate(10, 30, 10, "word", seed=42, vocab_size=20, style_offset=40)
    model = WordCRNN(WordCRNNConfig(num_classes=10, block_channels=[16, 32, 64, 128], lstm_hidden=64))
    params, buffers = model.init_params(42), model.init_buffers()
    # conventional warm start on 200 words from a quarter of the training styles
    warm = [s for i, s in enumerate(pool) if (i % 120) % 12 == 0]
    train_word(model, params, buffers, warm, codec, TrainConfig(epochs=PRETRAIN_EPOCHS, batch_size=8, lr=0.002, seed=42))
    cfg = MetaConfig(num_tasks=40, task_size=50, alpha=0.001, beta=0.001, meta_batch=5, epochs=META_EPOCHS)
    tasks = make_tasks(pool, cfg, make_rng(42, "meta-tasks"))
    meta_train(params, tasks, cfg, word_loss_fn(model, buffers, codec), seed=42)
    held_cfg = MetaConfig(num_tasks=10, task_size=50, alpha=0.001, beta=0.001, meta_batch=5)
    held_tasks = make_tasks(held, held_cfg, make_rng(42, "held-tasks"))
    rows = adaptation_gain(model, params, buffers, held_tasks, codec, held_cfg, seed=42)
    better = sum(r["cer_after"] < r["cer_before"] for r in rows)
    detail = f"adapted query CER lower on {better}/10 held-out tasks (>= 9); " + ", ".join(
        f"{r['cer_before']:.3f}->{r['cer_after']:.3f}" for r in rows
    )
    verdict(7, better >= 9, detail, time.perf_counter() - start, 1800)


# 8 -------------------------------------------------------------------------


def test_criterion_8_second_order_meta_gradient():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    x = rng.normal(size=(12, 2))
    y = x @ np.array([[1.5], [-0.5]]) + 0.1 * rng.normal(size=(12, 1))
    task = Task(((x[:6], y[:6]),), ((x[6:], y[6:]),), "linear")
    w0 = np.array([[0.2], [0.4]])

    def loss_fn(p, samples, _rng):
        ((xs, ys),) = samples
        r = matmul(Tensor(xs), p["w"]) - Tensor(ys)
        return mean(r * r)

    def unrolled(w, alpha):
        w = w - alpha * 2 * x[:6].T @ (x[:6] @ w - y[:6]) / 6
        return float(np.mean((x[6:] @ w - y[6:]) ** 2))

    def meta_grad(alpha, mode):
        theta = ModelParams({"w": Tensor(w0.copy(), requires_grad=True)})
        cfg = MetaConfig(alpha=alpha, mode=mode, num_tasks=1, meta_batch=1)
        return task_meta_gradient(theta, task, cfg, loss_fn, None)[1][0]

    alpha, h = 0.1, 1e-6
    numeric = np.zeros_like(w0)
    for i in range(2):
        e = np.zeros_like(w0)
        e[i] = h
        numeric[i] = (unrolled(w0 + e, alpha) - unrolled(w0 - e, alpha)) / (2 * h)
    err = rel_error(meta_grad(alpha, "second_order"), numeric)
    gaps = [np.linalg.norm(meta_grad(a, "first_order") - meta_grad(a, "second_order")) for a in (1e-2, 1e-4)]
    ok = err <= 1e-4 and gaps[1] < gaps[0]
    verdict(
        8, ok, f"relative error {err:.1e} (<= 1e-4); first/second-order gap {gaps[0]:.2e} at 1e-2 -> {gaps[1]:.2e} at 1e-4",
        time.perf_counter() - start, 5,
    )


# 9 -------------------------------------------------------------------------


def test_criterion_9_reproducibility_and_formats(tmp_path):
    start = time.perf_counter()
    model = WordCRNN(WordCRNNConfig(num_classes=5, block_channels=[4, 8, 8, 8], lstm_hidden=4))
    params, buffers = model.init_params(1), model.init_buffers()
    buffers["block1/bn1/running_mean"].data[:] = np.random.default_rng(0).normal(size=buffers["block1/bn1/running_mean"].shape)
    save_checkpoint(params, buffers, tmp_path / "m.gzoc")
    p2, b2 = load_state(model, load_checkpoint(tmp_path / "m.gzoc"))
    round_trip = all(
        np.array_equal(a[k].data, b[k].data) and a[k].data.dtype == b[k].data.dtype
        for a, b in ((params, p2), (buffers, b2))
        for k in a
    )
    save_checkpoint(p2, b2, tmp_path / "again.gzoc")
    round_trip &= (tmp_path / "m.gzoc").read_bytes() == (tmp_path / "again.gzoc").read_bytes()

    data = tmp_path / "data"
    assert cli_main(["synth", "--out", str(data), "--classes", "4", "--per-class", "4", "--styles", "2"]) == 0
    runs = []
    for name in ("a", "b"):
        argv = ["train-char", "--data", str(data), "--out", str(tmp_path / name), "--epochs", "2",
                "--batch-size", "4", "--conv-channels", "4,8", "--fc-units", "16,16", "--augment", "true"]
        assert cli_main(argv) == 0
        runs.append((tmp_path / name / "metrics.json").read_bytes())
    identical = runs[0] == runs[1]

    samples = [Sample(np.zeros((1, 1)), "a", f"w{w}", "s") for w in range(30) for _ in range(1 + w % 4)]
    disjoint = 0
    for seed in range(100):
        parts = split_by_writer(samples, rng=make_rng(seed, "split"))
        ids = [{s.writer_id for s in part} for part in parts]
        covered = sum(len(part) for part in parts) == len(samples)
        disjoint += covered and not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    ok = round_trip and identical and disjoint == 100
    verdict(
        9, ok, f"checkpoint bit-exact {round_trip}, metrics JSON byte-identical {identical}, disjoint splits {disjoint}/100",
        time.perf_counter() - start, 60,
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
