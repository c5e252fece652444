import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geezocr import ctc
from geezocr.gradcheck import rel_error
from geezocr.tensor import Tape, Tensor


def random_log_probs(rng, steps, classes, n=None):
    shape = (steps, classes) if n is None else (steps, n, classes)
    logits = rng.normal(size=shape) * 2.0
    return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))


def uniform_two_frames():
    return np.log(np.full((2, 2), 0.5))  # alphabet {a} plus blank (index 1)


def test_uniform_single_symbol_example():
    lp = uniform_two_frames()
    loss = ctc.ctc_loss(Tensor(lp[:, None, :]), [[0]])
    assert loss.item() == pytest.approx(-math.log(0.75), abs=1e-12)
    assert loss.item() == pytest.approx(0.28768207245178085, abs=1e-12)
    assert ctc.brute_force_ctc(lp, [0]) == pytest.approx(math.log(0.75), abs=1e-15)


def test_repeat_without_room_for_blank_is_infeasible():
    lp = uniform_two_frames()
    assert not ctc.is_feasible([0, 0], 2)
    with pytest.raises(ctc.CTCInfeasibleError):
        ctc.ctc_loss(Tensor(lp[:, None, :]), [[0, 0]])
    assert ctc.brute_force_ctc(lp, [0, 0]) == -math.inf


def test_infeasible_items_are_skipped_with_warning(caplog):
    rng = np.random.default_rng(0)
    lp = random_log_probs(rng, 3, 3, n=2)
    loss, grad, skipped = ctc.ctc_batch(lp, [[0, 0, 0], [1]])
    assert skipped == [0]
    assert np.all(grad[:, 0, :] == 0)
    assert loss == pytest.approx(-ctc.brute_force_ctc(lp[:, 1, :], [1]), abs=1e-12)
    assert "infeasible" in caplog.text


def test_min_frames_counts_repeats():
    assert ctc.min_frames([]) == 0
    assert ctc.min_frames([0, 1]) == 2
    assert ctc.min_frames([0, 0, 1, 1]) == 6
    assert ctc.extend_label([3, 4], blank=9).tolist() == [9, 3, 9, 4, 9]


def test_empty_label_single_frame():
    lp = np.log(np.array([[0.3, 0.7]]))
    assert ctc.brute_force_ctc(lp, []) == pytest.approx(math.log(0.7), abs=1e-15)
    assert ctc.ctc_loss(Tensor(lp[:, None, :]), [[]]).item() == pytest.approx(-math.log(0.7), abs=1e-12)


def test_brute_force_guard():
    with pytest.raises(ValueError):
        ctc.brute_force_ctc(np.zeros((7, 10)), [1])


def test_random_instance_against_oracle_and_finite_differences():
    rng = np.random.default_rng(1)
    lp = random_log_probs(rng, 4, 3)
    label = [0, 1]
    x = Tensor(lp[:, None, :].copy(), requires_grad=True)
    with Tape() as tape:
        loss = ctc.ctc_loss(x, [label])
    assert loss.item() == pytest.approx(-ctc.brute_force_ctc(lp, label), abs=1e-9)
    (g,) = tape.gradient(loss, [x])
    h = 1e-6
    num = np.zeros_like(x.data)
    for idx in np.ndindex(x.shape):
        plus, minus = x.data.copy(), x.data.copy()
        plus[idx] += h
        minus[idx] -= h
        num[idx] = (ctc.ctc_batch(plus, [label])[0] - ctc.ctc_batch(minus, [label])[0]) / (2 * h)
    assert rel_error(g.data, num) <= 1e-6


@settings(max_examples=150, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    steps=st.integers(1, 4),
    num_chars=st.integers(1, 3),
    data=st.data(),
)
def test_loss_matches_brute_force(seed, steps, num_chars, data):
    label = data.draw(st.lists(st.integers(0, num_chars - 1), max_size=3))
    lp = random_log_probs(np.random.default_rng(seed), steps, num_chars + 1)
    oracle = ctc.brute_force_ctc(lp, label)
    assert math.exp(oracle) <= 1.0 + 1e-12
    if not ctc.is_feasible(label, steps):
        assert oracle == -math.inf
        return
    loss = ctc.ctc_loss(Tensor(lp[:, None, :]), [label]).item()
    assert abs(loss + oracle) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    lp = random_log_probs(rng, 5, 3, n=2)
    labels = [[0, 1], [1, 1]]
    _, grad, _ = ctc.ctc_batch(lp, labels)
    h = 1e-6
    num = np.zeros_like(lp)
    for idx in np.ndindex(lp.shape):
        plus, minus = lp.copy(), lp.copy()
        plus[idx] += h
        minus[idx] -= h
        num[idx] = (ctc.ctc_batch(plus, labels)[0] - ctc.ctc_batch(minus, labels)[0]) / (2 * h)
    assert rel_error(grad, num) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), perm_seed=st.integers(0, 1000))
def test_batch_permutation_invariance(seed, perm_seed):
    rng = np.random.default_rng(seed)
    lp = random_log_probs(rng, 6, 4, n=4)
    labels = [[0], [1, 2], [2, 2], []]
    perm = np.random.default_rng(perm_seed).permutation(4)
    a = ctc.ctc_batch(lp, labels)[0]
    b = ctc.ctc_batch(lp[:, perm, :], [labels[i] for i in perm])[0]
    assert abs(a - b) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), pad=st.integers(1, 3))
def test_padding_with_certain_blank_frames_keeps_probability(seed, pad):
    rng = np.random.default_rng(seed)
    lp = random_log_probs(rng, 4, 3)
    blank_row = np.full((pad, 3), ctc.NEG)
    blank_row[:, 2] = 0.0
    padded = np.concatenate([lp, blank_row])
    for label in ([0], [0, 1], [1, 1]):
        if ctc.is_feasible(label, 4):
            assert abs(ctc.label_log_prob(padded, label, 2) - ctc.label_log_prob(lp, label, 2)) <= 1e-12


def test_loss_gradient_is_not_twice_differentiable():
    lp = Tensor(uniform_two_frames()[:, None, :], requires_grad=True)
    with Tape() as tape:
        loss = ctc.ctc_loss(lp, [[0]])
        with pytest.raises(Exception, match="higher-order"):
            tape.gradient(loss, [lp], create_graph=True)


# -- decoders ----------------------------------------------------------------


def one_hot_frames(path, classes):
    lp = np.full((len(path), classes), ctc.NEG)
    lp[np.arange(len(path)), path] = 0.0
    return lp


def test_greedy_collapse_example():
    a, b, blank = 0, 1, 2
    lp = one_hot_frames([a, a, blank, a, b, b], 3)
    assert ctc.greedy_decode(lp) == [[a, a, b]]
    assert ctc.greedy_decode(one_hot_frames([blank] * 4, 3)) == [[]]


def test_greedy_ties_go_to_lowest_index():
    assert ctc.greedy_decode(np.log(np.full((1, 3), 1 / 3))) == [[0]]


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), steps=st.integers(1, 8), classes=st.integers(2, 5))
def test_greedy_output_is_blank_free_and_idempotent(seed, steps, classes):
    lp = random_log_probs(np.random.default_rng(seed), steps, classes)
    blank = classes - 1
    (out,) = ctc.greedy_decode(lp)
    assert blank not in out
    frames = []
    for sym in out:
        frames += [sym, blank]
    if frames:
        assert ctc.greedy_decode(one_hot_frames(frames, classes)) == [out]


def test_beam_examples():
    assert ctc.beam_decode(uniform_two_frames(), beam_width=4) == [0]
    path = [0, 2, 0, 1, 1]
    lp = one_hot_frames(path, 3)
    assert ctc.beam_decode(lp, beam_width=5) == ctc.greedy_decode(lp)[0] == [0, 0, 1]
    with pytest.raises(ValueError):
        ctc.beam_decode(lp, beam_width=0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), steps=st.integers(1, 4), classes=st.integers(2, 3))
def test_exhaustive_beam_finds_most_probable_label(seed, steps, classes):
    lp = random_log_probs(np.random.default_rng(seed), steps, classes)
    best, best_lp = ctc.brute_force_best_label(lp)
    found = ctc.beam_decode(lp, beam_width=classes**steps)
    assert ctc.label_log_prob(lp, found, classes - 1) == pytest.approx(best_lp, abs=1e-12)
    assert found == best


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), width=st.integers(1, 4))
def test_beam_never_worse_than_greedy(seed, width):
    lp = random_log_probs(np.random.default_rng(seed), 6, 4)
    greedy = ctc.greedy_decode(lp)[0]
    beam = ctc.beam_decode(lp, beam_width=width)
    assert ctc.label_log_prob(lp, beam, 3) >= ctc.label_log_prob(lp, greedy, 3) - 1e-12


def test_batch_decoders_return_one_result_per_item():
    lp = random_log_probs(np.random.default_rng(3), 5, 3, n=4)
    assert len(ctc.greedy_decode(lp)) == 4
    assert len(ctc.beam_decode(lp, beam_width=3)) == 4
