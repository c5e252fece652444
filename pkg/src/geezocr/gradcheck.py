"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to the values of ``x``.

    ``x.data`` is perturbed in place and restored afterwards.
    """
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn().item()
        flat[i] = orig - h
        down = fn().item()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return out.reshape(x.shape)


def analytic_grads(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    with Tape() as tape:
        loss = fn()
    return [g.data for g in tape.gradient(loss, params)]


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ``|a-b| / max(|a|, |b|)``; 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_grads(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> list[float]:
    """Relative error between analytic and numerical gradients, one per parameter."""
    analytic = analytic_grads(fn, params)
    return [rel_error(a, numerical_grad(fn, p, h)) for a, p in zip(analytic, params)]
