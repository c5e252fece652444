from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..tensor import Tensor
from .params import ModelParams


def _grad_array(grads: Mapping, name: str) -> np.ndarray:
    try:
        g = grads[name]
    except KeyError:
        raise ValueError(f"missing gradient for parameter {name!r}") from None
    return g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)


class SGD:
    """theta <- theta - lr * g"""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ModelParams, grads: Mapping) -> ModelParams:
        for name, p in params.items():
            p.data = p.data - self.lr * _grad_array(grads, name)
        return params


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias-corrected moments."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    def step(self, params: ModelParams, grads: Mapping) -> ModelParams:
        s = self.state
        arrays = {name: _grad_array(grads, name) for name in params}
        s.step += 1
        c1 = 1.0 - s.beta1**s.step
        c2 = 1.0 - s.beta2**s.step
        for name, p in params.items():
            g = arrays[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
            m = s.m.get(name)
            if m is None:
                m = s.m[name] = np.zeros_like(p.data)
                s.v[name] = np.zeros_like(p.data)
            v = s.v[name]
            m *= s.beta1
            m += (1 - s.beta1) * g
            v *= s.beta2
            v += (1 - s.beta2) * g * g
            p.data = p.data - s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)
        return params


def optimizer_step(params: ModelParams, grads: Mapping, optimizer) -> ModelParams:
    return optimizer.step(params, grads)
