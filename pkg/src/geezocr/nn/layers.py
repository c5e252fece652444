"""Layer primitives shared by the character and word models.

Every function is stateless apart from batch-norm running statistics, which
live in numpy arrays passed in by the caller and are updated in place during
train-mode forward passes.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .. import tensor as T
from ..tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def dense_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"dense shapes disagree: x{x.shape} w{w.shape} b{b.shape}")
    return T.matmul(x, w) + b


def batchnorm_forward(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    train: bool,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization of an (N, C, H, W) tensor.

    In train mode the batch statistics are used and the running statistics
    are moved toward them (``running = momentum * running + (1 - momentum) * batch``);
    in eval mode the running statistics are used.
    """
    if x.ndim != 4:
        raise ValueError("batchnorm expects a rank-4 tensor")
    c = x.shape[1]
    shape = (1, c, 1, 1)
    if train:
        n = x.shape[0]
        if n < 2:
            raise ValueError("train-mode batch norm needs a batch of at least 2")
        mu = T.mean(x, (0, 2, 3), keepdims=True)
        centered = x - mu
        var = T.mean(centered * centered, (0, 2, 3), keepdims=True)
        count = x.size // c
        running_mean *= momentum
        running_mean += (1 - momentum) * mu.data.reshape(c)
        running_var *= momentum
        running_var += (1 - momentum) * var.data.reshape(c) * count / (count - 1)
        xhat = centered * T.power(var + eps, -0.5)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(shape)) * inv.reshape(shape)
    return xhat * T.reshape(gamma, shape) + T.reshape(beta, shape)


def dropout_forward(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return x * keep


def _lstm_gates(z: Tensor, c_prev: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    i = z[:, 0:hidden].sigmoid()
    f = z[:, hidden : 2 * hidden].sigmoid()
    g = z[:, 2 * hidden : 3 * hidden].tanh()
    o = z[:, 3 * hidden : 4 * hidden].sigmoid()
    c = f * c_prev + i * g
    h = o * c.tanh()
    return h, c


def lstm_cell_step(
    x_t: Tensor, h_prev: Tensor, c_prev: Tensor, wx: Tensor, wh: Tensor, b: Tensor
) -> tuple[Tensor, Tensor]:
    """One LSTM step. Gate blocks in ``wx``/``wh``/``b`` are ordered i, f, g, o."""
    hidden = wh.shape[0]
    if (
        x_t.shape[1] != wx.shape[0]
        or wx.shape[1] != 4 * hidden
        or wh.shape != (hidden, 4 * hidden)
        or h_prev.shape != (x_t.shape[0], hidden)
        or c_prev.shape != h_prev.shape
    ):
        raise ValueError("lstm cell shapes disagree")
    z = T.matmul(x_t, wx) + T.matmul(h_prev, wh) + b
    return _lstm_gates(z, c_prev, hidden)


def _lstm_direction(seq: Tensor, w: Mapping[str, Tensor], reverse: bool) -> list[Tensor]:
    steps, n, d = seq.shape
    wx, wh, b = w["wx"], w["wh"], w["b"]
    hidden = wh.shape[0]
    # input projection for all steps at once
    proj = T.reshape(T.matmul(T.reshape(seq, (steps * n, d)), wx) + b, (steps, n, 4 * hidden))
    h = Tensor(np.zeros((n, hidden)))
    c = Tensor(np.zeros((n, hidden)))
    outs: list[Tensor | None] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        z = proj[t] + T.matmul(h, wh)
        h, c = _lstm_gates(z, c, hidden)
        outs[t] = h
    return outs


def bilstm_forward(
    seq: Tensor,
    layer_weights: Sequence[Mapping[str, Mapping[str, Tensor]]],
    dropout: float,
    train: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    """Stacked bidirectional LSTM over a (T, N, d) sequence.

    ``layer_weights[k]`` holds ``{"fwd": {...}, "bwd": {...}}`` with keys wx, wh, b.
    Each layer's output is ``[h_fwd; h_bwd]`` per step, followed by dropout.
    """
    if seq.ndim != 3 or seq.shape[0] < 1:
        raise ValueError("bilstm expects a non-empty (T, N, d) sequence")
    x = seq
    for weights in layer_weights:
        fwd = _lstm_direction(x, weights["fwd"], reverse=False)
        bwd = _lstm_direction(x, weights["bwd"], reverse=True)
        steps = [T.concat([hf, hb], axis=1) for hf, hb in zip(fwd, bwd)]
        n, width = steps[0].shape
        x = T.reshape(T.concat(steps, axis=0), (len(steps), n, width))
        x = dropout_forward(x, dropout, train, rng)
    return x


def residual_block_forward(
    x: Tensor,
    params: Mapping[str, Tensor],
    buffers: Mapping[str, Tensor],
    prefix: str,
    pool: tuple[int, int],
    dropout: float,
    train: bool,
    bn_train: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    """conv-BN-ReLU-conv-BN, plus skip (1x1 projection when channels change), ReLU, pool, dropout."""

    def bn(h, name):
        return batchnorm_forward(
            h,
            params[f"{prefix}/{name}/gamma"],
            params[f"{prefix}/{name}/beta"],
            bn_train,
            buffers[f"{prefix}/{name}/running_mean"].data,
            buffers[f"{prefix}/{name}/running_var"].data,
        )

    w1 = params[f"{prefix}/conv1/w"]
    if x.shape[1] != w1.shape[1]:
        raise ValueError(f"{prefix}: input has {x.shape[1]} channels, block expects {w1.shape[1]}")
    h = T.conv2d(x, w1, params[f"{prefix}/conv1/b"])
    h = bn(h, "bn1").relu()
    h = T.conv2d(h, params[f"{prefix}/conv2/w"], params[f"{prefix}/conv2/b"])
    h = bn(h, "bn2")
    proj = params.get(f"{prefix}/proj/w")
    skip = T.conv1x1(x, proj) if proj is not None else x
    y = (h + skip).relu()
    y = T.maxpool2d(y, *pool)
    return dropout_forward(y, dropout, train, rng)
