"""The character classifier (CharCNN) and the word recognizer (WordCRNN).

Models are stateless descriptions: parameters and batch-norm buffers are
separate :class:`ModelParams` so the meta-learner can clone and adapt them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as T
from ..rng import make_rng
from ..tensor import Tensor
from .checkpoint import CheckpointError
from .layers import bilstm_forward, dense_forward, dropout_forward, residual_block_forward
from .params import ModelParams


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _check_images(images: Tensor, hw: tuple[int, int]) -> None:
    if images.ndim != 4 or images.shape[1] != 1 or tuple(images.shape[2:]) != tuple(hw):
        raise ValueError(f"expected images of shape (N, 1, {hw[0]}, {hw[1]}), got {images.shape}")


@dataclass
class CharCNNConfig:
    num_classes: int = 182
    input_hw: tuple[int, int] = (28, 28)
    conv_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    fc_units: list[int] = field(default_factory=lambda: [512, 256])
    dropout_fc: float = 0.5

    def __post_init__(self):
        self.input_hw = tuple(self.input_hw)
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if any(b <= a for a, b in zip(self.conv_channels, self.conv_channels[1:])):
            raise ValueError("conv_channels must be strictly increasing")

    def flat_size(self) -> tuple[int, int]:
        h, w = self.input_hw
        for _ in self.conv_channels:
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ValueError(f"input {self.input_hw} too small for {len(self.conv_channels)} pooling stages")
        return h, w


class CharCNN:
    """Conv(3x3)+ReLU+maxpool(2x2) stages, two ReLU dense layers with dropout, softmax head."""

    kind = "char"

    def __init__(self, config: CharCNNConfig | None = None):
        self.config = config or CharCNNConfig()

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        cfg = self.config
        shapes = []
        c_in = 1
        for i, c in enumerate(cfg.conv_channels, 1):
            shapes += [(f"conv{i}/w", (c, c_in, 3, 3)), (f"conv{i}/b", (c,))]
            c_in = c
        h, w = cfg.flat_size()
        d = c_in * h * w
        for i, units in enumerate(cfg.fc_units, 1):
            shapes += [(f"fc{i}/w", (d, units)), (f"fc{i}/b", (units,))]
            d = units
        shapes += [("out/w", (d, cfg.num_classes)), ("out/b", (cfg.num_classes,))]
        return shapes

    def buffer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return []

    def init_params(self, seed: int) -> ModelParams:
        params = ModelParams()
        for name, shape in self.param_shapes():
            if name.endswith("/b"):
                data = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                data = he_uniform(make_rng(seed, "init", name), shape, fan_in)
            params[name] = Tensor(data, requires_grad=True)
        return params

    def init_buffers(self) -> ModelParams:
        return ModelParams()

    def forward(
        self,
        params: ModelParams,
        buffers: ModelParams,
        images: Tensor,
        train: bool = False,
        rng: np.random.Generator | None = None,
        bn_train: bool | None = None,
    ) -> Tensor:
        """(N, 1, 28, 28) images -> (N, num_classes) log-probabilities."""
        cfg = self.config
        _check_images(images, cfg.input_hw)
        x = images
        for i in range(1, len(cfg.conv_channels) + 1):
            x = T.conv2d(x, params[f"conv{i}/w"], params[f"conv{i}/b"]).relu()
            x = T.maxpool2d(x, 2, 2)
        x = T.reshape(x, (x.shape[0], -1))
        for i in range(1, len(cfg.fc_units) + 1):
            x = dense_forward(x, params[f"fc{i}/w"], params[f"fc{i}/b"]).relu()
            x = dropout_forward(x, cfg.dropout_fc, train, rng)
        logits = dense_forward(x, params["out/w"], params["out/b"])
        return T.log_softmax(logits, axis=1)


@dataclass
class WordCRNNConfig:
    num_classes: int = 182
    input_hw: tuple[int, int] = (32, 128)
    block_channels: list[int] = field(default_factory=lambda: [64, 128, 256, 512])
    pool_schedule: list[tuple[int, int]] = field(default_factory=lambda: [(2, 2), (2, 2), (2, 1), (2, 1)])
    lstm_hidden: int = 256
    lstm_layers: int = 2
    dropout: float = 0.25

    def __post_init__(self):
        self.input_hw = tuple(self.input_hw)
        self.pool_schedule = [tuple(p) for p in self.pool_schedule]
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if len(self.pool_schedule) != len(self.block_channels):
            raise ValueError("pool_schedule needs one entry per residual block")
        self.feature_shape()

    @property
    def blank_index(self) -> int:
        return self.num_classes

    @property
    def output_classes(self) -> int:
        return self.num_classes + 1

    def feature_shape(self) -> tuple[int, int]:
        """(height, time steps) of the final feature map."""
        h, w = self.input_hw
        for ph, pw in self.pool_schedule:
            h, w = h // ph, w // pw
        if h < 1 or w < 1:
            raise ValueError(f"pool schedule collapses input {self.input_hw} to nothing")
        return h, w

    @property
    def time_steps(self) -> int:
        return self.feature_shape()[1]

    def to_dict(self) -> dict:
        return asdict(self)


class WordCRNN:
    """Residual CNN feature extractor, stacked BiLSTM, per-frame softmax over charset + blank."""

    kind = "word"

    def __init__(self, config: WordCRNNConfig | None = None):
        self.config = config or WordCRNNConfig()

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        cfg = self.config
        shapes = []
        c_in = 1
        for i, c in enumerate(cfg.block_channels, 1):
            p = f"block{i}"
            shapes += [
                (f"{p}/conv1/w", (c, c_in, 3, 3)),
                (f"{p}/conv1/b", (c,)),
                (f"{p}/bn1/gamma", (c,)),
                (f"{p}/bn1/beta", (c,)),
                (f"{p}/conv2/w", (c, c, 3, 3)),
                (f"{p}/conv2/b", (c,)),
                (f"{p}/bn2/gamma", (c,)),
                (f"{p}/bn2/beta", (c,)),
            ]
            if c != c_in:
                shapes.append((f"{p}/proj/w", (c, c_in)))
            c_in = c
        height, _ = cfg.feature_shape()
        d = c_in * height
        hid = cfg.lstm_hidden
        for k in range(1, cfg.lstm_layers + 1):
            for direction in ("fwd", "bwd"):
                p = f"lstm{k}/{direction}"
                shapes += [(f"{p}/wx", (d, 4 * hid)), (f"{p}/wh", (hid, 4 * hid)), (f"{p}/b", (4 * hid,))]
            d = 2 * hid
        shapes += [("fc/w", (d, cfg.output_classes)), ("fc/b", (cfg.output_classes,))]
        return shapes

    def buffer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        for i, c in enumerate(self.config.block_channels, 1):
            for bn in ("bn1", "bn2"):
                shapes += [(f"block{i}/{bn}/running_mean", (c,)), (f"block{i}/{bn}/running_var", (c,))]
        return shapes

    def init_params(self, seed: int) -> ModelParams:
        hid = self.config.lstm_hidden
        params = ModelParams()
        for name, shape in self.param_shapes():
            leaf = name.rsplit("/", 1)[-1]
            rng = make_rng(seed, "init", name)
            if name.startswith("lstm"):
                if leaf == "b":
                    data = np.zeros(shape)
                    data[hid : 2 * hid] = 1.0  # forget gate
                else:
                    bound = 1.0 / np.sqrt(hid)
                    data = rng.uniform(-bound, bound, size=shape)
            elif leaf == "gamma":
                data = np.ones(shape)
            elif leaf in ("b", "beta"):
                data = np.zeros(shape)
            elif len(shape) == 4:
                data = he_uniform(rng, shape, int(np.prod(shape[1:])))
            elif name.endswith("proj/w"):
                data = he_uniform(rng, shape, shape[1])
            else:
                data = he_uniform(rng, shape, shape[0])
            params[name] = Tensor(data, requires_grad=True)
        return params

    def init_buffers(self) -> ModelParams:
        buffers = ModelParams()
        for name, shape in self.buffer_shapes():
            buffers[name] = Tensor(np.zeros(shape) if name.endswith("mean") else np.ones(shape))
        return buffers

    def features(
        self, params, buffers, images: Tensor, train: bool, rng, bn_train: bool
    ) -> Tensor:
        """CNN stage: images -> (T, N, height*channels) sequence."""
        cfg = self.config
        x = images
        for i, pool in enumerate(cfg.pool_schedule, 1):
            x = residual_block_forward(x, params, buffers, f"block{i}", pool, cfg.dropout, train, bn_train, rng)
        n, c, h, w = x.shape
        # width becomes time; channels and height are collapsed per step
        x = T.transpose(x, (3, 0, 1, 2))
        return T.reshape(x, (w, n, c * h))

    def forward(
        self,
        params: ModelParams,
        buffers: ModelParams,
        images: Tensor,
        train: bool = False,
        rng: np.random.Generator | None = None,
        bn_train: bool | None = None,
    ) -> Tensor:
        """(N, 1, 32, 128) images -> (T, N, C+1) per-frame log-probabilities."""
        cfg = self.config
        _check_images(images, cfg.input_hw)
        if bn_train is None:
            bn_train = train
        seq = self.features(params, buffers, images, train, rng, bn_train)
        layers = [
            {d: {k: params[f"lstm{i}/{d}/{k}"] for k in ("wx", "wh", "b")} for d in ("fwd", "bwd")}
            for i in range(1, cfg.lstm_layers + 1)
        ]
        seq = bilstm_forward(seq, layers, cfg.dropout, train, rng)
        steps, n, d = seq.shape
        logits = dense_forward(T.reshape(seq, (steps * n, d)), params["fc/w"], params["fc/b"])
        return T.reshape(T.log_softmax(logits, axis=1), (steps, n, cfg.output_classes))


def load_state(model, entries: ModelParams, strict: bool = True) -> tuple[ModelParams, ModelParams]:
    """Split checkpoint entries into (params, buffers) for ``model``, validating names and shapes."""
    expected_params = dict(model.param_shapes())
    expected_buffers = dict(model.buffer_shapes())
    unknown = [n for n in entries if n not in expected_params and n not in expected_buffers]
    if unknown and strict:
        raise CheckpointError(f"unknown parameter name(s) for {type(model).__name__}: {unknown[:5]}")
    params, buffers = ModelParams(), ModelParams()
    for name, shape in list(expected_params.items()) + list(expected_buffers.items()):
        if name not in entries:
            raise CheckpointError(f"checkpoint is missing {name!r}")
        t = entries[name]
        if tuple(t.shape) != tuple(shape):
            raise CheckpointError(f"{name}: checkpoint shape {t.shape} != model shape {shape}")
        if name in expected_params:
            params[name] = Tensor(t.data.copy(), requires_grad=True)
        else:
            buffers[name] = Tensor(t.data.copy())
    return params, buffers
