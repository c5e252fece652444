from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import (
    batchnorm_forward,
    bilstm_forward,
    dense_forward,
    dropout_forward,
    lstm_cell_step,
    residual_block_forward,
)
from .models import CharCNN, CharCNNConfig, WordCRNN, WordCRNNConfig, load_state
from .optim import SGD, Adam, AdamState, optimizer_step
from .params import ModelParams

__all__ = [
    "Adam",
    "AdamState",
    "CharCNN",
    "CharCNNConfig",
    "CheckpointError",
    "ModelParams",
    "SGD",
    "WordCRNN",
    "WordCRNNConfig",
    "batchnorm_forward",
    "bilstm_forward",
    "dense_forward",
    "dropout_forward",
    "load_checkpoint",
    "load_state",
    "lstm_cell_step",
    "optimizer_step",
    "residual_block_forward",
    "save_checkpoint",
]
