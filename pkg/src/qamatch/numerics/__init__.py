"""Tensor tape, LSTM kernels, Adam, seeded randomness and checkpoints."""

from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, AdamState
from .rng import RandomSource
from .tensor import (
    Parameter,
    Tensor,
    add,
    backward,
    blend,
    concat,
    cross_entropy,
    dropout,
    index,
    lstm_cell,
    lstm_sequence,
    lstm_step,
    masked_softmax,
    matmul,
    mean,
    mul,
    reshape,
    sigmoid,
    softmax,
    sub,
    take,
    tanh,
    tsum,
)

__all__ = [
    "Adam", "AdamState", "Parameter", "RandomSource", "Tensor", "add", "backward", "blend",
    "concat", "cross_entropy", "dropout", "index", "kernels", "load_checkpoint", "lstm_cell",
    "lstm_sequence", "lstm_step", "masked_softmax", "matmul", "mean", "mul", "reshape",
    "save_checkpoint", "sigmoid", "softmax", "sub", "take", "tanh", "tsum",
]
