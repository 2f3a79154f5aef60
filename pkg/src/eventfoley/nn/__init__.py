"""Minimal reverse-mode numeric substrate: ops, layers, parameters, gradient checks."""

from .gradcheck import NumericError, grad_check, numeric_grad
from .layers import MLP, LSTM, Activation, BiLSTM, Conv1d, ConvTranspose1d, Linear
from .ops import ShapeError
from .params import ParamStore, load_checkpoint, random_source, save_checkpoint

__all__ = [
    "MLP", "LSTM", "Activation", "BiLSTM", "Conv1d", "ConvTranspose1d", "Linear",
    "NumericError", "ParamStore", "ShapeError", "grad_check", "load_checkpoint",
    "numeric_grad", "random_source", "save_checkpoint",
]
