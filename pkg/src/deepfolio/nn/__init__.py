from deepfolio.nn.tensor import Tensor, NonFiniteError, ShapeError, backward
from deepfolio.nn.layers import (Module, Dense, Activation, Dropout, LSTMCell, LSTM, BiLSTM,
                                 lstm_sequence)
from deepfolio.nn.optim import SGD, Adam, RMSProp, make_optimizer, clip_global_norm
from deepfolio.nn.losses import mse, binary_log_loss, losses

__all__ = [
    "Tensor", "NonFiniteError", "ShapeError", "backward",
    "Module", "Dense", "Activation", "Dropout", "LSTMCell", "LSTM", "BiLSTM", "lstm_sequence",
    "SGD", "Adam", "RMSProp", "make_optimizer", "clip_global_norm",
    "mse", "binary_log_loss", "losses",
]
