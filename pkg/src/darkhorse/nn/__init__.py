from darkhorse.nn.checkpoint import CheckpointError, load_params, save_params
from darkhorse.nn.gradcheck import grad_check, numeric_grad, relative_error
from darkhorse.nn.layers import (
    GRU,
    Conv1D,
    Dense,
    Layer,
    LocalConv1D,
    MaxPool1D,
    Param,
    ReLU,
    ShapeError,
    Sigmoid,
    Softmax,
    WeightedCrossEntropy,
)

__all__ = [
    "GRU",
    "CheckpointError",
    "Conv1D",
    "Dense",
    "Layer",
    "LocalConv1D",
    "MaxPool1D",
    "Param",
    "ReLU",
    "ShapeError",
    "Sigmoid",
    "Softmax",
    "WeightedCrossEntropy",
    "grad_check",
    "load_params",
    "numeric_grad",
    "relative_error",
    "save_params",
]
