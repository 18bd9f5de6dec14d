"""Minimal float64 autodiff with the layers both autoencoders need."""
from .conv import Conv1dParams, conv1d
from .core import (Tensor, add, as_tensor, avg_pool1d, backward, dropout, mean, mse_loss, mul,
                   no_grad, relu, sub, tensor_sum, upsample_nearest)
from .optim import Adam, OptimizerState, optimizer_step
from .serialize import load_params, save_params

__all__ = [
    "Tensor", "Conv1dParams", "conv1d", "relu", "dropout", "avg_pool1d", "upsample_nearest",
    "mse_loss", "backward", "add", "sub", "mul", "mean", "tensor_sum", "as_tensor", "no_grad",
    "Adam", "OptimizerState", "optimizer_step", "save_params", "load_params",
]
