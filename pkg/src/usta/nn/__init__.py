"""Minimal reverse-mode autodiff for the change-detection network."""

from .layers import RunningStats, batchnorm, conv2d, maxpool2, tconv2
from .optim import AdamState, OptimizerStateError, adam_step, xavier_init, zero_grad
from .tensor import Tensor, add, backward, clip, concat_channels, default_dtype, log, mul, precision, relu, sigmoid, tsum

__all__ = [
    "AdamState", "OptimizerStateError", "RunningStats", "Tensor",
    "adam_step", "add", "backward", "batchnorm", "clip", "concat_channels", "conv2d",
    "default_dtype", "log", "maxpool2", "mul", "precision", "relu", "sigmoid", "tconv2", "tsum", "xavier_init", "zero_grad",
]
