"""Minimal reverse-mode autodiff for the toy networks."""
from .gradcheck import finite_diff_check, numerical_grad
from .ops import (
    conv2d,
    conv_output_size,
    global_avg_pool,
    linear,
    log_softmax,
    max_pool2d,
    relu,
    softmax_cross_entropy_masked,
    upsample_nearest,
)
from .tensor import Tape, Tensor, add, backward, mul, sum_all

__all__ = [
    "Tape", "Tensor", "add", "backward", "mul", "sum_all",
    "conv2d", "conv_output_size", "global_avg_pool", "linear", "log_softmax",
    "max_pool2d", "relu", "softmax_cross_entropy_masked", "upsample_nearest",
    "finite_diff_check", "numerical_grad",
]
