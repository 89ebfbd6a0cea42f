"""Minimal reverse-mode differentiable array engine."""

from .array import (ContractError, DiffArray, GradTape, active_tape, as_array,
                    default_dtype, make_op, no_grad, precision)
from .contour_ops import bilinear_sample, bilinear_sample_points, circular_conv1d
from .gradcheck import GradCheckError, grad_check
from .ops import (add, add_scalar, concat, conv1d_1x1, conv2d, fully_connected,
                  getitem, layer_norm, linear, max_pool2d, mean, mul, one_minus, relu,
                  reshape, resize_bilinear, roll, scale, sigmoid, sub, sum, tanh,
                  transpose, upsample2x)

__all__ = [
    "ContractError", "DiffArray", "GradTape", "GradCheckError", "active_tape",
    "add", "add_scalar", "as_array", "bilinear_sample", "bilinear_sample_points",
    "circular_conv1d", "concat", "conv1d_1x1", "conv2d", "default_dtype",
    "fully_connected", "getitem", "grad_check", "layer_norm", "linear", "make_op",
    "max_pool2d", "mean", "mul", "no_grad", "one_minus", "precision", "relu",
    "reshape", "resize_bilinear", "roll", "scale", "sigmoid", "sub", "sum", "tanh",
    "transpose", "upsample2x",
]
