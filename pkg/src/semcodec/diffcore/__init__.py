"""Minimal reverse-mode autodiff over numpy float64, plus Adam and a
finite-difference gradient checker."""

from .gradcheck import GradCheckReport, grad_check
from .ops import (concat_channels, conv1d, conv_transpose1d, linear, mse,
                  straight_through)
from .optim import Adam
from .tensor import Tensor, constant, grad_enabled, no_grad, parameter

__all__ = [
    "Tensor", "constant", "parameter", "no_grad", "grad_enabled",
    "conv1d", "conv_transpose1d", "linear", "concat_channels", "mse",
    "straight_through", "Adam", "grad_check", "GradCheckReport",
]
