"""From-scratch float64 tensors with reverse-mode differentiation."""

from . import nn, ops
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .ops import DimensionError
from .optim import Adam, NonFiniteGradientError
from .tensor import Parameter, Tape, Tensor, active_tape, backward

__all__ = [
    "Adam", "DimensionError", "NonFiniteGradientError", "Parameter", "Tape", "Tensor",
    "active_tape", "backward", "check_gradients", "nn", "numerical_gradient", "ops",
    "relative_error",
]
