"""Float64 tensors, reverse-mode autodiff, FFT helpers and a seeded RNG."""

from .rng import XorShift64Star
from .signal import autocorrelation, correlation_scores, cross_correlation, delay_aggregate, irfft, rfft
from .tensor import (
    GraphError,
    ShapeError,
    Tensor,
    concat,
    gelu,
    layer_norm,
    mse_loss,
    no_grad,
    relu,
    roll,
    set_debug,
    softmax,
    stack,
    take_along_axis,
    tensor,
)

__all__ = [
    "XorShift64Star",
    "GraphError",
    "ShapeError",
    "Tensor",
    "autocorrelation",
    "concat",
    "correlation_scores",
    "cross_correlation",
    "delay_aggregate",
    "gelu",
    "irfft",
    "layer_norm",
    "mse_loss",
    "no_grad",
    "relu",
    "rfft",
    "roll",
    "set_debug",
    "softmax",
    "stack",
    "take_along_axis",
    "tensor",
]
