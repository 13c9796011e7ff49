"""Tensor algebra, reverse-mode differentiation, PRNG and optimizer."""
from .adam import AdamState, adam_step
from .gradcheck import finite_diff_check
from .ops import (
    RunningStats,
    activation,
    add,
    batch_norm,
    clamp_min,
    concat_rows,
    conv2d,
    conv2d_transpose,
    dense,
    exp,
    leaky_relu,
    linear_combination,
    log,
    logsumexp_channels,
    masked_mean,
    mean,
    mul,
    relu,
    reshape,
    scale,
    slice_rows,
    softmax_channels,
    square,
    sub,
    take_channels,
    tanh,
    total,
)
from .prng import Prng, prng_uniform
from .tensor import GradientTape, Tensor, backward

__all__ = [
    "AdamState", "GradientTape", "Prng", "RunningStats", "Tensor",
    "activation", "adam_step", "add", "backward", "batch_norm", "clamp_min", "concat_rows",
    "conv2d", "conv2d_transpose", "dense", "exp", "finite_diff_check",
    "leaky_relu", "linear_combination", "log", "logsumexp_channels",
    "masked_mean", "mean", "mul", "prng_uniform", "relu", "reshape", "scale", "slice_rows",
    "softmax_channels", "square", "sub", "take_channels", "tanh", "total",
]
