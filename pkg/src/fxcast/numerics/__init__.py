"""Tensors, reverse-mode autodiff and the Adam optimizer."""

from fxcast.numerics.ops import (
    absolute,
    attention,
    add,
    concat,
    conv1d_causal,
    div,
    elementwise,
    exp,
    gelu,
    index,
    layer_norm,
    linear,
    linear_map,
    lstm_layer,
    matmul,
    mul,
    neg,
    reduce,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    stack,
    sub,
    swapaxes,
    tanh,
    transpose,
)
from fxcast.numerics.optim import Adam, AdamState, adam_step
from fxcast.numerics.tensor import Tape, Tensor, active_tape, as_tensor, backward

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "absolute", "attention", "active_tape", "adam_step", "add",
    "as_tensor", "backward", "concat", "conv1d_causal", "div", "elementwise", "exp", "gelu",
    "index", "layer_norm", "linear", "linear_map", "lstm_layer", "matmul", "mul", "neg",
    "reduce", "relu", "reshape", "sigmoid", "softmax", "square", "stack", "sub", "swapaxes",
    "tanh", "transpose",
]
