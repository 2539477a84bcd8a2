"""Minimal float64 array core with reverse-mode gradients."""
from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .core import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    inject_fault,
    log,
    log1p_exp,
    matmul,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    row_softmax,
    sigmoid,
    slice_,
    sqrt,
    square,
    stack,
    sub,
    take,
    tanh,
    transpose,
)
from .gradcheck import grad_check, relative_errors
from .lstm import encoder_forward, init_encoder, lstm
from .params import ParamSet, scaled_uniform, xavier_uniform

__all__ = [
    "AdamState", "ParamSet", "Tape", "Tensor", "adam_step", "add", "as_tensor", "backward",
    "concat", "div", "encoder_forward", "exp", "grad_check", "init_encoder", "inject_fault",
    "load_checkpoint", "log", "log1p_exp", "lstm", "matmul", "mul", "neg", "read_checkpoint",
    "reduce_mean", "reduce_sum", "relative_errors", "relu", "reshape", "row_softmax",
    "save_checkpoint", "scaled_uniform", "sigmoid", "slice_", "sqrt", "square", "stack", "sub",
    "take", "tanh", "transpose", "xavier_uniform",
]
