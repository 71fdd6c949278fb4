"""Autodiff core: Tensor, nn ops, conv backends, gradient checking, checkpoints."""

from . import backend
from .checkpoint import load_blocks, save_blocks
from .gradcheck import grad_check
from .tensor import (
    SELU_ALPHA,
    SELU_LAMBDA,
    ConvSpec,
    NonFiniteError,
    Tensor,
    add,
    alpha_dropout,
    avg_pool1d,
    conv1d,
    cosine,
    guided_gradients,
    linear,
    max_pool1d,
    mean_all,
    mul,
    no_grad,
    relu,
    reshape,
    selu,
    softmax_cross_entropy,
    sum_all,
    take_rows,
    transpose,
    zero_grads,
)

__all__ = [
    "backend",
    "load_blocks",
    "save_blocks",
    "grad_check",
    "SELU_ALPHA",
    "SELU_LAMBDA",
    "ConvSpec",
    "NonFiniteError",
    "Tensor",
    "add",
    "alpha_dropout",
    "avg_pool1d",
    "conv1d",
    "cosine",
    "guided_gradients",
    "linear",
    "max_pool1d",
    "mean_all",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "selu",
    "softmax_cross_entropy",
    "sum_all",
    "take_rows",
    "transpose",
    "zero_grads",
]
