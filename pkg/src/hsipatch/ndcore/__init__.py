"""Dense-network numeric core with hand-derived gradients."""

from .gradcheck import compare_gradient, grad_check, relative_error
from .layers import (
    DenseLayer,
    dense_backward,
    dense_forward,
    dropout,
    dropout_backward,
    glorot_uniform,
    relu,
    relu_backward,
)
from .losses import bce_with_logits, cross_entropy, l2_penalty, mse_loss, sigmoid, softplus
from .optim import Adam, AdamState, StepLrSchedule, adam_step, step_lr
from .rng import GENERATOR, rng_stream

__all__ = [
    "Adam",
    "AdamState",
    "DenseLayer",
    "GENERATOR",
    "StepLrSchedule",
    "adam_step",
    "compare_gradient",
    "bce_with_logits",
    "cross_entropy",
    "dense_backward",
    "dense_forward",
    "dropout",
    "dropout_backward",
    "glorot_uniform",
    "grad_check",
    "l2_penalty",
    "mse_loss",
    "relative_error",
    "relu",
    "relu_backward",
    "rng_stream",
    "sigmoid",
    "softplus",
    "step_lr",
]
