"""Adam optimizer and step learning-rate schedule."""

import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError


@dataclass(eq=False)
class AdamState:
    """Moment estimates for one layer's weights and bias."""

    m_weights: np.ndarray
    v_weights: np.ndarray
    m_bias: np.ndarray
    v_bias: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, layer, **hyper):
        return cls(
            np.zeros_like(layer.weights),
            np.zeros_like(layer.weights),
            np.zeros_like(layer.bias),
            np.zeros_like(layer.bias),
            **hyper,
        )


def _update(param, grad, m, v, lr, state, bc1, bc2):
    # single scratch buffer keeps the 6M-entry classifier layers allocation-free
    scratch = np.empty_like(param)
    m *= state.beta1
    np.multiply(grad, 1.0 - state.beta1, out=scratch)
    m += scratch
    v *= state.beta2
    np.multiply(grad, grad, out=scratch)
    scratch *= 1.0 - state.beta2
    v += scratch
    np.sqrt(v, out=scratch)
    scratch /= math.sqrt(bc2)
    scratch += state.epsilon
    np.divide(m, scratch, out=scratch)
    scratch *= lr / bc1
    param -= scratch


def adam_step(layer, grad_weights, grad_bias, state, lr):
    """Apply one bias-corrected Adam update to ``layer`` in place.

    Callers are responsible for skipping frozen layers; this function refuses them.
    """
    if not layer.trainable:
        raise ConfigurationError(f"adam_step called on frozen layer {layer.name!r}")
    if grad_weights.shape != layer.weights.shape or grad_bias.shape != layer.bias.shape:
        raise ConfigurationError(
            f"adam_step: gradient shapes {grad_weights.shape}/{grad_bias.shape} do not "
            f"match layer {layer.name!r} {layer.weights.shape}/{layer.bias.shape}"
        )
    state.step_count += 1
    bc1 = 1.0 - state.beta1**state.step_count
    bc2 = 1.0 - state.beta2**state.step_count
    _update(layer.weights, grad_weights, state.m_weights, state.v_weights, lr, state, bc1, bc2)
    _update(layer.bias, grad_bias, state.m_bias, state.v_bias, lr, state, bc1, bc2)
    return layer, state


class Adam:
    """Adam over a fixed list of layers; frozen layers are skipped untouched."""

    def __init__(self, layers, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.layers = list(layers)
        self.states = [
            AdamState.zeros_like(layer, beta1=beta1, beta2=beta2, epsilon=epsilon)
            for layer in self.layers
        ]

    def step(self, grads, lr):
        """``grads`` is a sequence of ``(grad_weights, grad_bias)`` aligned with ``layers``."""
        if len(grads) != len(self.layers):
            raise ConfigurationError(
                f"Adam.step: got {len(grads)} gradient pairs for {len(self.layers)} layers"
            )
        for layer, state, (gw, gb) in zip(self.layers, self.states, grads):
            if layer.trainable:
                adam_step(layer, gw, gb, state, lr)


@dataclass(frozen=True)
class StepLrSchedule:
    base_lr: float
    step_size: int
    gamma: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.step_size < 1:
            raise ConfigurationError(f"step_size must be >= 1, got {self.step_size}")
        if self.base_lr <= 0:
            raise ConfigurationError(f"base_lr must be > 0, got {self.base_lr}")

    def __call__(self, epoch):
        return step_lr(self, epoch)


def step_lr(schedule, epoch):
    if epoch < 0:
        raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
    return schedule.base_lr * schedule.gamma ** (epoch // schedule.step_size)
