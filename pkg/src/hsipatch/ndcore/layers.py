"""Dense layers, activations and dropout with hand-written gradients.

All matrices are 2-D float64 arrays with rows as batch items. Weights are stored
``in_dim x out_dim`` so the forward map is ``x @ W + b``.
"""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigurationError


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    trainable: bool = True
    name: str = field(default="")

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ConfigurationError(
                f"layer {self.name!r}: weights must be 2-D and bias 1-D, "
                f"got {self.weights.shape} and {self.bias.shape}"
            )
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ConfigurationError(
                f"layer {self.name!r}: bias length {self.bias.shape[0]} != "
                f"weights.cols {self.weights.shape[1]}"
            )

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]

    @property
    def n_params(self):
        return self.weights.size + self.bias.size

    def copy(self):
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.trainable, self.name)


def glorot_uniform(in_dim, out_dim, rng, name=""):
    """Layer with weights uniform in +-sqrt(6 / (fan_in + fan_out)) and zero bias."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-limit, limit, size=(in_dim, out_dim))
    return DenseLayer(weights, np.zeros(out_dim), name=name)


def dense_forward(x, layer):
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ConfigurationError(
            f"layer {layer.name!r}: input shape {x.shape} incompatible with "
            f"weights shape {layer.weights.shape}"
        )
    return x @ layer.weights + layer.bias


def dense_backward(grad_out, cached_input, layer):
    """Return ``(grad_input, grad_weights, grad_bias)`` for ``out = x @ W + b``."""
    n = cached_input.shape[0]
    if grad_out.shape != (n, layer.out_dim) or cached_input.shape[1] != layer.in_dim:
        raise ConfigurationError(
            f"layer {layer.name!r}: grad_out {grad_out.shape} / input "
            f"{cached_input.shape} do not match weights {layer.weights.shape}"
        )
    grad_weights = cached_input.T @ grad_out
    grad_bias = grad_out.sum(axis=0)
    grad_input = grad_out @ layer.weights.T
    return grad_input, grad_weights, grad_bias


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, cached_input):
    return np.where(cached_input > 0.0, grad_out, 0.0)


def dropout(x, rate, training, rng):
    """Inverted dropout. Returns ``(output, mask)`` with ``mask`` holding 0/1 keep flags.

    Survivors are scaled by ``1 / (1 - rate)`` so evaluation mode is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    mask = (rng.random(x.shape) >= rate).astype(np.float64)
    return x * (mask * (1.0 / (1.0 - rate))), mask


def dropout_backward(grad_out, mask, rate):
    if rate == 0.0:
        return grad_out
    return grad_out * (mask * (1.0 / (1.0 - rate)))
