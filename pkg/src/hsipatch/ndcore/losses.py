"""Loss functions returning ``(loss, grad)`` pairs, aggregated by mean."""

import numpy as np

from ..exceptions import ConfigurationError, InputError


def sigmoid(x):
    """Logistic function, branching on sign so neither tail overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ConfigurationError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def mse_loss(pred, target):
    _check_same_shape(pred, target, "mse_loss")
    diff = pred - target
    return float(np.mean(diff * diff)), diff * (2.0 / diff.size)


def bce_with_logits(logits, targets, pos_weight=None, sample_weight=None):
    """Weighted binary cross-entropy on raw logits, averaged over all entries.

    Uses ``-log sigmoid(x) = softplus(-x)`` and ``-log(1 - sigmoid(x)) = softplus(x)``.
    ``pos_weight`` scales the positive term per class; ``sample_weight`` must
    broadcast to ``logits.shape``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_same_shape(logits, targets, "bce_with_logits")
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise InputError("bce_with_logits: targets must be binary (0 or 1)")
    n_classes = logits.shape[-1]
    if pos_weight is None:
        pos_weight = np.ones(n_classes)
    pos_weight = np.asarray(pos_weight, dtype=np.float64)
    if pos_weight.shape != (n_classes,):
        raise ConfigurationError(
            f"bce_with_logits: pos_weight must have length {n_classes}, got {pos_weight.shape}"
        )
    weight = 1.0 if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)

    pos = pos_weight * targets
    neg = 1.0 - targets
    per_entry = weight * (pos * softplus(-logits) + neg * softplus(logits))
    sig = sigmoid(logits)
    grad = weight * (pos * (sig - 1.0) + neg * sig) / logits.size
    return float(np.mean(per_entry)), grad


def cross_entropy(logits, class_index):
    """Softmax cross-entropy against integer targets, averaged over the batch."""
    logits = np.asarray(logits, dtype=np.float64)
    class_index = np.asarray(class_index)
    n, n_classes = logits.shape
    if class_index.shape != (n,):
        raise ConfigurationError(
            f"cross_entropy: expected {n} class indices, got shape {class_index.shape}"
        )
    if n and (class_index.min() < 0 or class_index.max() >= n_classes):
        raise InputError(f"cross_entropy: class index out of range [0, {n_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_prob = shifted - log_norm
    rows = np.arange(n)
    loss = -np.mean(log_prob[rows, class_index])
    grad = np.exp(log_prob)
    grad[rows, class_index] -= 1.0
    return float(loss), grad / n


def l2_penalty(layers, lam, with_grad=True):
    """``lam * sum(w**2)`` over layer weights (biases excluded) and its weight gradients."""
    if lam < 0:
        raise ConfigurationError(f"l2 lambda must be >= 0, got {lam}")
    loss = lam * sum(float(np.vdot(layer.weights, layer.weights)) for layer in layers)
    if not with_grad:
        return loss, None
    return loss, [(2.0 * lam) * layer.weights for layer in layers]
