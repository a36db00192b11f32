"""Input checks shared by the estimator and the command line."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigurationError, InputError


def check_patches(X, bands=None):
    """Return ``X`` as a finite float64 ``n x 3 x 3 x bands`` array."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False, ensure_min_samples=1)
    if X.ndim != 4 or X.shape[1:3] != (3, 3):
        raise ConfigurationError(f"expected patches shaped n x 3 x 3 x bands, got {X.shape}")
    if bands is not None and X.shape[3] != bands:
        raise ConfigurationError(f"model was fitted on {bands} bands, got {X.shape[3]}")
    return X


def check_multilabel_targets(y, n_samples, n_classes=None):
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[0] != n_samples:
        raise InputError(f"multi-label targets must be {n_samples} x C indicators, got {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("multi-label targets must be 0/1 indicators")
    if n_classes is not None and y.shape[1] != n_classes:
        raise InputError(f"expected {n_classes} label columns, got {y.shape[1]}")
    return y.astype(np.float64)


def check_class_targets(y, n_samples, n_classes):
    """Scene class indices in ``1 .. n_classes-1`` (background excluded)."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise InputError(f"single-label targets must have shape ({n_samples},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise InputError("single-label targets must be integer class indices")
        y = y.astype(np.int64)
    if y.min() < 1 or y.max() >= n_classes:
        raise InputError(f"single-label targets must lie in [1, {n_classes - 1}]")
    return y.astype(np.int64)
