"""Finite-difference gradient checking.

The numeric derivative is a Richardson-extrapolated central difference,
``(4 D(h/2) - D(h)) / 3``, which cancels the ``h^2`` truncation term and so
lets ``h`` stay wide enough that roundoff in an O(1) loss does not swamp
small gradient entries. Next to a kink, the same extrapolation is applied to
second-order one-sided differences.
"""

import numpy as np

MAX_SHRINKS = 12
# Entries much smaller than the largest one in their array are compared in
# absolute units of that array's gradient scale.
RELATIVE_FLOOR = 1e-3


def relative_error(analytic, numeric, scale=0.0):
    """Elementwise ``|a - n| / max(|a|, |n|, 1e-12, RELATIVE_FLOOR * scale)``.

    ``scale`` is the largest analytic magnitude in the array being checked.
    """
    a = np.abs(analytic)
    n = np.abs(numeric)
    denom = np.maximum(np.maximum(a, n), max(1e-12, RELATIVE_FLOOR * scale))
    return np.abs(analytic - numeric) / denom


class _Probe:
    """Evaluates the loss at offsets of one entry and tracks region changes."""

    def __init__(self, flat, i, point, loss_fn, region_fn, home):
        self.flat, self.i, self.point = flat, i, point
        self.loss_fn, self.region_fn, self.home = loss_fn, region_fn, home
        self.orig = flat[i]

    def __call__(self, offset):
        self.flat[self.i] = self.orig + offset
        try:
            value = self.loss_fn(self.point)
            inside = self.region_fn is None or self.region_fn(self.point) == self.home
        finally:
            self.flat[self.i] = self.orig
        return value, inside


def _central(probe, h):
    (f_plus, in_plus), (f_minus, in_minus) = probe(h), probe(-h)
    return f_plus, f_minus, in_plus, in_minus


def _extrapolated_central(probe, h, f_plus, f_minus):
    (f_half_plus, ok_plus), (f_half_minus, ok_minus) = probe(h / 2), probe(-h / 2)
    wide = (f_plus - f_minus) / (2 * h)
    if not (ok_plus and ok_minus):
        return wide
    narrow = (f_half_plus - f_half_minus) / h
    return (4 * narrow - wide) / 3


def _extrapolated_one_sided(probe, h, sign, f_full):
    """Second-order one-sided differences towards ``sign``, extrapolated when possible."""
    f0 = probe(0.0)[0]
    f_half, ok_half = probe(sign * h / 2)
    if not ok_half:
        return None
    # written as differences from f0 so a locally constant function gives exactly 0
    wide = sign * (4 * (f_half - f0) - (f_full - f0)) / h
    f_quarter, ok_quarter = probe(sign * h / 4)
    if not ok_quarter:
        return wide
    narrow = sign * (4 * (f_quarter - f0) - (f_half - f0)) / (h / 2)
    return (4 * narrow - wide) / 3


def _derivative(probe, epsilon):
    h = epsilon
    for _ in range(MAX_SHRINKS):
        f_plus, f_minus, in_plus, in_minus = _central(probe, h)
        if in_plus and in_minus:
            return _extrapolated_central(probe, h, f_plus, f_minus)
        if in_plus or in_minus:
            sign, f_full = (1.0, f_plus) if in_plus else (-1.0, f_minus)
            estimate = _extrapolated_one_sided(probe, h, sign, f_full)
            if estimate is not None:
                return estimate
        last_h, h = h, h * 0.5
    # the point sits on a kink for every step tried; report the straddling estimate
    return (f_plus - f_minus) / (2 * last_h)


def compare_gradient(analytic, loss_fn, point, epsilon=1e-3, indices=None, region_fn=None):
    """Max relative error of ``analytic`` against finite differences of ``loss_fn``.

    ``point`` is perturbed in place one entry at a time and restored, so
    ``loss_fn(point)`` may read it through a closure. ``indices`` restricts the
    probe to a subset of flat positions.

    For piecewise-smooth functions (ReLU networks) pass ``region_fn(point)``
    returning a hashable key of the active linear region, e.g. the ReLU on/off
    pattern. Differences are only taken between points in the region of the
    unperturbed point: the step is halved until they are, and when only one
    side crosses a kink a one-sided stencil on the other side is used.
    """
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    flat = point.reshape(-1)
    if not np.shares_memory(flat, point):
        raise ValueError("gradient check needs a contiguous array it can perturb in place")
    if analytic.size != flat.size:
        raise ValueError(f"analytic gradient has {analytic.size} entries, point has {flat.size}")
    home = region_fn(point) if region_fn is not None else None
    scale = float(np.max(np.abs(analytic))) if analytic.size else 0.0
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        probe = _Probe(flat, i, point, loss_fn, region_fn, home)
        numeric = _derivative(probe, epsilon)
        worst = max(worst, float(relative_error(analytic[i], numeric, scale)))
    return worst


def grad_check(fn, point, epsilon=1e-3, indices=None, region_fn=None):
    """Max relative error between ``fn``'s analytic gradient and finite differences.

    ``fn(point)`` returns ``(loss, grad)`` with ``grad`` shaped like ``point``;
    see :func:`compare_gradient` for ``indices`` and ``region_fn``.
    """
    _, analytic = fn(point)
    return compare_gradient(analytic, lambda p: fn(p)[0], point, epsilon, indices, region_fn)
