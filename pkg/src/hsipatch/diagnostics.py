"""Finite-difference verification of every layer, loss and both composed networks."""

import time

import numpy as np

from .ndcore import (
    DenseLayer,
    bce_with_logits,
    compare_gradient,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout,
    dropout_backward,
    grad_check,
    l2_penalty,
    mse_loss,
    relu,
    relu_backward,
    rng_stream,
)
from .network import build_autoencoder, build_classifier
from .schemes import (
    TrainConfig,
    ae_loss_and_grads,
    classification_loss,
    clf_loss_and_grads,
    joint_loss_and_grads,
)

TOLERANCE = 1e-6
# Linear and quadratic maps have no truncation error under central differences,
# so their step only needs to be wide enough to beat roundoff.
EPSILON_EXACT = 1e-3
# Smooth nonlinear losses; with extrapolation truncation is O(h^4).
EPSILON = 1e-3
# ReLU networks are piecewise linear and the checker extrapolates away the h^2
# term of the loss's curvature, so a wide step keeps roundoff low.
EPSILON_NETWORK = 3e-3
PROBES_PER_ARRAY = 12
# every probe of a classifier array replays part of a 6.2M-parameter network
PROBES_CLASSIFIER = 6


def _probe(rng, size, k=PROBES_PER_ARRAY):
    return rng.choice(size, size=min(k, size), replace=False)


def _dense_checks(rng, n, d_in, d_out):
    layer = DenseLayer(rng.standard_normal((d_in, d_out)), rng.standard_normal(d_out))
    x = rng.standard_normal((n, d_in))
    proj = rng.standard_normal((n, d_out))

    def grads():
        return dense_backward(proj, x, layer)

    def loss():
        return float(np.sum(dense_forward(x, layer) * proj))

    probe = None if d_in * d_out <= 64 else _probe(rng, d_in * d_out, 40)
    return max(
        grad_check(lambda _: (loss(), grads()[1]), layer.weights, EPSILON_EXACT, probe),
        grad_check(lambda _: (loss(), grads()[2]), layer.bias, EPSILON_EXACT),
        grad_check(lambda _: (loss(), grads()[0]), x, EPSILON_EXACT,
                   None if x.size <= 64 else _probe(rng, x.size, 40)),
    )


def _relu_check(rng):
    x = rng.uniform(0.1, 2.0, (6, 9)) * rng.choice([-1.0, 1.0], (6, 9))
    proj = rng.standard_normal(x.shape)
    return grad_check(lambda p: (float(np.sum(relu(p) * proj)), relu_backward(proj, p)), x, EPSILON)


def _dropout_check(rng):
    x = rng.standard_normal((5, 8))
    proj = rng.standard_normal(x.shape)

    def fn(p):
        out, mask = dropout(p, 0.4, True, rng_stream(11, "gradcheck_dropout"))
        return float(np.sum(out * proj)), dropout_backward(proj, mask, 0.4)

    return grad_check(fn, x, EPSILON_EXACT)


def _mse_check(rng):
    pred, target = rng.standard_normal((3, 7)), rng.standard_normal((3, 7))
    return grad_check(lambda p: mse_loss(p, target), pred, EPSILON_EXACT)


def _bce_check(rng):
    logits = rng.standard_normal((5, 6)) * 3.0
    targets = (rng.random((5, 6)) < 0.5).astype(float)
    pos_weight = rng.uniform(0.5, 2.0, 6)
    return grad_check(lambda p: bce_with_logits(p, targets, pos_weight), logits, EPSILON)


def _ce_check(rng):
    logits = rng.standard_normal((5, 6)) * 3.0
    classes = rng.integers(0, 6, 5)
    return grad_check(lambda p: cross_entropy(p, classes), logits, EPSILON)


def _l2_check(rng):
    layers = [DenseLayer(rng.standard_normal((4, 3)), np.zeros(3)) for _ in range(2)]
    return max(
        grad_check(lambda _: (l2_penalty(layers, 0.01)[0], l2_penalty(layers, 0.01)[1][i]),
                   layers[i].weights, EPSILON_EXACT)
        for i in range(2)
    )


class _Replay:
    """Forward-only replay of a ``Linear => [relu]`` stack that can restart at any layer.

    A perturbation inside layer ``k`` only changes layers ``k`` onward, so the
    inputs to earlier layers are kept and reused. The ReLU on/off pattern of
    every layer is recorded as the region key of the last pass.
    """

    def __init__(self, layers, relu_flags):
        self.layers, self.relu_flags = layers, relu_flags
        self.inputs = [None] * len(layers)
        self.patterns = [b""] * len(layers)
        self.output = None

    def run(self, x=None, start=0):
        x = self.inputs[start] if x is None else x
        for k in range(start, len(self.layers)):
            self.inputs[k] = x
            x = dense_forward(x, self.layers[k])
            if self.relu_flags[k]:
                self.patterns[k] = np.packbits(x > 0.0).tobytes()
                x = relu(x)
        self.output = x
        return x

    def region(self):
        return b"".join(self.patterns)


def _encoder_replay(ae):
    return _Replay(ae.encoder, (True, True, True))


def _decoder_replay(ae):
    return _Replay(ae.decoder, (True, True, False))


def _classifier_replay(clf):
    return _Replay(clf.layers, (True,) * (len(clf.layers) - 1) + (False,))


class _SquaredNorms:
    """Per-layer ``sum(W**2)``; only the perturbed layer is recomputed."""

    def __init__(self, layers, lam):
        self.layers, self.lam = layers, lam
        self.norms = [float(np.vdot(l.weights, l.weights)) for l in layers]

    def penalty(self, k=None):
        if k is not None:
            w = self.layers[k].weights
            self.norms[k] = float(np.vdot(w, w))
        return self.lam * sum(self.norms)


def _network_check(rng, analytic_grads, layers, value_from, probes=PROBES_PER_ARRAY):
    """Probe a sample of entries of every parameter array of ``layers``.

    ``analytic_grads`` is aligned with ``layers`` as ``(grad_w, grad_b)`` pairs.
    ``value_from(k)`` evaluates the loss after a change inside ``layers[k]`` and
    returns ``(loss, region_key)``.
    """
    worst = 0.0
    for k, (layer, (gw, gb)) in enumerate(zip(layers, analytic_grads)):
        for arr, grad in ((layer.weights, gw), (layer.bias, gb)):
            last = {}

            def loss_fn(_, k=k, last=last):
                last["value"] = value_from(k)
                return last["value"][0]

            def region_fn(_, k=k, last=last):
                # the checker asks for the region right after each loss evaluation
                return last["value"][1] if "value" in last else value_from(k)[1]

            worst = max(worst, compare_gradient(grad, loss_fn, arr, EPSILON_NETWORK,
                                                _probe(rng, arr.size, probes), region_fn))
        value_from(k)  # refresh the cached downstream inputs at the restored weights
    return worst


def _perturb_biases(rng, layers):
    # nonzero biases exercise the bias gradients and keep most units active
    for layer in layers:
        layer.bias[:] = rng.uniform(0.0, 0.1, layer.bias.shape)


def _ae_check(rng):
    bands = 8
    ae = build_autoencoder(bands, 0.0, rng_stream(1, "gradcheck_ae"))
    _perturb_biases(rng, ae.layers)
    x = rng.standard_normal((2, 3, 3, bands))
    enc, dec = _encoder_replay(ae), _decoder_replay(ae)
    enc.run(x.reshape(-1, bands))
    dec.run(enc.output)

    def value_from(k):
        if k < len(ae.encoder):
            dec.run(enc.run(start=k))
        else:
            dec.run(start=k - len(ae.encoder))
        recon = dec.output.reshape(x.shape[0], -1)
        return mse_loss(recon, x.reshape(recon.shape))[0], enc.region() + dec.region()

    _, grads = ae_loss_and_grads(ae, x)
    return _network_check(rng, grads, ae.layers, value_from)


def _clf_check(rng, task):
    n_out = 10 if task == "multi_label" else 9
    clf = build_classifier(n_out, 0.0, rng_stream(2, "gradcheck_clf"))
    _perturb_biases(rng, clf.layers)
    config = TrainConfig(task=task, lambda_l2=1e-4)
    hidden = rng.uniform(0.0, 1.0, (3, 288))
    if task == "multi_label":
        targets = (rng.random((3, n_out)) < 0.4).astype(float)
    else:
        targets = rng.integers(0, n_out, 3)
    replay, norms = _classifier_replay(clf), _SquaredNorms(clf.layers, config.lambda_l2)
    replay.run(hidden)

    def value_from(k):
        logits = replay.run(start=k)
        loss = classification_loss(config, logits, targets)[0] + norms.penalty(k)
        return loss, replay.region()

    _, grads, _ = clf_loss_and_grads(config, clf, hidden, targets)
    return _network_check(rng, grads, clf.layers, value_from, probes=PROBES_CLASSIFIER)


def _joint_check(rng):
    bands = 8
    ae = build_autoencoder(bands, 0.0, rng_stream(3, "gradcheck_joint_ae"))
    clf = build_classifier(5, 0.0, rng_stream(3, "gradcheck_joint_clf"))
    _perturb_biases(rng, ae.layers + clf.layers)
    config = TrainConfig(task="multi_label", lambda_l2=1e-4)
    x = rng.standard_normal((2, 3, 3, bands))
    targets = (rng.random((2, 5)) < 0.5).astype(float)
    n = x.shape[0]
    enc, dec, cls = _encoder_replay(ae), _decoder_replay(ae), _classifier_replay(clf)
    norms = _SquaredNorms(clf.layers, config.lambda_l2)
    enc.run(x.reshape(-1, bands))
    dec.run(enc.output)
    cls.run(enc.output.reshape(n, -1))
    n_enc, n_ae = len(ae.encoder), len(ae.layers)

    def value_from(k):
        penalty = norms.penalty(k - n_ae if k >= n_ae else None)
        if k < n_enc:
            codes = enc.run(start=k)
            dec.run(codes)
            cls.run(codes.reshape(n, -1))
        elif k < n_ae:
            dec.run(start=k - n_enc)
        else:
            cls.run(start=k - n_ae)
        recon = dec.output.reshape(n, -1)
        mse = mse_loss(recon, x.reshape(recon.shape))[0]
        clf_loss = classification_loss(config, cls.output, targets)[0] + penalty
        total = config.joint_weight_ae * mse + config.joint_weight_clf * clf_loss
        return total, enc.region() + dec.region() + cls.region()

    _, _, ae_grads, clf_grads = joint_loss_and_grads(config, ae, clf, x, targets)
    return _network_check(rng, ae_grads + clf_grads, ae.layers + clf.layers, value_from,
                          probes=PROBES_CLASSIFIER)


CHECKS = (
    ("dense 4x5", lambda rng: _dense_checks(rng, 3, 4, 5)),
    ("dense 8x300", lambda rng: _dense_checks(rng, 8, 300, 20)),
    ("relu", _relu_check),
    ("dropout (fixed mask)", _dropout_check),
    ("mse", _mse_check),
    ("bce_with_logits", _bce_check),
    ("cross_entropy", _ce_check),
    ("l2_penalty", _l2_check),
    ("autoencoder + mse", _ae_check),
    ("classifier + bce + l2", lambda rng: _clf_check(rng, "multi_label")),
    ("classifier + cross_entropy + l2", lambda rng: _clf_check(rng, "single_label")),
    ("joint total loss", _joint_check),
)


def run_gradcheck(seed=0, tolerance=TOLERANCE):
    """Run every check; returns ``(results, elapsed_seconds)`` with ``(name, error, ok)`` rows."""
    rng = rng_stream(seed, "gradcheck")
    start = time.perf_counter()
    results = []
    for name, check in CHECKS:
        err = check(rng)
        results.append((name, err, err <= tolerance))
    return results, time.perf_counter() - start
