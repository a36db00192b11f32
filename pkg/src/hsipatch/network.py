"""Two-component network: per-pixel spectral autoencoder and patch classifier.

The autoencoder maps each of the 9 pixel spectra of a 3x3 patch independently
(one shared affine map per layer along the band axis)::

    bands -> 96 -> 64 -> 32 -> 64 -> 96 -> bands

The 9 x 32 hidden codes of a patch are flattened to 288 values and fed to the
classifier ``288 -> 3000 -> 1512 -> 512 -> 28 -> n_outputs`` which emits raw logits.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, InputError, SceneLoadError
from .ndcore import (
    DenseLayer,
    dense_backward,
    dense_forward,
    dropout,
    dropout_backward,
    glorot_uniform,
    relu,
    relu_backward,
    sigmoid,
)
from .patching import NormStats

PIXELS = 9
ENCODER_WIDTHS = (96, 64, 32)
DECODER_WIDTHS = (64, 96)
CLASSIFIER_WIDTHS = (3000, 1512, 512, 28)
HIDDEN_CHANNELS = ENCODER_WIDTHS[-1]
HIDDEN_WIDTH = PIXELS * HIDDEN_CHANNELS

CHECKPOINT_FORMAT = "hsipatch-checkpoint/1"
PARAM_ORDER = (
    "encoder layers 1-3, decoder layers 1-3, classifier layers 1-5; "
    "per layer weights (in_dim x out_dim, row-major) then bias; little-endian float64"
)


def _stack_forward(layers, x, dropout_after, relu_after, rate, training, rng):
    """Run ``Linear => [dropout] => [relu]`` per layer, returning output and backward cache."""
    cache = []
    for layer, use_dropout, use_relu in zip(layers, dropout_after, relu_after):
        inp = x
        x = dense_forward(x, layer)
        mask = None
        if use_dropout:
            x, mask = dropout(x, rate, training, rng)
        pre_act = x if use_relu else None
        if use_relu:
            x = relu(x)
        cache.append((inp, mask, pre_act))
    return x, cache


def _stack_backward(layers, grad, cache, rate):
    """Return ``(grad_input, [(grad_w, grad_b), ...])`` for a forward made by ``_stack_forward``."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        inp, mask, pre_act = cache[i]
        if pre_act is not None:
            grad = relu_backward(grad, pre_act)
        if mask is not None:
            grad = dropout_backward(grad, mask, rate)
        grad, gw, gb = dense_backward(grad, inp, layers[i])
        grads[i] = (gw, gb)
    return grad, grads


@dataclass(eq=False)
class Autoencoder:
    encoder: list
    decoder: list
    dropout_rate: float = 0.0

    @property
    def bands(self):
        return self.encoder[0].in_dim

    @property
    def layers(self):
        return list(self.encoder) + list(self.decoder)

    def n_params(self, trainable_only=True):
        return sum(l.n_params for l in self.layers if l.trainable or not trainable_only)

    def set_encoder_trainable(self, flag):
        for layer in self.encoder:
            layer.trainable = flag

    def _pixels(self, patches):
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim == 4:
            if x.shape[1:3] != (3, 3):
                raise ConfigurationError(f"patches must be n x 3 x 3 x bands, got {x.shape}")
            x = x.reshape(x.shape[0], -1)
        if x.ndim != 2 or x.shape[1] != PIXELS * self.bands:
            raise ConfigurationError(
                f"autoencoder expects {self.bands} bands per pixel, got input shape "
                f"{np.shape(patches)}"
            )
        return x.reshape(-1, self.bands)

    def encode(self, patches, training=False, rng=None):
        """Hidden codes ``n x 288`` plus the cache needed by :meth:`encode_backward`."""
        pixels = self._pixels(patches)
        h, cache = _stack_forward(
            self.encoder, pixels, (True, True, False), (True, True, True),
            self.dropout_rate, training, rng,
        )
        return h.reshape(-1, HIDDEN_WIDTH), cache

    def decode(self, hidden, training=False, rng=None):
        """Reconstruction ``n x 9*bands`` from hidden codes ``n x 288``."""
        n = hidden.shape[0]
        y, cache = _stack_forward(
            self.decoder, hidden.reshape(-1, HIDDEN_CHANNELS), (True, True, False),
            (True, True, False), self.dropout_rate, training, rng,
        )
        return y.reshape(n, -1), cache

    def encode_backward(self, grad_hidden, cache):
        grad = grad_hidden.reshape(-1, HIDDEN_CHANNELS)
        grad_in, grads = _stack_backward(self.encoder, grad, cache, self.dropout_rate)
        return grad_in.reshape(grad_hidden.shape[0], -1), grads

    def decode_backward(self, grad_recon, cache):
        n = grad_recon.shape[0]
        grad = grad_recon.reshape(-1, self.bands)
        grad_h, grads = _stack_backward(self.decoder, grad, cache, self.dropout_rate)
        return grad_h.reshape(n, HIDDEN_WIDTH), grads


@dataclass(eq=False)
class Classifier:
    layers: list
    dropout_rate: float = 0.0

    @property
    def n_outputs(self):
        return self.layers[-1].out_dim

    def n_params(self, trainable_only=True):
        return sum(l.n_params for l in self.layers if l.trainable or not trainable_only)

    def forward(self, hidden, training=False, rng=None):
        if hidden.ndim != 2 or hidden.shape[1] != HIDDEN_WIDTH:
            raise ConfigurationError(
                f"classifier expects hidden width {HIDDEN_WIDTH}, got shape {hidden.shape}"
            )
        flags = (True,) * 4 + (False,)
        return _stack_forward(self.layers, hidden, flags, flags, self.dropout_rate, training, rng)

    def backward(self, grad_logits, cache):
        return _stack_backward(self.layers, grad_logits, cache, self.dropout_rate)


def build_autoencoder(bands, dropout_rate, rng):
    if bands < 1:
        raise ConfigurationError(f"bands must be >= 1, got {bands}")
    widths = (bands,) + ENCODER_WIDTHS + DECODER_WIDTHS + (bands,)
    layers = [
        glorot_uniform(widths[i], widths[i + 1], rng, name=f"{'enc' if i < 3 else 'dec'}{i % 3 + 1}")
        for i in range(6)
    ]
    return Autoencoder(layers[:3], layers[3:], dropout_rate)


def build_classifier(n_outputs, dropout_rate, rng):
    if n_outputs < 1:
        raise ConfigurationError(f"classifier needs >= 1 output, got {n_outputs}")
    widths = (HIDDEN_WIDTH,) + CLASSIFIER_WIDTHS + (n_outputs,)
    layers = [
        glorot_uniform(widths[i], widths[i + 1], rng, name=f"clf{i + 1}") for i in range(5)
    ]
    return Classifier(layers, dropout_rate)


def ae_forward(ae, patch_batch, training=False, rng=None):
    """Return ``(hidden n x 288, reconstruction n x 9*bands)``."""
    hidden, _ = ae.encode(patch_batch, training, rng)
    recon, _ = ae.decode(hidden, training, rng)
    return hidden, recon


def classify(clf, hidden_batch, training=False, rng=None):
    return clf.forward(hidden_batch, training, rng)[0]


def predict_multilabel(logits):
    """Indicator matrix with bit c set iff sigmoid(logit_c) > 0.5, i.e. logit_c > 0."""
    return (np.asarray(logits) > 0.0).astype(np.uint8)


def predict_proba_multilabel(logits):
    return sigmoid(np.asarray(logits, dtype=np.float64))


def predict_topk(logits, k):
    """Indices of the ``k`` largest logits (sorted by rank); ties go to the lower index."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 1 <= k <= logits.shape[-1]:
        raise InputError(f"k must lie in [1, {logits.shape[-1]}], got {k}")
    return np.argsort(-logits, kind="stable")[:k]


def topk_indicators(logits, ks):
    """Row-wise top-k indicator matrix for per-row ``ks`` (0 gives an empty row)."""
    logits = np.asarray(logits, dtype=np.float64)
    ks = np.broadcast_to(np.asarray(ks, dtype=np.int64), (logits.shape[0],))
    if np.any(ks < 0) or np.any(ks > logits.shape[1]):
        raise InputError(f"k must lie in [0, {logits.shape[1]}]")
    order = np.argsort(-logits, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(logits.shape[0])[:, None]
    ranks[rows, order] = np.arange(logits.shape[1])
    return (ranks < ks[:, None]).astype(np.uint8)


@dataclass(eq=False)
class Model:
    """Everything a checkpoint carries: weights, normalization and task metadata."""

    autoencoder: Autoencoder
    classifier: Classifier = None
    norm_stats: NormStats = None
    task: str = "multi_label"
    class_count: int = None
    config_hash: str = None
    extra: dict = field(default_factory=dict)

    @property
    def layers(self):
        layers = self.autoencoder.layers
        if self.classifier is not None:
            layers = layers + list(self.classifier.layers)
        return layers


def _manifest_paths(path):
    path = Path(path)
    name = path.name
    for suffix in (".manifest.json", ".params"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return path.with_name(name + ".manifest.json"), path.with_name(name + ".params")


def save_model(model, path):
    manifest_path, params_path = _manifest_paths(path)
    layers = model.layers
    entries, offset = [], 0
    for layer in layers:
        entries.append({"name": layer.name, "shape": list(layer.weights.shape), "offset": offset})
        offset += layer.n_params
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "task": model.task,
        "bands": model.autoencoder.bands,
        "class_count": model.class_count,
        "n_outputs": None if model.classifier is None else model.classifier.n_outputs,
        "dropout_ae": model.autoencoder.dropout_rate,
        "dropout_clf": None if model.classifier is None else model.classifier.dropout_rate,
        "init": "glorot_uniform",
        "param_order": PARAM_ORDER,
        "layers": entries,
        "n_params": offset,
        "norm_stats": None if model.norm_stats is None else model.norm_stats.to_dict(),
        "config_hash": model.config_hash,
        "extra": model.extra,
    }
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for l in layers for a in (l.weights, l.bias)
    )
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    params_path.write_bytes(payload)
    return manifest_path


def _expected_shapes(bands, n_outputs):
    ae = (bands,) + ENCODER_WIDTHS + DECODER_WIDTHS + (bands,)
    shapes = [[ae[i], ae[i + 1]] for i in range(6)]
    if n_outputs is not None:
        clf = (HIDDEN_WIDTH,) + CLASSIFIER_WIDTHS + (n_outputs,)
        shapes += [[clf[i], clf[i + 1]] for i in range(5)]
    return shapes


def load_model(path):
    manifest_path, params_path = _manifest_paths(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        payload = params_path.read_bytes()
    except FileNotFoundError as exc:
        raise SceneLoadError(f"missing checkpoint file: {exc.filename}", field="checkpoint") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise SceneLoadError(f"{manifest_path}: unknown format {manifest.get('format')!r}",
                             field="format")
    shapes = [e["shape"] for e in manifest["layers"]]
    expected = _expected_shapes(manifest["bands"], manifest["n_outputs"])
    if shapes != expected:
        raise SceneLoadError(
            f"{manifest_path}: layer shapes {shapes} do not match the architecture for "
            f"bands={manifest['bands']}, n_outputs={manifest['n_outputs']}",
            field="layers",
        )
    n_params = sum(r * c + c for r, c in shapes)
    if len(payload) != 8 * n_params or manifest["n_params"] != n_params:
        raise SceneLoadError(
            f"{params_path}: payload has {len(payload)} bytes, expected {8 * n_params}",
            field="params",
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    layers, offset = [], 0
    for entry, (r, c) in zip(manifest["layers"], shapes):
        w = flat[offset : offset + r * c].reshape(r, c)
        b = flat[offset + r * c : offset + r * c + c]
        layers.append(DenseLayer(w.copy(), b.copy(), name=entry["name"]))
        offset += r * c + c
    ae = Autoencoder(layers[:3], layers[3:6], manifest["dropout_ae"])
    clf = Classifier(layers[6:], manifest["dropout_clf"]) if len(layers) > 6 else None
    stats = manifest["norm_stats"]
    return Model(
        ae,
        clf,
        None if stats is None else NormStats.from_dict(stats),
        manifest["task"],
        manifest["class_count"],
        manifest["config_hash"],
        manifest.get("extra", {}),
    )


def parameters_digest(model):
    """SHA-256 over the checkpoint payload bytes, for cheap bitwise comparisons."""
    h = hashlib.sha256()
    for layer in model.layers:
        h.update(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return h.hexdigest()
