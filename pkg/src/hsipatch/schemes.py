"""Iterative, Joint and Cascade training of the autoencoder + classifier pair.

All schemes share one seeding discipline: a master seed derives independent
streams for AE/classifier initialization, AE/classifier dropout and batch
shuffling. Frozen-encoder classifier phases run the encoder in evaluation mode
and precompute the hidden codes once per phase, so the decoder never enters the
classifier's graph.
"""

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError
from .metrics import example_accuracy
from .ndcore import Adam, StepLrSchedule, bce_with_logits, cross_entropy, l2_penalty, mse_loss
from .ndcore import rng_stream
from .network import Model, build_autoencoder, build_classifier, predict_multilabel, save_model

SCHEMES = ("iterative", "joint", "cascade")
TASKS = ("multi_label", "single_label")
EVAL_CHUNK = 1024


# Published hyperparameters, keyed by (dataset, task) with one column per scheme.
# No AE dropout is published for Salinas or for single-label runs; 0.3 is used there.
_PRESETS = {
    ("paviau", "multi_label"): {
        "batch_size": (200, 200, 200), "epochs_ae": (95, 95, 95), "epochs_clf": (200, 200, 200),
        "lr_ae": (1e-2, 1e-2, 1e-2), "lr_clf": (1e-2, 1e-2, 1e-2),
        "lr_step_ae": (10, 15, 15), "lr_step_clf": (15, 15, 15),
        "dropout_ae": (0.3, 0.3, 0.3), "dropout_clf": (0.6, 0.6, 0.6),
        "lambda_l2": (1e-4, 1e-4, 1e-4),
    },
    ("salinas", "multi_label"): {
        "batch_size": (130, 130, 130), "epochs_ae": (95, 95, 95), "epochs_clf": (200, 200, 240),
        "lr_ae": (1e-2, 1e-2, 1e-2), "lr_clf": (1e-2, 1e-3, 1e-5),
        "lr_step_ae": (10, 20, 15), "lr_step_clf": (15, 20, 15),
        "dropout_clf": (0.6, 0.6, 0.6), "lambda_l2": (1e-4, 1e-4, 1e-4),
    },
    ("paviau", "single_label"): {
        "batch_size": (240, 164, 100), "epochs_ae": (95, 95, 95), "epochs_clf": (260, 200, 240),
        "lr_ae": (1e-2, 1e-2, 1e-2), "lr_clf": (1e-3, 1e-3, 1e-5),
        "lr_step_ae": (10, 20, 15), "lr_step_clf": (10, 20, 15),
        "dropout_clf": (0.6, 0.6, 0.6), "lambda_l2": (9e-4, 1e-3, 1e-4),
    },
    ("salinas", "single_label"): {
        "batch_size": (240, 200, 200), "epochs_ae": (95, 95, 95), "epochs_clf": (200, 200, 200),
        "lr_ae": (1e-3, 1e-3, 1e-3), "lr_clf": (1e-3, 1e-3, 1e-3),
        "lr_step_ae": (10, 10, 10), "lr_step_clf": (10, 10, 10),
        "dropout_clf": (0.6, 0.6, 0.6), "lambda_l2": (9e-4, 7e-4, 9e-4),
    },
}


def preset(dataset, task, scheme):
    """Published hyperparameters for one dataset/task/scheme combination."""
    key = (dataset.lower(), task)
    if key not in _PRESETS:
        raise ConfigurationError(f"no preset for dataset={dataset!r}, task={task!r}")
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    column = SCHEMES.index(scheme)
    values = {name: col[column] for name, col in _PRESETS[key].items()}
    values.update(scheme=scheme, task=task, iterative_block=20, gamma=0.9)
    return values


@dataclass
class TrainConfig:
    scheme: str = "cascade"
    task: str = "multi_label"
    epochs_ae: int = 95
    epochs_clf: int = 200
    iterative_block: int = 20
    batch_size: int = 200
    lr_ae: float = 1e-2
    lr_clf: float = 1e-2
    lr_step_ae: int = 15
    lr_step_clf: int = 15
    gamma: float = 0.9
    dropout_ae: float = 0.3
    dropout_clf: float = 0.6
    lambda_l2: float = 1e-4
    joint_weight_ae: float = 1.0
    joint_weight_clf: float = 0.3
    pos_weight: list = None
    reset_optimizer_each_block: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        problems = []
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.task not in TASKS:
            problems.append(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("epochs_ae", "epochs_clf", "iterative_block", "batch_size",
                     "lr_step_ae", "lr_step_clf"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("lr_ae", "lr_clf"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if not 0.0 < self.gamma <= 1.0:
            problems.append("gamma must lie in (0, 1]")
        for name in ("dropout_ae", "dropout_clf"):
            if not 0.0 <= getattr(self, name) < 1.0:
                problems.append(f"{name} must lie in [0, 1)")
        for name in ("lambda_l2", "joint_weight_ae", "joint_weight_clf"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        if problems:
            raise ConfigurationError("invalid TrainConfig: " + "; ".join(problems))

    @classmethod
    def from_preset(cls, dataset, task, scheme, **overrides):
        values = preset(dataset, task, scheme)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown TrainConfig keys: {unknown}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class HistoryRecord:
    epoch: int
    component: str
    train_loss: float
    valid_loss: float = None
    valid_acc: float = None
    lr: float = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    COLUMNS = ("epoch", "component", "train_loss", "valid_loss", "valid_acc", "lr")

    def append(self, *args, **kwargs):
        self.records.append(HistoryRecord(*args, **kwargs))

    def component(self, name):
        return [r for r in self.records if r.component == name]

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.records:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                             for v in (getattr(r, c) for c in self.COLUMNS)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


@dataclass
class TrainingData:
    """Normalized patches ``n x 3 x 3 x bands`` with task targets.

    Multi-label targets are ``n x C`` indicators; single-label targets are
    0-based indices over the background-free classes.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    x_valid: np.ndarray = None
    y_valid: np.ndarray = None

    @property
    def has_valid(self):
        return self.x_valid is not None and len(self.x_valid) > 0


def init_models(config, bands, n_outputs):
    ae = build_autoencoder(bands, config.dropout_ae, rng_stream(config.seed, "init_ae"))
    clf = build_classifier(n_outputs, config.dropout_clf, rng_stream(config.seed, "init_clf"))
    return ae, clf


def classification_loss(config, logits, targets):
    if config.task == "multi_label":
        return bce_with_logits(logits, targets, config.pos_weight)
    return cross_entropy(logits, targets)


def classification_accuracy(config, logits, targets):
    if config.task == "multi_label":
        return example_accuracy(targets, predict_multilabel(logits))
    return float(np.mean(np.argmax(logits, axis=1) == targets))


def ae_loss_and_grads(ae, x, training=False, rng=None):
    hidden, enc_cache = ae.encode(x, training, rng)
    recon, dec_cache = ae.decode(hidden, training, rng)
    loss, grad = mse_loss(recon, x.reshape(recon.shape))
    grad_h, dec_grads = ae.decode_backward(grad, dec_cache)
    _, enc_grads = ae.encode_backward(grad_h, enc_cache)
    return loss, enc_grads + dec_grads


def clf_loss_and_grads(config, clf, hidden, targets, training=False, rng=None):
    """Regularized classification loss on hidden codes; returns ``(loss, grads, grad_hidden)``."""
    logits, cache = clf.forward(hidden, training, rng)
    task_loss, grad = classification_loss(config, logits, targets)
    l2, l2_grads = l2_penalty(clf.layers, config.lambda_l2)
    grad_hidden, grads = clf.backward(grad, cache)
    for (gw, _), lg in zip(grads, l2_grads):
        gw += lg
    return task_loss + l2, grads, grad_hidden


def joint_loss_and_grads(config, ae, clf, x, targets, training=False, rng_ae=None, rng_clf=None):
    """Weighted total ``w_ae * MSE + w_clf * (task loss + L2)`` and gradients for both parts.

    Returns ``(total, (mse, clf_loss), ae_grads, clf_grads)``.
    """
    w_ae, w_clf = config.joint_weight_ae, config.joint_weight_clf
    hidden, enc_cache = ae.encode(x, training, rng_ae)
    recon, dec_cache = ae.decode(hidden, training, rng_ae)
    mse, grad_recon = mse_loss(recon, x.reshape(recon.shape))
    logits, clf_cache = clf.forward(hidden, training, rng_clf)
    task_loss, grad_logits = classification_loss(config, logits, targets)
    l2, l2_grads = l2_penalty(clf.layers, config.lambda_l2)
    clf_loss = task_loss + l2
    total = w_ae * mse + w_clf * clf_loss

    grad_h_dec, dec_grads = ae.decode_backward(w_ae * grad_recon, dec_cache)
    grad_h_clf, clf_grads = clf.backward(w_clf * grad_logits, clf_cache)
    for (gw, _), lg in zip(clf_grads, l2_grads):
        lg *= w_clf
        gw += lg
    _, enc_grads = ae.encode_backward(grad_h_dec + grad_h_clf, enc_cache)
    return total, (mse, clf_loss), enc_grads + dec_grads, clf_grads


def _chunks(n):
    for start in range(0, n, EVAL_CHUNK):
        yield slice(start, min(start + EVAL_CHUNK, n))


def _encode_all(ae, x):
    return np.concatenate([ae.encode(x[s])[0] for s in _chunks(len(x))]) if len(x) else \
        np.zeros((0, 288))


def _ae_eval(ae, x):
    total = 0.0
    for s in _chunks(len(x)):
        hidden, _ = ae.encode(x[s])
        recon, _ = ae.decode(hidden)
        total += mse_loss(recon, x[s].reshape(recon.shape))[0] * (s.stop - s.start)
    return total / len(x)


def _clf_eval(config, clf, hidden, targets):
    logits = np.concatenate([clf.forward(hidden[s])[0] for s in _chunks(len(hidden))])
    task_loss, _ = classification_loss(config, logits, targets)
    l2, _ = l2_penalty(clf.layers, config.lambda_l2, with_grad=False)
    return task_loss + l2, classification_accuracy(config, logits, targets)


def iterative_schedule(epochs_ae, epochs_clf, block):
    """Alternating ``(component, n_epochs)`` blocks until both budgets are spent."""
    plan, left_ae, left_clf = [], epochs_ae, epochs_clf
    while left_ae > 0 or left_clf > 0:
        if left_ae > 0:
            n = min(block, left_ae)
            plan.append(("ae", n))
            left_ae -= n
        if left_clf > 0:
            n = min(block, left_clf)
            plan.append(("clf", n))
            left_clf -= n
    return plan


class _Trainer:
    def __init__(self, config, data, models):
        config.validate()
        self.config = config
        self.data = data
        self.ae, self.clf = models
        self.shuffle = rng_stream(config.seed, "shuffle")
        self.rng_ae = rng_stream(config.seed, "dropout_ae")
        self.rng_clf = rng_stream(config.seed, "dropout_clf")
        self.lr_ae = StepLrSchedule(config.lr_ae, config.lr_step_ae, config.gamma)
        self.lr_clf = StepLrSchedule(config.lr_clf, config.lr_step_clf, config.gamma)
        self.reset_optimizers()
        self.ae_epoch = 0
        self.clf_epoch = 0
        self.history = TrainHistory()

    def reset_optimizers(self):
        self.opt_ae = Adam(self.ae.layers)
        self.opt_clf = Adam(self.clf.layers)

    def _batches(self, n):
        order = self.shuffle.permutation(n)
        bs = self.config.batch_size
        return [order[i : i + bs] for i in range(0, n, bs)]

    def run_ae(self, n_epochs):
        x = self.data.x_train
        for _ in range(n_epochs):
            lr = self.lr_ae(self.ae_epoch)
            total = 0.0
            for idx in self._batches(len(x)):
                loss, grads = ae_loss_and_grads(self.ae, x[idx], True, self.rng_ae)
                self.opt_ae.step(grads, lr)
                total += loss * len(idx)
            valid = _ae_eval(self.ae, self.data.x_valid) if self.data.has_valid else None
            self.history.append(self.ae_epoch, "ae", total / len(x), valid, None, lr)
            self.ae_epoch += 1

    def run_clf(self, n_epochs):
        cfg, data = self.config, self.data
        self.ae.set_encoder_trainable(False)
        try:
            hidden = _encode_all(self.ae, data.x_train)
            hidden_valid = _encode_all(self.ae, data.x_valid) if data.has_valid else None
            for _ in range(n_epochs):
                lr = self.lr_clf(self.clf_epoch)
                total = 0.0
                for idx in self._batches(len(hidden)):
                    loss, grads, _ = clf_loss_and_grads(
                        cfg, self.clf, hidden[idx], data.y_train[idx], True, self.rng_clf
                    )
                    self.opt_clf.step(grads, lr)
                    total += loss * len(idx)
                valid_loss = valid_acc = None
                if hidden_valid is not None:
                    valid_loss, valid_acc = _clf_eval(cfg, self.clf, hidden_valid, data.y_valid)
                self.history.append(self.clf_epoch, "clf", total / len(hidden), valid_loss,
                                    valid_acc, lr)
                self.clf_epoch += 1
        finally:
            self.ae.set_encoder_trainable(True)

    def run_joint(self, n_epochs):
        cfg, data = self.config, self.data
        x, y = data.x_train, data.y_train
        for _ in range(n_epochs):
            lr_ae, lr_clf = self.lr_ae(self.clf_epoch), self.lr_clf(self.clf_epoch)
            totals = np.zeros(3)
            for idx in self._batches(len(x)):
                total, (mse, closs), ae_grads, clf_grads = joint_loss_and_grads(
                    cfg, self.ae, self.clf, x[idx], y[idx], True, self.rng_ae, self.rng_clf
                )
                self.opt_ae.step(ae_grads, lr_ae)
                self.opt_clf.step(clf_grads, lr_clf)
                totals += np.array([total, mse, closs]) * len(idx)
            totals /= len(x)
            v_total = v_mse = v_clf = v_acc = None
            if data.has_valid:
                v_mse = _ae_eval(self.ae, data.x_valid)
                v_clf, v_acc = _clf_eval(cfg, self.clf, _encode_all(self.ae, data.x_valid),
                                         data.y_valid)
                v_total = cfg.joint_weight_ae * v_mse + cfg.joint_weight_clf * v_clf
            e = self.clf_epoch
            self.history.append(e, "ae", float(totals[1]), v_mse, None, lr_ae)
            self.history.append(e, "clf", float(totals[2]), v_clf, v_acc, lr_clf)
            self.history.append(e, "joint", float(totals[0]), v_total, v_acc, None)
            self.ae_epoch += 1
            self.clf_epoch += 1


def _prepare(config, data, models):
    if models is None:
        n_outputs = data.y_train.shape[1] if config.task == "multi_label" else \
            int(np.max(data.y_train)) + 1
        models = init_models(config, data.x_train.shape[-1], n_outputs)
    if len(data.x_train) == 0:
        raise ConfigurationError("training split is empty")
    return _Trainer(config, data, models)


def train_cascade(config, data, models=None):
    """Pre-train the autoencoder, then train the classifier on the frozen encoder."""
    t = _prepare(config, data, models)
    t.run_ae(config.epochs_ae)
    t.run_clf(config.epochs_clf)
    return (t.ae, t.clf), t.history


def train_joint(config, data, models=None):
    """Train both components on the weighted sum of their losses for ``epochs_clf`` epochs."""
    t = _prepare(config, data, models)
    t.run_joint(config.epochs_clf)
    return (t.ae, t.clf), t.history


def train_iterative(config, data, models=None, checkpoint_dir=None, block_callback=None):
    """Alternate AE and frozen-encoder classifier blocks of ``iterative_block`` epochs.

    If ``checkpoint_dir`` is given, the autoencoder is saved after every AE block.
    ``block_callback(index, component, ae, clf)`` runs after every block.
    """
    t = _prepare(config, data, models)
    plan = iterative_schedule(config.epochs_ae, config.epochs_clf, config.iterative_block)
    for i, (component, n_epochs) in enumerate(plan):
        if config.reset_optimizer_each_block and i > 0:
            t.reset_optimizers()
        if component == "ae":
            t.run_ae(n_epochs)
            if checkpoint_dir is not None:
                save_model(Model(t.ae, task=config.task), Path(checkpoint_dir) / f"ae_block{i:02d}")
        else:
            t.run_clf(n_epochs)
        if block_callback is not None:
            block_callback(i, component, t.ae, t.clf)
    return (t.ae, t.clf), t.history


TRAINERS = {"iterative": train_iterative, "joint": train_joint, "cascade": train_cascade}


def train(config, data, models=None):
    return TRAINERS[config.scheme](config, data, models)
