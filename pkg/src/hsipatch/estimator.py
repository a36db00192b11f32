"""scikit-learn compatible wrapper around the two-component network."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_class_targets, check_multilabel_targets, check_patches
from .metrics import example_accuracy
from .network import Model, predict_multilabel, topk_indicators
from .ndcore import sigmoid
from .patching import zscore_apply, zscore_fit
from .schemes import TrainConfig, TrainingData, init_models, train


class PatchClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Autoencoder feature extractor plus classifier for 3 x 3 hyperspectral patches.

    ``X`` holds raw patches ``n x 3 x 3 x bands``; per-band z-score statistics
    are fitted on the training patches and reused at prediction time.

    For ``task="multi_label"`` ``y`` is an ``n x n_classes`` indicator matrix over
    all scene classes, background included. For ``task="single_label"`` ``y``
    holds scene class indices ``1 .. n_classes-1`` and the network predicts
    among those, background excluded.

    ``transform`` returns the 288-wide hidden representation.
    """

    def __init__(
        self,
        scheme="cascade",
        task="multi_label",
        n_classes=None,
        epochs_ae=95,
        epochs_clf=200,
        iterative_block=20,
        batch_size=200,
        lr_ae=1e-2,
        lr_clf=1e-2,
        lr_step_ae=15,
        lr_step_clf=15,
        gamma=0.9,
        dropout_ae=0.3,
        dropout_clf=0.6,
        lambda_l2=1e-4,
        joint_weight_ae=1.0,
        joint_weight_clf=0.3,
        pos_weight=None,
        reset_optimizer_each_block=False,
        seed=0,
    ):
        self.scheme = scheme
        self.task = task
        self.n_classes = n_classes
        self.epochs_ae = epochs_ae
        self.epochs_clf = epochs_clf
        self.iterative_block = iterative_block
        self.batch_size = batch_size
        self.lr_ae = lr_ae
        self.lr_clf = lr_clf
        self.lr_step_ae = lr_step_ae
        self.lr_step_clf = lr_step_clf
        self.gamma = gamma
        self.dropout_ae = dropout_ae
        self.dropout_clf = dropout_clf
        self.lambda_l2 = lambda_l2
        self.joint_weight_ae = joint_weight_ae
        self.joint_weight_clf = joint_weight_clf
        self.pos_weight = pos_weight
        self.reset_optimizer_each_block = reset_optimizer_each_block
        self.seed = seed

    def train_config(self):
        params = self.get_params()
        params.pop("n_classes")
        return TrainConfig(**params)

    def _targets(self, y, n, n_classes):
        if self.task == "multi_label":
            return check_multilabel_targets(y, n, n_classes)
        return check_class_targets(y, n, n_classes) - 1

    def fit(self, X, y, X_valid=None, y_valid=None):
        config = self.train_config()
        X = check_patches(X)
        if config.task == "multi_label":
            n_classes = self.n_classes or np.asarray(y).shape[1]
            n_outputs = n_classes
        else:
            n_classes = self.n_classes or int(np.max(y)) + 1
            n_outputs = n_classes - 1
        targets = self._targets(y, len(X), n_classes)

        self.norm_stats_ = zscore_fit(X)
        data = TrainingData(zscore_apply(X, self.norm_stats_), targets)
        if X_valid is not None:
            X_valid = check_patches(X_valid, X.shape[3])
            data.x_valid = zscore_apply(X_valid, self.norm_stats_)
            data.y_valid = self._targets(y_valid, len(X_valid), n_classes)

        models = init_models(config, X.shape[3], n_outputs)
        (self.autoencoder_, self.classifier_), self.history_ = train(config, data, models)
        self.n_classes_ = n_classes
        self.n_bands_ = X.shape[3]
        self.classes_ = np.arange(n_classes) if config.task == "multi_label" else \
            np.arange(1, n_classes)
        return self

    @classmethod
    def from_model(cls, model, **params):
        """Wrap a loaded checkpoint :class:`~hsipatch.network.Model` as a fitted estimator."""
        est = cls(task=model.task, n_classes=model.class_count, **params)
        est.autoencoder_ = model.autoencoder
        est.classifier_ = model.classifier
        est.norm_stats_ = model.norm_stats
        est.n_classes_ = model.class_count
        est.n_bands_ = model.autoencoder.bands
        est.classes_ = np.arange(model.class_count) if model.task == "multi_label" else \
            np.arange(1, model.class_count)
        return est

    def to_model(self, config_hash=None):
        check_is_fitted(self)
        return Model(self.autoencoder_, self.classifier_, self.norm_stats_, self.task,
                     self.n_classes_, config_hash)

    def transform(self, X):
        check_is_fitted(self)
        X = zscore_apply(check_patches(X, self.n_bands_), self.norm_stats_)
        return np.concatenate([self.autoencoder_.encode(X[i : i + 1024])[0]
                               for i in range(0, len(X), 1024)])

    def decision_function(self, X):
        """Raw logits ``n x n_outputs``."""
        hidden = self.transform(X)
        return np.concatenate([self.classifier_.forward(hidden[i : i + 1024])[0]
                               for i in range(0, len(hidden), 1024)])

    def predict_proba(self, X):
        logits = self.decision_function(X)
        if self.task == "multi_label":
            return sigmoid(logits)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self.decision_function(X)
        if self.task == "multi_label":
            return predict_multilabel(logits)
        return self.classes_[np.argmax(logits, axis=1)]

    def predict_topk(self, X, k):
        """Indicator matrix over ``classes_`` of the ``k`` largest logits per row."""
        return topk_indicators(self.decision_function(X), k)

    def score(self, X, y, sample_weight=None):
        """Example-based (Jaccard) accuracy for multi-label, plain accuracy otherwise."""
        pred = self.predict(X)
        if self.task == "multi_label":
            return example_accuracy(np.asarray(y), pred)
        return float(np.mean(pred == np.asarray(y)))
