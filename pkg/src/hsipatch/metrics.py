"""Multi-label and single-label evaluation.

Multi-label metrics are example-based: each instance contributes its Jaccard
index ``|y & yhat| / |y | yhat|``, precision ``|y & yhat| / |yhat|`` and recall
``|y & yhat| / |y|``, averaged over instances. An empty prediction contributes
precision 0.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError
from .network import topk_indicators


@dataclass
class MultiLabelReport:
    accuracy: float
    hamming_loss: float
    precision: float
    recall: float
    per_class_accuracy: list
    class_frequency: list
    n_instances: int
    n_skipped: int = 0

    def to_dict(self):
        return {
            "kind": "multi_label",
            "accuracy": self.accuracy,
            "hamming_loss": self.hamming_loss,
            "precision": self.precision,
            "recall": self.recall,
            "n_instances": self.n_instances,
            "n_skipped": self.n_skipped,
            "per_class_accuracy": list(self.per_class_accuracy),
            "class_frequency": list(self.class_frequency),
        }


@dataclass
class SingleLabelReport:
    overall_accuracy: float
    per_class_accuracy: list
    class_frequency: list
    n_instances: int
    class_ids: list = field(default_factory=list)

    def to_dict(self):
        return {
            "kind": "single_label",
            "overall_accuracy": self.overall_accuracy,
            "n_instances": self.n_instances,
            "class_ids": list(self.class_ids),
            "per_class_accuracy": list(self.per_class_accuracy),
            "class_frequency": list(self.class_frequency),
        }


def _as_indicators(truth, pred):
    truth = np.asarray(truth).astype(bool)
    pred = np.asarray(pred).astype(bool)
    if truth.shape != pred.shape or truth.ndim != 2:
        raise InputError(f"truth {truth.shape} and prediction {pred.shape} must be equal n x C")
    return truth, pred


def multilabel_per_class_accuracy(truth, pred):
    """Fraction of instances whose indicator for each class is predicted correctly."""
    truth, pred = _as_indicators(truth, pred)
    n = truth.shape[0]
    if n == 0:
        return np.ones(truth.shape[1])
    return np.count_nonzero(truth == pred, axis=0) / n


def multilabel_report(truth, pred):
    truth, pred = _as_indicators(truth, pred)
    n, n_classes = truth.shape
    if n == 0:
        raise InputError("multilabel_report needs at least one instance")
    if not np.all(truth.any(axis=1)):
        raise InputError("every truth row must contain at least one label")
    inter = np.count_nonzero(truth & pred, axis=1)
    union = np.count_nonzero(truth | pred, axis=1)
    n_true = np.count_nonzero(truth, axis=1)
    n_pred = np.count_nonzero(pred, axis=1)
    precision_terms = np.divide(inter, n_pred, out=np.zeros(n), where=n_pred > 0)
    return MultiLabelReport(
        accuracy=float(np.mean(inter / union)),
        hamming_loss=float(np.count_nonzero(truth != pred) / (n * n_classes)),
        precision=float(np.mean(precision_terms)),
        recall=float(np.mean(inter / n_true)),
        per_class_accuracy=[float(v) for v in multilabel_per_class_accuracy(truth, pred)],
        class_frequency=[int(v) for v in np.count_nonzero(truth, axis=0)],
        n_instances=int(n),
    )


def example_accuracy(truth, pred):
    """Mean per-instance Jaccard index (the multi-label "accuracy")."""
    truth, pred = _as_indicators(truth, pred)
    union = np.count_nonzero(truth | pred, axis=1)
    inter = np.count_nonzero(truth & pred, axis=1)
    return float(np.mean(np.divide(inter, union, out=np.ones(len(union)), where=union > 0)))


def single_label_accuracy(truth, pred, class_ids=None):
    """Overall and per-class accuracy; per-class uses the truth frequency as denominator."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise InputError(f"truth {truth.shape} and prediction {pred.shape} must be equal 1-D")
    if truth.size == 0:
        raise InputError("single_label_accuracy needs at least one instance")
    if class_ids is None:
        class_ids = np.unique(truth)
    per_class, freq = [], []
    for c in class_ids:
        in_class = truth == c
        k = int(np.count_nonzero(in_class))
        freq.append(k)
        per_class.append(float(np.count_nonzero(pred[in_class] == c) / k) if k else float("nan"))
    return SingleLabelReport(
        overall_accuracy=float(np.count_nonzero(truth == pred) / truth.size),
        per_class_accuracy=per_class,
        class_frequency=freq,
        n_instances=int(truth.size),
        class_ids=[int(c) for c in class_ids],
    )


def topk_extended_eval(truth_multilabel, single_label_logits, ks=None, drop_background=True):
    """Score a single-label classifier's top-k logits against multi-label truth.

    ``truth_multilabel`` includes the background column 0, which is removed when
    ``drop_background`` so columns line up with the background-free logits.
    ``ks`` gives the per-instance k (typically how many labels the multi-label
    classifier predicted); by default k is the number of true labels. Rows with
    k = 0, or with no label left after dropping background, are skipped and
    counted in ``n_skipped``.
    """
    truth = np.asarray(truth_multilabel).astype(bool)
    if drop_background:
        truth = truth[:, 1:]
    logits = np.asarray(single_label_logits, dtype=np.float64)
    if truth.shape != logits.shape:
        raise InputError(f"truth {truth.shape} does not align with logits {logits.shape}")
    if ks is None:
        ks = np.count_nonzero(truth, axis=1)
    ks = np.broadcast_to(np.asarray(ks, dtype=np.int64), (truth.shape[0],))
    keep = (ks > 0) & truth.any(axis=1)
    pred = topk_indicators(logits[keep], ks[keep])
    report = multilabel_report(truth[keep], pred)
    report.n_skipped = int(np.count_nonzero(~keep))
    return report


def report_json(report):
    return json.dumps(report.to_dict(), indent=2) + "\n"


def per_class_csv(class_ids, class_names, frequency, accuracies):
    """CSV of ``class,name,frequency,<column>...`` with accuracies in percent.

    ``accuracies`` maps column names (e.g. schemes) to per-class fractions.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    columns = list(accuracies)
    writer.writerow(["class", "name", "frequency"] + columns)
    for i, (cid, name) in enumerate(zip(class_ids, class_names)):
        row = [cid, name, frequency[i]]
        row += [f"{100.0 * accuracies[col][i]:.2f}" for col in columns]
        writer.writerow(row)
    return buf.getvalue()
