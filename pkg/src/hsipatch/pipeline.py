"""End-to-end runs: scene -> patches -> split -> normalization -> training -> evaluation.

Every function here is deterministic given its inputs. Wall-clock timings are
kept out of the run report and written to ``timing.json`` so that repeated runs
produce byte-identical ``report.json`` files.
"""

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimator import PatchClassifier
from .exceptions import ConfigurationError, InputError
from .metrics import (
    multilabel_report,
    per_class_csv,
    single_label_accuracy,
    topk_extended_eval,
)
from .network import Model, load_model, parameters_digest, predict_multilabel, save_model
from .patching import (
    MultiLabelPatchSet,
    SingleLabelPatchSet,
    filter_uniform,
    read_manifest,
    sample,
    split,
    write_manifest,
    zscore_apply,
    zscore_fit,
)
from .sceneio import load_scene, save_scene, synth_scene
from .schemes import TrainingData, init_models, train, train_iterative

RUN_FORMAT = "hsipatch-run/1"
SWEEP_METRICS = {
    "multi_label": ("accuracy", "hamming_loss", "precision", "recall"),
    "single_label": ("overall_accuracy",),
}


@dataclass
class PreparedData:
    scene: object
    labels: object
    scene_path: Path
    patch_set: object
    assignment: object


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(payload), indent=2) + "\n", encoding="utf-8")
    return path


def jsonable(value):
    """Replace NaN (a class absent from a split) with ``None`` so the JSON stays strict."""
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    return value


def sampling_summary(patch_set):
    """Mixed/uniform/total patch counts, plus the mixed patches that touch background."""
    counts = patch_set.counts()
    with_background = sum(
        1 for p, uniform in zip(patch_set.patches, patch_set.is_uniform)
        if not uniform and np.any(p.pixel_labels == 0)
    )
    mode = "multi" if isinstance(patch_set, MultiLabelPatchSet) else "single"
    return {"mode": mode, "total": counts["total"], "mixed": counts["mixed"],
            "uniform": counts["uniform"], "mixed_with_background": int(with_background)}


def format_sampling_table(summary, scene_name=""):
    """Text table: mixed / uniform / total with percentages of the total."""
    total = summary["total"]
    pct = (lambda k: f"{round(100 * k / total)}%") if total else (lambda k: "-")
    kind = "multi-labels" if summary["mode"] == "multi" else "single-labels"
    title = "Multi-Label Sampling" if summary["mode"] == "multi" else "Single-Label Sampling"
    rows = [
        (f"{kind} mixed", summary["mixed"], pct(summary["mixed"])),
        ("single-labels uniform", summary["uniform"], pct(summary["uniform"])),
        ("Total", total, "100%" if total else "-"),
        ("  mixed with background", summary["mixed_with_background"],
         pct(summary["mixed_with_background"])),
    ]
    width = max(len(r[0]) for r in rows) + 2
    lines = [f"{title}{'  (' + scene_name + ')' if scene_name else ''}",
             f"{'':{width}}{'count':>8}{'%':>7}"]
    lines += [f"{name:{width}}{count:>8}{share:>7}" for name, count, share in rows]
    return "\n".join(lines) + "\n"


def materialize_scene(cfg, out_dir):
    """Path of the run's scene; a synthetic scene is generated and saved under ``out_dir``."""
    if cfg.synth is None:
        return Path(cfg.scene)
    scene, labels = synth_scene(cfg.synth)
    path = Path(out_dir) / "scene" / cfg.synth.name
    save_scene(scene, labels, path)
    return path


def prepare(scene_path, mode, seed):
    scene, labels = load_scene(scene_path)
    patch_set = sample(scene, labels, mode)
    if len(patch_set) == 0:
        raise InputError(f"sampling mode {mode!r} produced no patches from {scene_path}")
    return PreparedData(scene, labels, Path(scene_path), patch_set, split(len(patch_set), seed))


def task_targets(patch_set):
    if isinstance(patch_set, MultiLabelPatchSet):
        return patch_set.annotations.astype(np.float64)
    return patch_set.targets


def training_data(patch_set, assignment):
    """Normalized train/valid arrays; statistics come from the training split only."""
    x, y = patch_set.values, task_targets(patch_set)
    tr, va = assignment.indices("train"), assignment.indices("valid")
    if len(tr) == 0:
        raise ConfigurationError(f"training split is empty ({len(patch_set)} patches in total)")
    stats = zscore_fit(x[tr])
    data = TrainingData(zscore_apply(x[tr], stats), y[tr])
    if len(va):
        data.x_valid, data.y_valid = zscore_apply(x[va], stats), y[va]
    return data, stats


def n_outputs_for(task, class_count):
    """Multi-label heads cover every class incl. background; single-label heads skip it."""
    return class_count if task == "multi_label" else class_count - 1


def model_logits(model, values):
    if len(values) == 0:
        raise InputError("evaluation set is empty")
    if model.classifier is None:
        raise ConfigurationError("checkpoint has no classifier")
    return PatchClassifier.from_model(model).decision_function(values)


def check_compatible(model, scene):
    problems = []
    if model.autoencoder.bands != scene.bands:
        problems.append(f"checkpoint expects {model.autoencoder.bands} bands, "
                        f"scene {scene.name!r} has {scene.bands}")
    if model.class_count is not None and model.class_count != scene.class_count:
        problems.append(f"checkpoint was trained on {model.class_count} classes, "
                        f"scene {scene.name!r} has {scene.class_count}")
    if problems:
        raise ConfigurationError("incompatible checkpoint and manifest: " + "; ".join(problems))


def evaluate(model, patch_set):
    """Standard metrics of ``model`` on ``patch_set`` (multi-label or single-label)."""
    logits = model_logits(model, patch_set.values)
    if model.task == "multi_label":
        if not isinstance(patch_set, MultiLabelPatchSet):
            raise ConfigurationError("a multi-label checkpoint needs a multi-label manifest")
        return multilabel_report(patch_set.annotations, predict_multilabel(logits))
    if not isinstance(patch_set, SingleLabelPatchSet):
        raise ConfigurationError(
            "a single-label checkpoint cannot score multi-label patches directly; "
            "use the uniform-only filter or top-k mode"
        )
    pred = np.argmax(logits, axis=1) + 1
    return single_label_accuracy(patch_set.labels, pred, np.arange(1, model.class_count))


def evaluate_without_background(model, patch_set):
    """Multi-label metrics with the background column removed from truth and prediction.

    Rows left without any true label are skipped and counted in ``n_skipped``.
    """
    if model.task != "multi_label" or not isinstance(patch_set, MultiLabelPatchSet):
        raise ConfigurationError("background exclusion needs a multi-label checkpoint and manifest")
    pred = predict_multilabel(model_logits(model, patch_set.values))[:, 1:]
    truth = patch_set.annotations[:, 1:].astype(bool)
    keep = truth.any(axis=1)
    report = multilabel_report(truth[keep], pred[keep])
    report.n_skipped = int(np.count_nonzero(~keep))
    return report


def evaluate_topk(model, patch_set, reference=None):
    """Top-k extended evaluation of a single-label checkpoint on multi-label patches.

    With a ``reference`` multi-label model, k per patch is the number of
    non-background labels it predicts; otherwise k is the number of true labels.
    """
    if model.task != "single_label":
        raise ConfigurationError("top-k mode scores a single-label checkpoint")
    if not isinstance(patch_set, MultiLabelPatchSet):
        raise ConfigurationError("top-k mode needs a multi-label manifest")
    logits = model_logits(model, patch_set.values)
    ks = None
    if reference is not None:
        if reference.task != "multi_label":
            raise ConfigurationError("the top-k reference checkpoint must be multi-label")
        ref_pred = predict_multilabel(model_logits(reference, patch_set.values))
        ks = np.count_nonzero(ref_pred[:, 1:], axis=1)
    return topk_extended_eval(patch_set.annotations, logits, ks)


def _uniform_subset(patch_set):
    if not np.any(patch_set.is_uniform):
        raise InputError("uniform-only filter selected no patches: the set has no uniform patches")
    return patch_set.subset(np.flatnonzero(patch_set.is_uniform))


def _class_table(report, class_names):
    if hasattr(report, "class_ids") and report.class_ids:
        ids = list(report.class_ids)
    else:
        ids = list(range(len(report.per_class_accuracy)))
        if len(ids) == len(class_names) - 1:  # background column removed
            ids = [i + 1 for i in ids]
    names = [class_names[i] if i < len(class_names) else str(i) for i in ids]
    return ids, names


def class_accuracy_csv(reports, class_names):
    """Per-class accuracy CSV with one column per entry of ``reports``."""
    first = next(iter(reports.values()))
    ids, names = _class_table(first, class_names)
    accuracies = {key: r.per_class_accuracy for key, r in reports.items()}
    return per_class_csv(ids, names, first.class_frequency, accuracies)


def run_eval(checkpoint, manifest, split_tag=None, uniform_only=False, topk=False,
             exclude_background=False, reference=None):
    """Evaluate a checkpoint on a patch manifest; returns ``(report, class_names)``.

    ``split_tag`` picks a split recorded in the manifest; by default the test
    split is used when the manifest carries one, otherwise every patch.
    """
    model = load_model(checkpoint)
    scene, patch_set, assignment = read_manifest(manifest)
    check_compatible(model, scene)
    if split_tag is None:
        split_tag = "test" if assignment is not None else "all"
    if split_tag != "all":
        if assignment is None:
            raise ConfigurationError(f"manifest {manifest} records no split; use split 'all'")
        patch_set = patch_set.subset(assignment.indices(split_tag))
    if uniform_only:
        patch_set = _uniform_subset(patch_set)
    ref_model = None
    if reference is not None:
        ref_model = load_model(reference)
        check_compatible(ref_model, scene)
    if topk:
        report = evaluate_topk(model, patch_set, ref_model)
    elif exclude_background:
        report = evaluate_without_background(model, patch_set)
    else:
        if uniform_only and model.task == "single_label":
            patch_set = filter_uniform(patch_set)
        report = evaluate(model, patch_set)
    return report, list(scene.class_names)


def write_eval_outputs(report, class_names, out_dir, formats=("json", "csv")):
    out = Path(out_dir)
    paths = []
    if "json" in formats:
        paths.append(_write_json(out / "metrics.json", report.to_dict()))
    if "csv" in formats:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "per_class.csv"
        path.write_text(class_accuracy_csv({"accuracy": report}, class_names), encoding="utf-8")
        paths.append(path)
    return paths


def _split_digest(assignment):
    return hashlib.sha256("\n".join(assignment.tags.tolist()).encode("utf-8")).hexdigest()[:16]


def run_train(cfg, out_dir=None):
    """Run one experiment and write its artifacts; returns the run report as a dict.

    Artifacts under the output directory: ``report.json``, ``history.csv``,
    ``model.manifest.json`` + ``model.params``, ``patches.json``, ``timing.json``,
    per-split ``metrics_<split>.json`` / ``per_class_<split>.csv`` depending on
    the configured formats, and the generated scene for synthetic runs.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    clock = {"start": time.perf_counter()}

    scene_path = materialize_scene(cfg, out)
    prepared = prepare(scene_path, cfg.mode, cfg.seed)
    scene, patch_set, assignment = prepared.scene, prepared.patch_set, prepared.assignment
    write_manifest(out / "patches.json", patch_set, scene_path, assignment)
    data, stats = training_data(patch_set, assignment)
    clock["prepared"] = time.perf_counter()

    tc = cfg.train
    models = init_models(tc, scene.bands, n_outputs_for(tc.task, scene.class_count))
    if tc.scheme == "iterative":
        (ae, clf), history = train_iterative(tc, data, models, checkpoint_dir=out / "checkpoints")
    else:
        (ae, clf), history = train(tc, data, models)
    clock["trained"] = time.perf_counter()

    model = Model(ae, clf, stats, tc.task, scene.class_count, cfg.config_hash())
    save_model(model, out / "model")
    history.to_csv(out / "history.csv")

    metrics = {}
    for tag in ("train", "valid", "test"):
        idx = assignment.indices(tag)
        if len(idx) == 0:
            metrics[tag] = None
            continue
        report = evaluate(model, patch_set.subset(idx))
        metrics[tag] = report.to_dict()
        if "json" in cfg.formats:
            _write_json(out / f"metrics_{tag}.json", report.to_dict())
        if "csv" in cfg.formats:
            (out / f"per_class_{tag}.csv").write_text(
                class_accuracy_csv({"accuracy": report}, scene.class_names), encoding="utf-8"
            )
    clock["evaluated"] = time.perf_counter()

    run_report = {
        "format": RUN_FORMAT,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "config": cfg.echo(),
        "dataset": {
            "scene": scene.name,
            "source": "synthetic" if cfg.synth is not None else "file",
            "height": scene.height,
            "width": scene.width,
            "bands": scene.bands,
            "class_count": scene.class_count,
            "class_names": list(scene.class_names),
            "patches": sampling_summary(patch_set),
            "split": assignment.sizes(),
            "split_digest": _split_digest(assignment),
        },
        "model": {
            "checkpoint": "model.manifest.json",
            "n_params": sum(l.n_params for l in model.layers),
            "parameters_sha256": parameters_digest(model),
        },
        "metrics": metrics,
        "history": {
            "csv": "history.csv",
            "records": [
                {c: getattr(r, c) for c in history.COLUMNS} for r in history.records
            ],
        },
    }
    _write_json(out / "report.json", run_report)
    _write_json(out / "timing.json", {
        "prepare_seconds": clock["prepared"] - clock["start"],
        "train_seconds": clock["trained"] - clock["prepared"],
        "evaluate_seconds": clock["evaluated"] - clock["trained"],
        "total_seconds": clock["evaluated"] - clock["start"],
    })
    return run_report


def run_sweep(cfg, schemes, out_dir=None):
    """Train every scheme on the same data split and seed; returns the sweep summary.

    Each scheme runs in its own subdirectory. A failing scheme is recorded in
    ``sweep.json`` and leaves an empty column; the sweep carries on.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    results, errors, digests, test_reports = {}, {}, {}, {}
    for scheme in schemes:
        try:
            report = run_train(cfg.with_overrides(scheme=scheme), out / scheme)
        except Exception as exc:  # recorded, the remaining schemes still run
            errors[scheme] = f"{type(exc).__name__}: {exc}"
            continue
        results[scheme] = report["metrics"]["test"]
        digests[scheme] = report["dataset"]["split_digest"]
        test_reports[scheme] = report

    metric_names = SWEEP_METRICS[cfg.task]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric"] + list(schemes))
    for name in metric_names:
        writer.writerow([name] + [
            "" if results.get(s) is None else repr(float(results[s][name])) for s in schemes
        ])
    (out / "comparison.csv").write_text(buf.getvalue(), encoding="utf-8")

    if results:
        first = next(iter(test_reports.values()))
        class_names = first["dataset"]["class_names"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        ids = first["metrics"]["test"].get("class_ids") or list(range(len(class_names)))
        writer.writerow(["class", "name", "frequency"] + list(results))
        freq = first["metrics"]["test"]["class_frequency"]
        for i, cid in enumerate(ids):
            row = [cid, class_names[cid], freq[i]]
            for s in results:
                acc = results[s]["per_class_accuracy"][i]
                row.append("" if acc is None or acc != acc else f"{100.0 * acc:.2f}")
            writer.writerow(row)
        (out / "per_class.csv").write_text(buf.getvalue(), encoding="utf-8")

    summary = {
        "schemes": list(schemes),
        "task": cfg.task,
        "test_metrics": {s: results.get(s) for s in schemes},
        "split_digest": digests,
        "shared_split": len(set(digests.values())) <= 1,
        "errors": errors,
    }
    _write_json(out / "sweep.json", summary)
    return summary
