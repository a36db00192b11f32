"""Patch extraction, label assignment, z-score normalization and splitting."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, InputError, SceneLoadError
from .ndcore import rng_stream
from .sceneio import load_scene, scene_paths

PATCH_SIZE = 3
SPLIT_TAGS = ("train", "valid", "test")


@dataclass(eq=False)
class Patch:
    origin_row: int
    origin_col: int
    values: np.ndarray
    pixel_labels: np.ndarray

    @property
    def classes(self):
        return np.unique(self.pixel_labels)


def extract_patches(scene, labels, patch_size=PATCH_SIZE):
    """Cut the scene into non-overlapping ``patch_size`` windows in row-major order.

    Trailing rows and columns that do not fill a whole window are dropped.
    """
    if (labels.height, labels.width) != (scene.height, scene.width):
        raise ConfigurationError(
            f"label map {labels.labels.shape} does not match scene {scene.height}x{scene.width}"
        )
    s = patch_size
    patches = []
    for r in range(0, scene.height - s + 1, s):
        for c in range(0, scene.width - s + 1, s):
            patches.append(
                Patch(r, c, scene.values[r : r + s, c : c + s], labels.labels[r : r + s, c : c + s])
            )
    return patches


class _PatchSet:
    def __len__(self):
        return len(self.patches)

    @property
    def values(self):
        """All patch values stacked as ``n x size x size x bands`` float64."""
        if not self.patches:
            return np.zeros((0, PATCH_SIZE, PATCH_SIZE, 0))
        return np.stack([p.values for p in self.patches]).astype(np.float64)

    @property
    def origins(self):
        return np.array([(p.origin_row, p.origin_col) for p in self.patches], dtype=np.int64)

    def counts(self):
        n_uniform = int(np.count_nonzero(self.is_uniform))
        return {"mixed": len(self) - n_uniform, "uniform": n_uniform, "total": len(self)}


class MultiLabelPatchSet(_PatchSet):
    def __init__(self, patches, annotations, is_uniform):
        self.patches = list(patches)
        self.annotations = np.asarray(annotations, dtype=np.uint8)
        self.is_uniform = np.asarray(is_uniform, dtype=bool)

    @property
    def class_count(self):
        return self.annotations.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return MultiLabelPatchSet(
            [self.patches[i] for i in index], self.annotations[index], self.is_uniform[index]
        )


class SingleLabelPatchSet(_PatchSet):
    def __init__(self, patches, labels, is_uniform):
        self.patches = list(patches)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.is_uniform = np.asarray(is_uniform, dtype=bool)

    @property
    def targets(self):
        """Class indices shifted down by one so background-free classes start at 0."""
        return self.labels - 1

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return SingleLabelPatchSet(
            [self.patches[i] for i in index], self.labels[index], self.is_uniform[index]
        )


def assign_multilabels(candidates, class_count):
    kept, rows, uniform = [], [], []
    for patch in candidates:
        present = np.unique(patch.pixel_labels)
        if present.size == 1 and present[0] == 0:
            continue
        onehot = np.zeros(class_count, dtype=np.uint8)
        onehot[present] = 1
        kept.append(patch)
        rows.append(onehot)
        uniform.append(present.size == 1)
    annotations = np.array(rows, dtype=np.uint8).reshape(len(kept), class_count)
    return MultiLabelPatchSet(kept, annotations, uniform)


def assign_single_labels(candidates):
    kept, labels, uniform = [], [], []
    for patch in candidates:
        s = patch.pixel_labels.shape[0]
        center = int(patch.pixel_labels[s // 2, s // 2])
        if center == 0:
            continue
        kept.append(patch)
        labels.append(center)
        uniform.append(bool(np.all(patch.pixel_labels == center)))
    return SingleLabelPatchSet(kept, labels, uniform)


def filter_uniform(patch_set):
    """Keep only uniform patches; a multi-label set becomes a single-label one."""
    if not np.any(patch_set.is_uniform):
        raise InputError("uniform-only filter selected no patches: the set has no uniform patches")
    subset = patch_set.subset(patch_set.is_uniform)
    if isinstance(subset, SingleLabelPatchSet):
        return subset
    return SingleLabelPatchSet(subset.patches, subset.annotations.argmax(axis=1), subset.is_uniform)


def sample(scene, labels, mode, patch_size=PATCH_SIZE):
    candidates = extract_patches(scene, labels, patch_size)
    if mode == "multi":
        return assign_multilabels(candidates, scene.class_count)
    if mode == "single":
        return assign_single_labels(candidates)
    raise ConfigurationError(f"sampling mode must be 'multi' or 'single', got {mode!r}")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def zscore_fit(train_values):
    """Per-band mean and population std over every pixel of the training patches."""
    x = np.asarray(train_values, dtype=np.float64)
    if x.size == 0:
        raise ConfigurationError("cannot fit normalization statistics on an empty training set")
    x = x.reshape(-1, x.shape[-1])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-12] = 1.0
    return NormStats(mean, std)


def zscore_apply(values, stats):
    x = np.asarray(values, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise ConfigurationError(
            f"normalization stats cover {stats.mean.shape[0]} bands, data has {x.shape[-1]}"
        )
    return (x - stats.mean) / stats.std


def split_sizes(n):
    """``(train, valid, test)`` with test = ceil(n/10) and valid = ceil((n - test)/10)."""
    test = -(-n // 10)
    valid = -(-(n - test) // 10)
    return n - test - valid, valid, test


@dataclass
class SplitAssignment:
    tags: np.ndarray
    seed: int

    def indices(self, tag):
        return np.flatnonzero(self.tags == tag)

    def sizes(self):
        return {tag: int(np.count_nonzero(self.tags == tag)) for tag in SPLIT_TAGS}


def split(n_or_set, seed):
    n = n_or_set if isinstance(n_or_set, (int, np.integer)) else len(n_or_set)
    if n < 1:
        raise ConfigurationError("cannot split an empty patch set")
    n_train, n_valid, n_test = split_sizes(n)
    order = rng_stream(seed, "split").permutation(n)
    tags = np.empty(n, dtype="<U5")
    tags[order[:n_test]] = "test"
    tags[order[n_test : n_test + n_valid]] = "valid"
    tags[order[n_test + n_valid :]] = "train"
    return SplitAssignment(tags, int(seed))


def write_manifest(path, patch_set, scene_path, assignment=None, patch_size=PATCH_SIZE):
    """Serialize patch origins, labels and split tags alongside a scene reference."""
    path = Path(path)
    header = scene_paths(scene_path)[0]
    try:
        scene_ref = header.resolve().relative_to(path.parent.resolve()).as_posix()
    except ValueError:
        scene_ref = header.resolve().as_posix()
    multi = isinstance(patch_set, MultiLabelPatchSet)
    entries = []
    for i, p in enumerate(patch_set.patches):
        labels = (
            np.flatnonzero(patch_set.annotations[i]).tolist()
            if multi
            else [int(patch_set.labels[i])]
        )
        entry = {"origin": [p.origin_row, p.origin_col], "labels": labels,
                 "uniform": bool(patch_set.is_uniform[i])}
        if assignment is not None:
            entry["split"] = str(assignment.tags[i])
        entries.append(entry)
    manifest = {
        "scene": scene_ref,
        "mode": "multi" if multi else "single",
        "patch_size": patch_size,
        "class_count": int(patch_set.class_count) if multi else None,
        "split_seed": None if assignment is None else assignment.seed,
        "counts": patch_set.counts(),
        "patches": entries,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def read_manifest(path):
    """Rebuild ``(scene, patch_set, assignment_or_None)`` from a manifest and its scene."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SceneLoadError(f"missing manifest file: {path}", field="manifest") from None
    scene_ref = Path(manifest["scene"])
    if not scene_ref.is_absolute():
        scene_ref = path.parent / scene_ref
    scene, labels = load_scene(scene_ref)
    s = int(manifest["patch_size"])
    patches, rows, uniform, tags = [], [], [], []
    for entry in manifest["patches"]:
        r, c = entry["origin"]
        patches.append(
            Patch(r, c, scene.values[r : r + s, c : c + s], labels.labels[r : r + s, c : c + s])
        )
        rows.append(entry["labels"])
        uniform.append(entry["uniform"])
        tags.append(entry.get("split"))
    if manifest["mode"] == "multi":
        annotations = np.zeros((len(patches), scene.class_count), dtype=np.uint8)
        for i, labs in enumerate(rows):
            annotations[i, labs] = 1
        patch_set = MultiLabelPatchSet(patches, annotations, uniform)
        check = assign_multilabels(patches, scene.class_count)
        consistent = len(check) == len(patches) and np.array_equal(check.annotations, annotations)
    else:
        patch_set = SingleLabelPatchSet(patches, [labs[0] for labs in rows], uniform)
        check = assign_single_labels(patches)
        consistent = len(check) == len(patches) and np.array_equal(check.labels, patch_set.labels)
    if not consistent:
        raise SceneLoadError(f"{path}: manifest labels disagree with scene {scene_ref}",
                             field="labels")
    assignment = None
    if tags and all(t is not None for t in tags):
        assignment = SplitAssignment(np.array(tags, dtype="<U5"), manifest["split_seed"])
    return scene, patch_set, assignment
