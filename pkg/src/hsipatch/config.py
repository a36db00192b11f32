"""Experiment configuration files.

An experiment is described by a TOML file with one table per stage::

    seed = 7

    [synth]                 # or: [data] scene = "scenes/paviau.json"
    height = 60
    width = 60
    bands = 16
    class_count = 4

    [sampling]
    mode = "multi"          # "multi" or "single"

    [train]
    preset = "paviau"       # optional: start from a published hyperparameter set
    scheme = "joint"
    epochs_clf = 50

    [output]
    dir = "runs/demo"
    formats = ["json", "csv"]

Relative paths are resolved against the directory holding the config file.
The experiment seed drives the split, initialization, dropout and shuffling;
it overrides any ``seed`` key inside ``[train]``.
"""

import hashlib
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigurationError
from .schemes import TrainConfig, preset
from .sceneio import SynthSpec, scene_paths

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("multi", "single")
FORMATS = ("json", "csv")
TASK_BY_MODE = {"multi": "multi_label", "single": "single_label"}
_SECTIONS = ("seed", "data", "synth", "sampling", "train", "output")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one training run."""

    train: TrainConfig
    mode: str = "multi"
    scene: Path = None
    synth: SynthSpec = None
    preset: str = None
    output_dir: Path = None
    formats: tuple = FORMATS
    seed: int = 0
    _problems: list = field(default_factory=list, repr=False, compare=False)

    @property
    def task(self):
        return TASK_BY_MODE[self.mode]

    def validate(self):
        problems = list(self._problems)
        if (self.scene is None) == (self.synth is None):
            problems.append("data: give exactly one of [data].scene or a [synth] table")
        if self.scene is not None:
            missing = [p.as_posix() for p in scene_paths(self.scene) if not p.exists()]
            if missing:
                problems.append(f"data.scene: missing scene files {missing}")
        if self.mode not in MODES:
            problems.append(f"sampling.mode: must be one of {MODES}, got {self.mode!r}")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            problems.append(f"output.formats: unknown formats {bad}; choose from {FORMATS}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            problems.append("seed: must be an unsigned 64-bit integer")
        if self.synth is not None:
            try:
                self.synth.validate()
            except (TypeError, ValueError) as exc:
                problems.append(f"synth: {exc}")
        if self.mode in MODES and self.train.task != self.task:
            problems.append(
                f"train.task: {self.train.task!r} contradicts sampling.mode {self.mode!r}"
            )
        try:
            self.train.validate()
        except (TypeError, ValueError) as exc:
            problems.append(f"train: {exc}")
        if problems:
            raise ConfigurationError("invalid experiment config:\n  " + "\n  ".join(problems))
        return self

    def with_overrides(self, seed=None, output_dir=None, mode=None, scheme=None):
        """Copy with command-line overrides applied (``None`` keeps the current value)."""
        train = self.train.to_dict()
        cfg = ExperimentConfig(**{f.name: getattr(self, f.name) for f in fields(self)
                                  if f.name != "_problems"})
        if mode is not None:
            cfg.mode = mode
            train["task"] = TASK_BY_MODE.get(mode, train["task"])
        if seed is not None:
            cfg.seed = int(seed)
        if scheme is not None:
            train["scheme"] = scheme
        train["seed"] = cfg.seed
        if output_dir is not None:
            cfg.output_dir = Path(output_dir)
        cfg.train = TrainConfig.from_dict(train)
        return cfg.validate()

    def echo(self):
        """Plain-data view of the config, sufficient to rerun the experiment.

        The output directory is left out so that runs written to different
        places produce identical reports.
        """
        return {
            "seed": self.seed,
            "data": None if self.scene is None else {"scene": Path(self.scene).as_posix()},
            "synth": None if self.synth is None else self.synth.to_dict(),
            "sampling": {"mode": self.mode},
            "train": dict(self.train.to_dict(), preset=self.preset),
            "output": {"formats": list(self.formats)},
        }

    def config_hash(self):
        blob = json.dumps(self.echo(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _check_keys(section, table, allowed, problems):
    for key in sorted(set(table) - set(allowed)):
        problems.append(f"{section}.{key}: unknown key")


def _resolve(base, value):
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def from_dict(raw, base_dir="."):
    """Build and validate an :class:`ExperimentConfig` from parsed TOML tables."""
    base = Path(base_dir)
    problems = []
    for key in sorted(set(raw) - set(_SECTIONS)):
        problems.append(f"{key}: unknown section")
    seed = raw.get("seed", 0)

    data = raw.get("data", {})
    _check_keys("data", data, ("scene",), problems)
    scene = _resolve(base, data["scene"]) if "scene" in data else None

    synth = None
    if "synth" in raw:
        known = [f.name for f in fields(SynthSpec)]
        _check_keys("synth", raw["synth"], known, problems)
        synth = SynthSpec(**{k: v for k, v in raw["synth"].items() if k in known})

    sampling = raw.get("sampling", {})
    _check_keys("sampling", sampling, ("mode",), problems)
    mode = sampling.get("mode", "multi")

    train_table = dict(raw.get("train", {}))
    dataset = train_table.pop("preset", None)
    train_table.pop("seed", None)
    known = [f.name for f in fields(TrainConfig)]
    _check_keys("train", train_table, known, problems)
    values = {}
    task = TASK_BY_MODE.get(mode, "multi_label")
    if dataset is not None:
        try:
            values = preset(dataset, task, train_table.get("scheme", "cascade"))
        except ConfigurationError as exc:
            problems.append(f"train.preset: {exc}")
    values.update({k: v for k, v in train_table.items() if k in known})
    values.setdefault("task", task)
    values["seed"] = seed if isinstance(seed, int) and seed >= 0 else 0
    if isinstance(values.get("pos_weight"), list):
        values["pos_weight"] = [float(v) for v in values["pos_weight"]]
    train = TrainConfig.__new__(TrainConfig)
    for f in fields(TrainConfig):
        setattr(train, f.name, values.get(f.name, f.default))

    output = raw.get("output", {})
    _check_keys("output", output, ("dir", "formats"), problems)
    output_dir = _resolve(base, output["dir"]) if "dir" in output else None
    formats = tuple(output.get("formats", FORMATS))

    cfg = ExperimentConfig(
        train=train, mode=mode, scene=scene, synth=synth, preset=dataset,
        output_dir=output_dir, formats=formats, seed=seed, _problems=problems,
    )
    return cfg.validate()


def load_config(path):
    """Parse and validate a TOML experiment file."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config: file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config: {path} is not valid TOML: {exc}") from None
    return from_dict(raw, path.parent)


def synth_spec_from_file(path):
    """Read a :class:`SynthSpec` from a TOML file (top level or a ``[synth]`` table)."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"spec: file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"spec: {path} is not valid TOML: {exc}") from None
    table = raw.get("synth", raw)
    known = [f.name for f in fields(SynthSpec)]
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigurationError(f"invalid SynthSpec: unknown keys {unknown}")
    spec = SynthSpec(**table)
    try:
        spec.validate()
    except TypeError as exc:
        raise ConfigurationError(f"invalid SynthSpec: {exc}") from None
    return spec
