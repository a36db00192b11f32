"""Multi-label classification of hyperspectral patches with an autoencoder + classifier."""

from .config import ExperimentConfig, load_config
from .estimator import PatchClassifier
from .exceptions import ConfigurationError, InputError, SceneLoadError
from .network import Model, build_autoencoder, build_classifier, load_model, save_model
from .patching import (
    assign_multilabels,
    assign_single_labels,
    extract_patches,
    split,
    zscore_apply,
    zscore_fit,
)
from .pipeline import run_eval, run_sweep, run_train
from .sceneio import LabelMap, SceneCube, SynthSpec, load_scene, save_scene, synth_scene
from .schemes import TrainConfig, train_cascade, train_iterative, train_joint

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ExperimentConfig",
    "InputError",
    "LabelMap",
    "Model",
    "PatchClassifier",
    "SceneCube",
    "SceneLoadError",
    "SynthSpec",
    "TrainConfig",
    "assign_multilabels",
    "assign_single_labels",
    "build_autoencoder",
    "build_classifier",
    "extract_patches",
    "load_config",
    "load_model",
    "load_scene",
    "run_eval",
    "run_sweep",
    "run_train",
    "save_model",
    "save_scene",
    "split",
    "synth_scene",
    "train_cascade",
    "train_iterative",
    "train_joint",
    "zscore_apply",
    "zscore_fit",
]
