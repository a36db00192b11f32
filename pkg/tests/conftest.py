import os
from pathlib import Path

import numpy as np
import pytest

from hsipatch.sceneio import SynthSpec, save_scene, synth_scene

DATA_DIR = os.environ.get("HSIPATCH_DATA_DIR")

# Filled by tests/test_acceptance.py; printed once at the end of the session.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


def data_dir():
    return Path(DATA_DIR) if DATA_DIR else None


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_spec():
    return SynthSpec(height=12, width=12, bands=5, class_count=4, noise_sigma=0.05,
                     background_fraction=0.2, region_size=3, seed=3, name="tiny")


@pytest.fixture
def small_scene_path(tmp_path, small_spec):
    scene, labels = synth_scene(small_spec)
    return save_scene(scene, labels, tmp_path / "scene" / small_spec.name)


def write_experiment(path, scheme="cascade", mode="multi", seed=5, epochs_ae=2, epochs_clf=2,
                     height=12, width=12, bands=5, extra_train=""):
    """Write a tiny synthetic experiment TOML and return its path."""
    text = f"""seed = {seed}

[synth]
height = {height}
width = {width}
bands = {bands}
class_count = 4
noise_sigma = 0.05
background_fraction = 0.2
region_size = 3
seed = 3
name = "tiny"

[sampling]
mode = "{mode}"

[train]
scheme = "{scheme}"
epochs_ae = {epochs_ae}
epochs_clf = {epochs_clf}
iterative_block = 1
batch_size = 8
lr_ae = 1e-2
lr_clf = 1e-3
lr_step_ae = 1
lr_step_clf = 1
{extra_train}
[output]
dir = "run"
"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
