import pytest

from hsipatch.config import ExperimentConfig, from_dict, load_config, synth_spec_from_file
from hsipatch.exceptions import ConfigurationError

from conftest import write_experiment


def test_load_and_resolve(tmp_path):
    cfg = load_config(write_experiment(tmp_path / "exp.toml", scheme="joint", seed=9))
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.seed == 9 and cfg.train.seed == 9
    assert cfg.train.scheme == "joint" and cfg.train.task == "multi_label"
    assert cfg.output_dir == tmp_path / "run"
    assert cfg.synth.height == 12


def test_single_mode_sets_task(tmp_path):
    cfg = load_config(write_experiment(tmp_path / "exp.toml", mode="single"))
    assert cfg.task == "single_label" and cfg.train.task == "single_label"


def test_overrides(tmp_path):
    cfg = load_config(write_experiment(tmp_path / "exp.toml"))
    other = cfg.with_overrides(seed=77, output_dir=tmp_path / "elsewhere", scheme="iterative")
    assert other.seed == 77 and other.train.seed == 77 and other.train.scheme == "iterative"
    assert cfg.seed == 5 and cfg.train.scheme == "cascade"
    assert other.config_hash() != cfg.config_hash()


def test_hash_ignores_output_dir(tmp_path):
    cfg = load_config(write_experiment(tmp_path / "exp.toml"))
    assert cfg.with_overrides(output_dir=tmp_path / "x").config_hash() == cfg.config_hash()


def test_preset_applied_then_overridden():
    cfg = from_dict({"synth": {}, "train": {"preset": "paviau", "scheme": "joint",
                                            "epochs_clf": 3}})
    assert cfg.train.batch_size == 200 and cfg.train.epochs_clf == 3
    assert cfg.echo()["train"]["preset"] == "paviau"


def test_all_problems_reported():
    raw = {"seed": -1, "bogus": {}, "sampling": {"mode": "center"},
           "train": {"batch_size": 0, "learning_rate": 1.0},
           "output": {"formats": ["xml"]}}
    with pytest.raises(ConfigurationError) as err:
        from_dict(raw)
    message = str(err.value)
    for fragment in ("bogus", "learning_rate", "sampling.mode", "batch_size", "formats",
                     "seed", "exactly one of"):
        assert fragment in message


def test_missing_scene_file(tmp_path):
    with pytest.raises(ConfigurationError, match="missing scene files"):
        from_dict({"data": {"scene": "nowhere.json"}}, tmp_path)


def test_missing_or_broken_file(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1")
    with pytest.raises(ConfigurationError, match="not valid TOML"):
        load_config(bad)


def test_synth_spec_file(tmp_path):
    path = tmp_path / "spec.toml"
    path.write_text("height = 9\nwidth = 9\nbands = 3\n")
    assert synth_spec_from_file(path).bands == 3
    path.write_text("[synth]\nbackground_fraction = 1.2\n")
    with pytest.raises(ConfigurationError, match="background_fraction"):
        synth_spec_from_file(path)
    path.write_text("colour = 3\n")
    with pytest.raises(ConfigurationError, match="unknown keys"):
        synth_spec_from_file(path)
