import csv
import io
import json

import numpy as np
import pytest

from hsipatch import schemes
from hsipatch.cli import main
from hsipatch.patching import sample
from hsipatch.sceneio import LabelMap, SceneCube, load_scene, save_scene

from conftest import write_experiment


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One small multi-label cascade run, shared by the eval tests."""
    root = tmp_path_factory.mktemp("trained")
    cfg = write_experiment(root / "exp.toml", epochs_ae=2, epochs_clf=3)
    assert main(["train", "--config", str(cfg)]) == 0
    return root / "run"


class TestSynth:
    def write_spec(self, path, extra=""):
        path.write_text(f"height = 12\nwidth = 12\nbands = 4\nclass_count = 3\n{extra}")
        return path

    def test_deterministic(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path / "spec.toml")
        for name in ("a", "b"):
            code, out, _ = run(capsys, "synth", "--config", str(spec), "--seed", "7",
                               "--out", str(tmp_path / name))
            assert code == 0 and json.loads(out)["bands"] == 4
        assert (tmp_path / "a.cube").read_bytes() == (tmp_path / "b.cube").read_bytes()

    def test_seed_changes_payload(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path / "spec.toml")
        run(capsys, "synth", "--config", str(spec), "--seed", "1", "--out", str(tmp_path / "a"))
        run(capsys, "synth", "--config", str(spec), "--seed", "2", "--out", str(tmp_path / "b"))
        assert (tmp_path / "a.cube").read_bytes() != (tmp_path / "b.cube").read_bytes()

    def test_invalid_spec(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path / "spec.toml", "background_fraction = 1.2\n")
        code, _, err = run(capsys, "synth", "--config", str(spec), "--out", str(tmp_path / "a"))
        assert code == 1
        assert "background_fraction" in error_of(err)["message"]


class TestSample:
    def test_table_and_manifest(self, tmp_path, capsys, small_scene_path):
        code, out, _ = run(capsys, "sample", str(small_scene_path), "--mode", "multi",
                           "--seed", "3", "--out", str(tmp_path / "m"))
        assert code == 0
        assert "Multi-Label Sampling" in out and "Total" in out
        manifest = json.loads((tmp_path / "m" / "patches.json").read_text())
        scene, labels = load_scene(small_scene_path)
        expected = len(sample(scene, labels, "multi"))
        assert manifest["counts"]["total"] == len(manifest["patches"]) == expected
        assert all("split" in p for p in manifest["patches"])

    def test_no_background(self, tmp_path, capsys):
        labels = np.tile(np.repeat([1, 2], 3), (6, 1))
        labels[3:, :] = 3 - labels[3:, :]
        path = save_scene(SceneCube("nb", np.zeros((6, 6, 2)), 3), LabelMap(labels), tmp_path / "nb")
        code, out, _ = run(capsys, "sample", str(path))
        assert code == 0
        row = next(line for line in out.splitlines() if "mixed with background" in line)
        assert row.split()[-2] == "0"

    def test_missing_scene(self, tmp_path, capsys):
        code, _, err = run(capsys, "sample", str(tmp_path / "nothing"))
        assert code == 2 and error_of(err)["error"] == "load"


class TestTrain:
    def test_artifacts(self, trained):
        for name in ("report.json", "history.csv", "model.manifest.json", "model.params",
                     "patches.json", "timing.json", "metrics_test.json", "per_class_test.csv"):
            assert (trained / name).exists(), name
        report = json.loads((trained / "report.json").read_text())
        assert report["config"]["train"]["scheme"] == "cascade"
        assert sum(report["dataset"]["split"].values()) == report["dataset"]["patches"]["total"]

    def test_step_lr_trace_logged(self, tmp_path, capsys):
        cfg = write_experiment(tmp_path / "exp.toml", epochs_ae=1, epochs_clf=2)
        cfg.write_text(cfg.read_text().replace("lr_clf = 1e-3", "lr_clf = 1e-5"))
        code, _, _ = run(capsys, "train", "--config", str(cfg))
        assert code == 0
        rows = list(csv.DictReader(io.StringIO((tmp_path / "run" / "history.csv").read_text())))
        lrs = [float(r["lr"]) for r in rows if r["component"] == "clf"]
        assert lrs == pytest.approx([1e-5, 9e-6])

    def test_missing_config(self, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--config", str(tmp_path / "absent.toml"))
        assert code == 1 and error_of(err)["exit_code"] == 1

    def test_bad_config_lists_fields(self, tmp_path, capsys):
        cfg = write_experiment(tmp_path / "exp.toml")
        cfg.write_text(cfg.read_text().replace("batch_size = 8", "batch_size = 0\nfoo = 1"))
        code, _, err = run(capsys, "train", "--config", str(cfg))
        message = error_of(err)["message"]
        assert code == 1 and "batch_size" in message and "train.foo" in message

    def test_bad_seed(self, tmp_path, capsys):
        cfg = write_experiment(tmp_path / "exp.toml")
        code, _, _ = run(capsys, "train", "--config", str(cfg), "--seed", str(2**64))
        assert code == 1


class TestEval:
    def test_reproduces_report(self, trained, capsys):
        code, out, _ = run(capsys, "eval", "--checkpoint", str(trained / "model"),
                           "--manifest", str(trained / "patches.json"))
        assert code == 0
        report = json.loads((trained / "report.json").read_text())
        assert json.loads(out) == report["metrics"]["test"]

    def test_all_splits_and_outputs(self, trained, tmp_path, capsys):
        code, out, _ = run(capsys, "eval", "--checkpoint", str(trained / "model.manifest.json"),
                           "--manifest", str(trained / "patches.json"), "--split", "train",
                           "--out", str(tmp_path / "ev"))
        assert code == 0
        saved = json.loads((trained / "metrics_train.json").read_text())
        assert json.loads(out) == saved
        assert (tmp_path / "ev" / "per_class.csv").exists()

    def test_exclude_background(self, trained, capsys):
        code, out, _ = run(capsys, "eval", "--checkpoint", str(trained / "model"),
                           "--manifest", str(trained / "patches.json"), "--exclude-background")
        assert code == 0
        assert len(json.loads(out)["per_class_accuracy"]) == 3

    def test_uniform_filter_on_uniform_free_set(self, trained, tmp_path, capsys):
        # checkerboard labels leave every 3 x 3 patch mixed
        labels = 1 + (np.indices((12, 12)).sum(axis=0) % 3)
        values = np.random.default_rng(0).normal(size=(12, 12, 5))
        path = save_scene(SceneCube("mixed", values, 4), LabelMap(labels), tmp_path / "mixed")
        run(capsys, "sample", str(path), "--out", str(tmp_path / "mixed_patches.json"))
        code, _, err = run(capsys, "eval", "--checkpoint", str(trained / "model"),
                           "--manifest", str(tmp_path / "mixed_patches.json"), "--filter-uniform")
        assert code == 1 and "no uniform" in error_of(err)["message"]

    def test_incompatible_scene(self, trained, tmp_path, capsys):
        labels = np.ones((6, 6), dtype=int)
        path = save_scene(SceneCube("other", np.zeros((6, 6, 3)), 2), LabelMap(labels),
                          tmp_path / "other")
        run(capsys, "sample", str(path), "--out", str(tmp_path / "p.json"))
        code, _, err = run(capsys, "eval", "--checkpoint", str(trained / "model"),
                           "--manifest", str(tmp_path / "p.json"))
        assert code == 1 and "bands" in error_of(err)["message"]

    def test_topk(self, trained, tmp_path, capsys):
        cfg = write_experiment(tmp_path / "single.toml", mode="single", epochs_ae=1, epochs_clf=1)
        assert main(["train", "--config", str(cfg)]) == 0
        capsys.readouterr()
        single = tmp_path / "run" / "model"
        code, out, _ = run(capsys, "eval", "--checkpoint", str(single), "--manifest",
                           str(trained / "patches.json"), "--topk", "--reference",
                           str(trained / "model"))
        assert code == 0
        payload = json.loads(out)
        assert payload["kind"] == "multi_label"
        n_test = json.loads((trained / "report.json").read_text())["dataset"]["split"]["test"]
        assert payload["n_instances"] + payload["n_skipped"] == n_test
        # a single-label checkpoint cannot score multi-label patches directly
        code, _, _ = run(capsys, "eval", "--checkpoint", str(single), "--manifest",
                         str(trained / "patches.json"))
        assert code == 1


def test_sweep(tmp_path, capsys):
    cfg = write_experiment(tmp_path / "exp.toml", epochs_ae=2, epochs_clf=2)
    cfg.write_text(cfg.read_text().replace("iterative_block = 1", "iterative_block = 5"))
    code, out, _ = run(capsys, "sweep", "--config", str(cfg), "--schemes",
                       "iterative,joint,cascade")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["metric", "iterative", "joint", "cascade"]
    assert [r[0] for r in rows[1:]] == ["accuracy", "hamming_loss", "precision", "recall"]
    assert all(r[1] == r[3] for r in rows[1:])
    summary = json.loads((tmp_path / "run" / "sweep.json").read_text())
    assert summary["shared_split"] and not summary["errors"]
    params = [(tmp_path / "run" / s / "model.params").read_bytes() for s in ("iterative", "cascade")]
    assert params[0] == params[1]


def test_sweep_rejects_unknown_scheme(tmp_path, capsys):
    cfg = write_experiment(tmp_path / "exp.toml")
    code, _, _ = run(capsys, "sweep", "--config", str(cfg), "--schemes", "cascade,greedy")
    assert code == 1


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    assert out.count("PASS") == 12 and "FAIL" not in out


def test_gradcheck_detects_corrupted_gradient(monkeypatch, capsys):
    original = schemes.mse_loss

    def corrupted(pred, target):
        loss, grad = original(pred, target)
        return loss, grad * 1.01

    monkeypatch.setattr(schemes, "mse_loss", corrupted)
    code, out, err = run(capsys, "gradcheck")
    assert code == 3
    assert "FAIL" in out and error_of(err)["error"] == "gradcheck"


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["--help"]) == 0
    capsys.readouterr()
