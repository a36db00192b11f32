import numpy as np
import pytest

from hsipatch.exceptions import ConfigurationError, InputError, SceneLoadError
from hsipatch.ndcore import rng_stream
from hsipatch.network import (
    Model,
    ae_forward,
    build_autoencoder,
    build_classifier,
    classify,
    load_model,
    parameters_digest,
    predict_multilabel,
    predict_topk,
    save_model,
    topk_indicators,
)
from hsipatch.patching import NormStats


def count_dense(widths):
    return sum(a * b + b for a, b in zip(widths, widths[1:]))


@pytest.mark.parametrize("n_out,expected", [(10, 6_193_822), (17, 6_194_025)])
def test_classifier_parameter_count(n_out, expected):
    clf = build_classifier(n_out, 0.6, rng_stream(0, "c"))
    assert clf.n_params() == expected
    assert count_dense((288, 3000, 1512, 512, 28, n_out)) == expected


def test_autoencoder_parameter_count_salinas():
    ae = build_autoencoder(204, 0.3, rng_stream(0, "a"))
    assert ae.n_params() == 56_108


@pytest.mark.parametrize("bands", [103, 204, 16])
def test_autoencoder_parameter_count_matches_layer_shapes(bands):
    ae = build_autoencoder(bands, 0.3, rng_stream(0, "a"))
    assert ae.n_params() == count_dense((bands, 96, 64, 32, 64, 96, bands))
    # explicit sum for 103 bands: 18,272 encoder + 18,343 decoder
    if bands == 103:
        assert ae.n_params() == 36_615


def test_autoencoder_shapes(rng):
    ae = build_autoencoder(103, 0.0, rng)
    x = rng.normal(size=(2, 3, 3, 103))
    hidden, recon = ae_forward(ae, x)
    assert hidden.shape == (2, 288)
    assert recon.reshape(2, 3, 3, 103).shape == x.shape


def test_autoencoder_is_per_pixel(rng):
    ae = build_autoencoder(6, 0.0, rng)
    x = rng.normal(size=(1, 3, 3, 6))
    hidden, _ = ae_forward(ae, x)
    y = x.copy()
    y[0, 0, 0] += 1.0  # touch one pixel: only its 32 hidden values may change
    hidden2, _ = ae_forward(ae, y)
    changed = np.flatnonzero(hidden[0] != hidden2[0])
    assert changed.size and changed.max() < 32


def test_zero_weights_give_zero_hidden(rng):
    ae = build_autoencoder(4, 0.0, rng)
    for layer in ae.layers:
        layer.weights[:] = 0.0
    hidden, _ = ae_forward(ae, rng.normal(size=(3, 3, 3, 4)))
    assert not hidden.any()


def test_eval_mode_deterministic(rng):
    ae = build_autoencoder(4, 0.5, rng)
    x = rng.normal(size=(3, 3, 3, 4))
    a = ae_forward(ae, x, training=False)
    b = ae_forward(ae, x, training=False)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_shape_errors(rng):
    ae = build_autoencoder(4, 0.0, rng)
    with pytest.raises(ConfigurationError):
        ae.encode(np.zeros((1, 3, 3, 5)))
    clf = build_classifier(3, 0.0, rng)
    with pytest.raises(ConfigurationError):
        classify(clf, np.zeros((1, 287)))


def test_zero_classifier_equal_logits(rng):
    clf = build_classifier(5, 0.0, rng)
    for layer in clf.layers:
        layer.weights[:] = 0.0
    logits = classify(clf, rng.normal(size=(4, 288)))
    assert logits.shape == (4, 5)
    assert np.all(logits == logits[:, :1])


def test_predict_multilabel():
    assert predict_multilabel(np.array([[0.1, -2, 3]])).tolist() == [[1, 0, 1]]
    assert predict_multilabel(np.zeros((1, 3))).tolist() == [[0, 0, 0]]
    assert predict_multilabel(np.full((1, 3), 10.0)).tolist() == [[1, 1, 1]]


def test_predict_topk():
    assert predict_topk(np.array([0.2, 3.0, 1.0]), 1).tolist() == [1]
    assert predict_topk(np.array([5.0, 5.0, 1.0]), 1).tolist() == [0]
    assert sorted(predict_topk(np.array([1.0, 3.0, 2.0]), 2).tolist()) == [1, 2]
    for k in (0, 4):
        with pytest.raises(InputError):
            predict_topk(np.zeros(3), k)


def test_topk_indicators_ties_and_zero_k():
    out = topk_indicators(np.zeros((2, 4)), [2, 0])
    assert out.tolist() == [[1, 1, 0, 0], [0, 0, 0, 0]]


def make_model(rng, bands=4, n_out=3):
    ae = build_autoencoder(bands, 0.3, rng)
    clf = build_classifier(n_out, 0.6, rng)
    stats = NormStats(rng.normal(size=bands), rng.uniform(1, 2, size=bands))
    return Model(ae, clf, stats, "multi_label", n_out, config_hash="abc")


def test_checkpoint_round_trip(tmp_path, rng):
    model = make_model(rng)
    save_model(model, tmp_path / "m")
    loaded = load_model(tmp_path / "m.manifest.json")
    assert parameters_digest(loaded) == parameters_digest(model)
    np.testing.assert_array_equal(loaded.norm_stats.std, model.norm_stats.std)
    save_model(loaded, tmp_path / "m2")
    assert (tmp_path / "m.params").read_bytes() == (tmp_path / "m2.params").read_bytes()
    assert (tmp_path / "m.manifest.json").read_text() == (tmp_path / "m2.manifest.json").read_text()


def test_checkpoint_rejects_wrong_bands(tmp_path, rng):
    save_model(make_model(rng), tmp_path / "m")
    manifest = tmp_path / "m.manifest.json"
    manifest.write_text(manifest.read_text().replace('"bands": 4', '"bands": 5'))
    with pytest.raises(SceneLoadError) as err:
        load_model(tmp_path / "m")
    assert err.value.field == "layers"


def test_checkpoint_rejects_truncated_payload(tmp_path, rng):
    save_model(make_model(rng), tmp_path / "m")
    params = tmp_path / "m.params"
    params.write_bytes(params.read_bytes()[:-8])
    with pytest.raises(SceneLoadError):
        load_model(tmp_path / "m")


def test_autoencoder_checkpoint_seeds_cascade(tmp_path, rng):
    ae = build_autoencoder(4, 0.3, rng)
    save_model(Model(ae), tmp_path / "ae")
    loaded = load_model(tmp_path / "ae")
    assert loaded.classifier is None
    for a, b in zip(ae.encoder, loaded.autoencoder.encoder):
        assert a.weights.tobytes() == b.weights.tobytes()
