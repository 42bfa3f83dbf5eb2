import json
import os
import tempfile

import numpy as np
import pytest

import accentkit as ak


@pytest.fixture(scope="module")
def model():
    return ak.load_model()


@pytest.fixture(scope="module")
def images():
    imgs, labels = ak.held_out_images(8)
    return imgs, labels


def test_model_shape_and_layers(model):
    assert model.input_shape == (3, 32, 32)
    assert model.layer_names()[-1] == "logits"


def test_round_trip_all_kinds(images):
    x = images[0][0]
    for kind in ("pixel", "fourier", "maco-phase"):
        y = ak.round_trip(kind, x)
        assert np.max(np.abs(y - np.clip(x, 1e-4, 1 - 1e-4))) <= 1e-4


def test_predictions_match_labels(model, images):
    imgs, labels = images
    logits = np.array(model.predict_logits(imgs))
    assert logits.shape == (8, 10)
    assert np.mean(np.argmax(logits, axis=1) == np.array(labels)) >= 0.75


def test_accentuation_raises_the_logit(model, images):
    x = images[0][0]
    label = images[1][0]
    out = ak.accentuate(model, x, logit=label, lam=0.0, steps=15)
    assert out["aborted"] is None
    assert len(out["trace"]) == 15
    before = model.predict_logits([x])[0][label]
    after = model.predict_logits([out["image"]])[0][label]
    assert after > before
    assert ak.reg_distance(model, x, x, "conv2") == 0.0


def test_bad_detector_is_a_config_error(model, images):
    with pytest.raises(ValueError):
        ak.accentuate(model, images[0][0], logit=42, steps=1)


def test_worked_mask_example():
    v = list(range(10))
    lo, hi = ak.percentile(v, 20), ak.percentile(v, 80)
    assert ak.normalize_value(5.0, lo, hi) == pytest.approx(0.5926, abs=5e-5)


def test_attribution_and_stripe(model, images):
    m = ak.attribution_map(model, images[0][0], "grad-x-input", logit=0)
    assert m.shape == (1, 32, 32)
    assert np.all(m >= 0)
    verdict = ak.stripe_test(model)
    assert verdict["pixel"]["stripe_a"] < verdict["pixel"]["a_b"]


def test_cli_round_trip():
    with tempfile.TemporaryDirectory() as out:
        code, stdout, err = ak.run_command(["stripe-test", "--out", out])
        assert code == 0, err
        run_dir = stdout.strip().splitlines()[-1]
        with open(os.path.join(run_dir, "stripe.json")) as fh:
            assert "pixel" in json.load(fh)
        code, stdout, _ = ak.run_command(["accentuate", "--lambda", "-3", "--logit", "0", "--test-index", "0"])
        assert code == 1
