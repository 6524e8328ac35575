import numpy as np
import pytest

from covidlite.model import (
    GRADCAM_LAYER,
    build_covidlite,
    format_param_table,
    param_table,
    param_totals,
)
from covidlite.nncore import Dropout

LAYER_COUNTS = [
    2768, 2032, 128, 7136, 256, 26560, 512, 102272, 1024, 136192, 1024, 401152, 2048,
    262656, 65664, 8256, 2080,
]


@pytest.fixture(scope="module")
def model2():
    return build_covidlite(2, seed=0)


@pytest.fixture(scope="module")
def model3():
    return build_covidlite(3, seed=0)


def test_row_count_and_layer_counts(model2):
    rows = param_table(model2)
    assert len(rows) == 26
    nonzero = [r.params for r in rows if r.params][:-1]
    assert nonzero == LAYER_COUNTS
    assert rows[-1].params == 66


def test_totals(model2, model3):
    assert param_totals(model2) == (1_019_330 + 2496, 1_019_330, 2496)
    assert param_totals(model3) == (1_019_363 + 2496, 1_019_363, 2496)
    assert param_table(model3)[-1].params == 99


def test_batchnorm_rows_half_trainable(model3):
    for row in param_table(model3):
        if row.name.startswith("Batch"):
            assert row.trainable * 2 == row.params


def test_spatial_trace(model3):
    pools = [r.output_shape[0] for r in param_table(model3) if r.name.startswith("Maxpool")]
    assert pools == [112, 56, 28, 14, 7, 3, 1]


def test_format_table_lines(model2):
    text = format_param_table(model2)
    assert "Total trainable: 1,019,330" in text
    assert text.splitlines()[-1] == "Non-trainable: 2,496"


def test_forward_zero_image(model3):
    x = np.zeros((1, 224, 224, 3), np.float32)
    p = model3.predict_proba(x)
    assert p.shape == (1, 3)
    assert abs(p.sum() - 1) < 1e-6


def test_forward_is_finite_at_every_layer(model2):
    x = np.random.default_rng(0).random((2, 224, 224, 3), dtype=np.float32)
    for layer in model2:
        x = layer.forward(x, training=True)
        assert np.isfinite(x).all(), layer.name


def test_inference_ignores_dropout(model3):
    x = np.random.default_rng(1).random((1, 224, 224, 3), dtype=np.float32)
    a = model3.forward(x, training=False)
    model3.seed_dropout(np.random.default_rng(123))
    b = model3.forward(x, training=False)
    np.testing.assert_array_equal(a, b)


def test_same_seed_same_parameters():
    a, b = build_covidlite(3, seed=5), build_covidlite(3, seed=5)
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(v, b.state_dict()[k])
    c = build_covidlite(3, seed=6)
    assert not np.array_equal(a.parameters()["fc1/kernel"], c.parameters()["fc1/kernel"])


def test_invalid_class_count():
    with pytest.raises(ValueError):
        build_covidlite(4)


def test_dropout_placement(model3):
    rates = {layer.name: layer.rate for layer in model3 if isinstance(layer, Dropout)}
    assert rates == {
        "pool3_drop": 0.2, "pool4_drop": 0.2, "pool5_drop": 0.2, "pool6_drop": 0.2, "pool7_drop": 0.2,
        "fc1_drop": 0.7, "fc2_drop": 0.5, "fc3_drop": 0.3, "fc4_drop": 0.2,
    }


def test_gradcam_layer_shape(model3):
    x = np.zeros((1, 224, 224, 3), np.float32)
    acts = model3.forward(x, stop=model3.index(GRADCAM_LAYER) + 1)
    assert acts.shape == (1, 3, 3, 512)
