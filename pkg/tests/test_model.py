import numpy as np
import pytest

from bananet.errors import ConfigError, ShapeError
from bananet.model import (LayerSpec, ModelGraph, attach_transfer_head,
                           build_base_cnn, build_mobilenet,
                           set_trainable_boundary, summarize, swap_output_layer)
from bananet.tensor import Shape4

# Reference input-size column (homogeneous table, 5x block expanded) for the
# conv/pool/fc/softmax rows of the 224-input depthwise-separable network.
REFERENCE_INPUT_SIZES = [
    (224, 224, 3),
    (112, 112, 32), (112, 112, 32),
    (112, 112, 64), (56, 56, 64),
    (56, 56, 128), (56, 56, 128),
    (56, 56, 128), (28, 28, 128),
    (28, 28, 256), (28, 28, 256),
    (28, 28, 256), (14, 14, 256),
    (14, 14, 512), (14, 14, 512),
    (14, 14, 512), (14, 14, 512),
    (14, 14, 512), (14, 14, 512),
    (14, 14, 512), (14, 14, 512),
    (14, 14, 512), (14, 14, 512),
    (14, 14, 512), (7, 7, 512),
    (7, 7, 1024), (7, 7, 1024),
    (7, 7, 1024),              # avg pool
    (1, 1, 1024),              # fc
    (1000,),                   # softmax
]


def table_rows(model):
    return [(spec, inp) for spec, inp, _ in model.trace
            if spec.kind in ("conv", "dwconv", "pwconv", "gap", "dense", "softmax")]


def test_mobilenet_trace_matches_reference_column():
    model = build_mobilenet(include_top=True)
    rows = table_rows(model)
    assert len(rows) == len(REFERENCE_INPUT_SIZES)
    for (spec, inp), want in zip(rows, REFERENCE_INPUT_SIZES):
        assert inp == want, f"{spec.name}: {inp} != {want}"


def test_mobilenet_conv_census():
    model = build_mobilenet(include_top=True)
    census = model.census()
    assert census["conv"] == 1
    assert census["dwconv"] == 13
    assert census["pwconv"] == 13
    assert census["conv"] + census["dwconv"] + census["pwconv"] == 27


def test_mobilenet_top_width():
    assert build_mobilenet(include_top=True).num_classes == 1000
    topless = build_mobilenet(include_top=False)
    assert topless.trace[-1][2] == (1, 1, 1024)


def test_mobilenet_param_total_matches_ecosystem_count():
    assert build_mobilenet(include_top=True).num_params() == 4_253_864


def test_mobilenet_small_input_composes():
    model = build_mobilenet(include_top=False, input_hw=64)
    assert model.trace[-1][2] == (1, 1, 1024)


def test_base_cnn_census():
    model = build_base_cnn(6)
    census = model.census()
    assert census == {"conv": 4, "maxpool": 4, "batchnorm": 3, "dropout": 1,
                      "dense": 4, "activation": 7, "flatten": 1, "softmax": 1}
    assert model.input_shape.hwc == (256, 256, 3)
    assert model.num_classes == 6

    two = build_base_cnn(2)
    assert two.census()["dense"] == 4
    assert two.num_classes == 2


def test_base_cnn_forward_zero_image():
    model = build_base_cnn(6)
    probs = model.forward(np.zeros((256, 256, 3), dtype=np.float32))
    assert probs.shape == (6,)
    assert abs(probs.sum() - 1.0) < 1e-6


def test_base_cnn_rejects_single_class():
    with pytest.raises(ConfigError):
        build_base_cnn(1)


def test_transfer_head_shape_and_probs():
    backbone = build_mobilenet(include_top=False, input_hw=32)
    model = attach_transfer_head(backbone, 6)
    tail = [(s.kind, s.units) for s in model.layers[-6:]]
    assert tail == [("gap", None), ("dense", 1024), ("dense", 512),
                    ("dense", 256), ("dense", 6), ("softmax", None)]
    assert sum(1 for s in model.layers if s.kind == "gap") == 1

    rng = np.random.default_rng(0)
    probs = model.forward(rng.uniform(-1, 1, (32, 32, 3)).astype(np.float32))
    assert probs.shape == (6,)
    assert abs(probs.sum() - 1.0) < 1e-6

    assert attach_transfer_head(build_mobilenet(include_top=False, input_hw=32),
                                2).num_classes == 2


def test_transfer_head_rejects_topped_backbone():
    full = build_mobilenet(include_top=True, input_hw=32)
    with pytest.raises(ConfigError):
        attach_transfer_head(full, 6)


def test_transfer_head_reproducible():
    b1 = build_mobilenet(include_top=False, input_hw=32, seed=3)
    b2 = build_mobilenet(include_top=False, input_hw=32, seed=3)
    m1 = attach_transfer_head(b1, 6, seed=9)
    m2 = attach_transfer_head(b2, 6, seed=9)
    for name in m1.param_names():
        assert np.array_equal(m1.params[name], m2.params[name]), name


def test_set_trainable_boundary():
    backbone = build_mobilenet(include_top=False, input_hw=32)
    model = attach_transfer_head(backbone, 6)

    set_trainable_boundary(model, 0)
    assert all(s.trainable for s in model.layers)

    set_trainable_boundary(model, 20)
    assert all(not s.trainable for s in model.layers[:20])
    assert all(s.trainable for s in model.layers[20:])
    frozen_names = {s.name for s in model.layers[:20]}
    assert "conv1" in frozen_names and "conv_pw_3_bn" in frozen_names

    set_trainable_boundary(model, len(model.layers))
    assert model.num_trainable_params() == 0

    with pytest.raises(ConfigError):
        set_trainable_boundary(model, len(model.layers) + 1)
    with pytest.raises(ConfigError):
        set_trainable_boundary(model, -1)


def test_swap_output_layer():
    backbone = build_mobilenet(include_top=False, input_hw=32)
    model = attach_transfer_head(backbone, 6, seed=1)
    before = {n: v.copy() for n, v in model.params.items()}
    swapped = swap_output_layer(model, 2, seed=2)
    assert swapped.num_classes == 2
    assert swapped.params["head_out/weight"].shape == (256, 2)
    for name, arr in swapped.params.items():
        if not name.startswith("head_out/"):
            assert np.array_equal(arr, before[name]), name


def test_summarize_renders_reference_rows():
    text = summarize(build_mobilenet(include_top=True))
    assert "Conv / s2" in text
    assert "3 × 3 × 3 × 32" in text
    assert "224 × 224 × 3" in text
    assert "Conv dw / s1" in text
    assert "3 × 3 × 32 dw" in text
    assert "1 × 1 × 32 × 64" in text
    assert "Avg Pool / s1" in text
    assert "Pool 7 × 7" in text
    assert "1024 × 1000" in text
    assert "Classifier" in text
    assert "Total params: 4,253,864" in text


def test_summarize_base_cnn_census_text():
    text = summarize(build_base_cnn(6))
    assert text.count("Conv / s1") == 4
    assert text.count("Max Pool / s2") == 4
    assert text.count("Batch Norm") == 3
    assert text.count("Dropout 0.5") == 1
    assert text.count("FC / s1") == 4
    assert "256 × 256 × 3" in text


def test_summarize_frozen_params():
    backbone = build_mobilenet(include_top=False, input_hw=32)
    model = attach_transfer_head(backbone, 6)
    set_trainable_boundary(model, 20)
    lines = summarize(model).splitlines()
    for line in lines:
        if line.startswith(("conv1 ", "conv_dw_1 ", "conv_pw_1 ")):
            assert line.rstrip().endswith("-")
    assert any(line.startswith("head_fc_1024") and line.rstrip().endswith("yes")
               for line in lines)


def test_duplicate_layer_names_rejected():
    layers = [LayerSpec("gap", "a"), LayerSpec("dense", "a", units=3),
              LayerSpec("softmax", "s")]
    with pytest.raises(ConfigError):
        ModelGraph(Shape4(4, 4, 2), layers)


def test_shape_composition_error():
    layers = [LayerSpec("dense", "d", units=3)]  # dense straight on H x W x C
    with pytest.raises(ShapeError):
        ModelGraph(Shape4(4, 4, 2), layers)


def test_run_validates_input_shape():
    model = build_base_cnn(2)
    with pytest.raises(ShapeError):
        model.forward(np.zeros((64, 64, 3), dtype=np.float32))


def test_mobilenet_forward_shape():
    model = build_mobilenet(include_top=True, input_hw=32)
    probs = model.forward(np.zeros((32, 32, 3), dtype=np.float32))
    assert probs.shape == (1000,)
    assert abs(probs.sum() - 1.0) < 1e-5
