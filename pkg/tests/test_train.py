import math

import numpy as np
import pytest

from bananet.data import generate_synthetic_corpus, scan_dataset, split_dataset
from bananet.errors import ConfigError, DataError, NumericError, ShapeError
from bananet.model import LayerSpec, ModelGraph, set_trainable_boundary
from bananet.tensor import Shape4
from bananet.train import (AdamState, TrainConfig, adam_init, adam_step,
                           cross_entropy, evaluate, train)

from oracles import ReferenceAdam


def tiny_model(num_classes=2, seed=0, input_hw=16, dtype=np.float32):
    layers = [
        LayerSpec("conv", "conv1", out_channels=8, stride=2),
        LayerSpec("batchnorm", "conv1_bn"),
        LayerSpec("activation", "conv1_relu", fn="relu"),
        LayerSpec("gap", "gap"),
        LayerSpec("dense", "fc", units=num_classes),
        LayerSpec("softmax", "softmax"),
    ]
    return ModelGraph(Shape4(input_hw, input_hw, 3), layers, dtype=dtype, seed=seed)


def tiny_corpus(tmp_path, classes=2, per_class=12, seed=0):
    root = tmp_path / "corpus"
    generate_synthetic_corpus(root, classes=classes, per_class=per_class,
                              seed=seed, size=16)
    return split_dataset(scan_dataset(root), (0.6, 0.2, 0.2), seed=seed)


# ---------------------------------------------------------------------------
# cross entropy


def test_cross_entropy_perfect_prediction():
    onehot = np.array([[1.0, 0.0, 0.0]])
    assert cross_entropy(onehot, onehot) == 0.0


def test_cross_entropy_uniform_six():
    probs = np.full((1, 6), 1 / 6)
    onehot = np.eye(6)[[2]]
    assert abs(cross_entropy(probs, onehot) - math.log(6)) < 1e-9


def test_cross_entropy_half():
    probs = np.array([[0.5, 0.5]])
    onehot = np.array([[1.0, 0.0]])
    assert abs(cross_entropy(probs, onehot) - math.log(2)) < 1e-9


def test_cross_entropy_errors():
    with pytest.raises(ShapeError):
        cross_entropy(np.ones((1, 3)) / 3, np.ones((1, 4)))
    with pytest.raises(NumericError):
        cross_entropy(np.array([[0.9, 0.9]]), np.array([[1.0, 0.0]]))


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0], dtype=np.float64)}
    state = adam_init(params, ["w"])
    before = params["w"].copy()
    adam_step(params, {"w": np.zeros(2)}, state, 1e-3)
    assert np.array_equal(params["w"], before)


def test_adam_single_step_closed_form():
    # t=1, g=0.5: bias corrections cancel, update = lr * g / (|g| + eps).
    params = {"w": np.array([0.0], dtype=np.float64)}
    state = adam_init(params, ["w"])
    adam_step(params, {"w": np.array([0.5])}, state, 1e-3)
    expected = -1e-3 * 0.5 / (0.5 + 1e-7)
    assert abs(params["w"][0] - expected) < 1e-15
    assert abs(params["w"][0] + 9.999998e-4) < 1e-9


@pytest.mark.parametrize("mode", ["constant", "random"])
def test_adam_five_steps_vs_reference(mode):
    rng = np.random.default_rng(11)
    theta0 = rng.uniform(-1, 1, 6)
    params = {"w": theta0.copy()}
    state = adam_init(params, ["w"])
    ref = ReferenceAdam(theta0, lr=1e-3)
    for step in range(5):
        if mode == "constant":
            g = np.full(6, 0.3)
        else:
            g = rng.uniform(-2, 2, 6)
        adam_step(params, {"w": g}, state, 1e-3)
        want = ref.step(g)
        assert np.max(np.abs(params["w"] - want)) < 1e-10


def test_adam_shape_mismatch():
    params = {"w": np.zeros(3)}
    state = adam_init(params, ["w"])
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(4)}, state, 1e-3)


def test_adam_state_defaults():
    state = AdamState(m={}, v={})
    assert state.beta1 == 0.9 and state.beta2 == 0.999 and state.epsilon == 1e-7


# ---------------------------------------------------------------------------
# config


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


# ---------------------------------------------------------------------------
# training loop


def test_train_loss_decreases_and_logs(tmp_path):
    ds = tiny_corpus(tmp_path)
    model = tiny_model(seed=1)
    config = TrainConfig(epochs=5, batch_size=4, seed=0)
    model, log = train(model, ds, config)
    assert len(log.rows) == 5
    assert log.rows[-1]["train_loss"] < log.rows[0]["train_loss"]
    csv = tmp_path / "log.csv"
    log.to_csv(csv)
    lines = csv.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(lines) == 6


def test_train_deterministic(tmp_path):
    ds = tiny_corpus(tmp_path)
    runs = []
    for _ in range(2):
        model = tiny_model(seed=1)
        model, log = train(model, ds, TrainConfig(epochs=3, batch_size=4, seed=7))
        runs.append((log.rows, {k: v.copy() for k, v in model.params.items()}))
    assert runs[0][0] == runs[1][0]
    for name in runs[0][1]:
        assert runs[0][1][name].tobytes() == runs[1][1][name].tobytes()


def test_train_refuses_without_trainable_params(tmp_path):
    ds = tiny_corpus(tmp_path)
    model = tiny_model()
    set_trainable_boundary(model, len(model.layers))
    with pytest.raises(ConfigError):
        train(model, ds, TrainConfig(epochs=1))


def test_train_requires_splits(tmp_path):
    ds = tiny_corpus(tmp_path)
    ds.splits = ["train"] * len(ds.splits)  # no val
    with pytest.raises(DataError):
        train(tiny_model(), ds, TrainConfig(epochs=1))


def test_train_freeze_invariance(tmp_path):
    ds = tiny_corpus(tmp_path)
    model = tiny_model(seed=2)
    frozen_names = [n for n in model.param_names()
                    if n.startswith(("conv1/", "conv1_bn/"))]
    before = {n: model.params[n].copy() for n in frozen_names}
    config = TrainConfig(epochs=2, batch_size=4, freeze_first_n=3, seed=0)
    model, _ = train(model, ds, config)
    for name in frozen_names:
        assert model.params[name].tobytes() == before[name].tobytes(), name
    # Trainable head must have moved.
    assert not np.array_equal(model.params["fc/weight"],
                              tiny_model(seed=2).params["fc/weight"])


def test_train_patience_zero_runs_all_epochs(tmp_path):
    ds = tiny_corpus(tmp_path)
    model, log = train(tiny_model(seed=3), ds,
                       TrainConfig(epochs=4, batch_size=4,
                                   early_stop_patience=0, seed=1))
    assert len(log.rows) == 4


def test_train_early_stopping_restores_best(tmp_path):
    ds = tiny_corpus(tmp_path)
    # A destructive learning rate makes validation loss bounce immediately.
    config = TrainConfig(epochs=12, learning_rate=5.0, batch_size=4,
                         early_stop_patience=2, seed=0)
    model, log = train(tiny_model(seed=4), ds, config)
    assert len(log.rows) < 12
    from bananet.train import _pass_metrics

    restored_loss, _ = _pass_metrics(model, ds, "val", 4)
    best_logged = min(r["val_loss"] for r in log.rows)
    assert abs(restored_loss - best_logged) < 1e-6


def test_train_nonfinite_names_batch(tmp_path):
    ds = tiny_corpus(tmp_path)
    model = tiny_model(seed=5)
    model.params["fc/weight"][:] = np.float32(2e38)  # overflow on first batch
    with np.errstate(over="ignore"), pytest.raises(NumericError,
                                                   match="epoch 0 batch 0"):
        train(model, ds, TrainConfig(epochs=1, batch_size=4))


# ---------------------------------------------------------------------------
# evaluation


def crafted_mean_classifier():
    """flatten -> dense(2): class 0 fires on dark images, class 1 on bright."""
    layers = [
        LayerSpec("flatten", "flatten"),
        LayerSpec("dense", "fc", units=2),
        LayerSpec("softmax", "softmax"),
    ]
    model = ModelGraph(Shape4(8, 8, 3), layers, seed=0)
    n = 8 * 8 * 3
    w = np.zeros((n, 2), dtype=np.float32)
    w[:, 0] = -1.0 / n
    w[:, 1] = 1.0 / n
    model.params["fc/weight"] = w
    model.params["fc/bias"] = np.zeros(2, dtype=np.float32)
    return model


def test_evaluate_perfect_predictions(tmp_path):
    from PIL import Image

    root = tmp_path / "bw"
    for name, level in (("dark", 30), ("light", 220)):
        d = root / name
        d.mkdir(parents=True)
        for i in range(4):
            Image.new("RGB", (8, 8), (level + i, level + i, level + i)).save(
                d / f"{i}.png")
    ds = scan_dataset(root)
    ds.splits = ["test"] * len(ds.samples)
    report = evaluate(crafted_mean_classifier(), ds, "test")
    assert np.array_equal(report.confusion, np.diag([4, 4]))
    assert report.accuracy == 1.0


def test_evaluate_empty_split(tmp_path):
    ds = tiny_corpus(tmp_path)
    ds.splits = [None] * len(ds.splits)
    with pytest.raises(DataError):
        evaluate(tiny_model(), ds, "test")
