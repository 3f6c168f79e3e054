"""Adam/cross-entropy training with optional early stopping and layer
freezing, plus split evaluation into an EvalReport.

Training is deterministic for a given (config, seed, corpus): batch order,
augmentation draws and dropout masks all derive from the config seed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .errors import ConfigError, DataError, NumericError, ShapeError
from .metrics import EvalReport, make_report
from .model import ModelGraph, set_trainable_boundary


@dataclass
class TrainConfig:
    epochs: int = 16
    learning_rate: float = 1e-3
    batch_size: int = 32
    early_stop_patience: int | None = None  # None or 0 disables
    seed: int = 0
    freeze_first_n: int = 0
    augment: data_mod.AugmentSpec | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, epoch, train_loss, train_acc, val_loss, val_acc):
        self.rows.append({
            "epoch": epoch,
            "train_loss": float(train_loss), "train_acc": float(train_acc),
            "val_loss": float(val_loss), "val_acc": float(val_acc),
        })

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
            for r in self.rows:
                fh.write(f"{r['epoch']},{r['train_loss']:.8f},{r['train_acc']:.6f},"
                         f"{r['val_loss']:.8f},{r['val_acc']:.6f}\n")


def cross_entropy(probs, onehot) -> float:
    """Mean categorical cross-entropy with the probability clamped at 1e-12."""
    probs = np.asarray(probs)
    onehot = np.asarray(onehot)
    if probs.shape != onehot.shape:
        raise ShapeError(f"probs {probs.shape} and labels {onehot.shape} differ")
    if probs.ndim == 1:
        probs, onehot = probs[None], onehot[None]
    sums = probs.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-5):
        raise NumericError("cross_entropy expects probability rows summing to 1")
    logp = np.log(np.maximum(probs, 1e-12))
    return float(-(onehot * logp).sum(axis=-1).mean())


def adam_init(params: dict[str, np.ndarray], names) -> AdamState:
    return AdamState(m={n: np.zeros_like(params[n]) for n in names},
                     v={n: np.zeros_like(params[n]) for n in names})


def adam_step(params, grads, state: AdamState, lr):
    """One bias-corrected Adam update, in place, on the gradient's keys only."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                             f"parameter is {params[name].shape}")
        m = state.m[name]
        v = state.v[name]
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        params[name] -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)).astype(
            params[name].dtype, copy=False
        )
    return params, state


def _pass_metrics(model: ModelGraph, ds, split, batch_size):
    """Loss and accuracy of an inference pass over one split."""
    loss_sum = 0.0
    correct = 0
    total = 0
    for batch in data_mod.make_batches(ds, split, batch_size, model.input_shape,
                                       shuffle=False, dtype=model.dtype):
        probs = model.forward(batch.images)
        n = batch.images.shape[0]
        loss_sum += cross_entropy(probs, batch.labels) * n
        correct += int((probs.argmax(axis=-1) == batch.labels.argmax(axis=-1)).sum())
        total += n
    return loss_sum / total, correct / total


def train(model: ModelGraph, dataset, config: TrainConfig):
    """Fit the model's trainable parameters; returns (model, TrainLog)."""
    if config.freeze_first_n:
        set_trainable_boundary(model, config.freeze_first_n)
    trainable = model.trainable_param_names()
    if not trainable:
        raise ConfigError("model has no trainable parameters; training refused")
    if model.layers[-1].kind != "softmax":
        raise ConfigError("training expects a model ending in softmax")
    for split in ("train", "val"):
        if not dataset.indices(split):
            raise DataError(f"dataset has an empty {split!r} split")

    state = adam_init(model.params, trainable)
    drop_rng = np.random.default_rng([config.seed, 101])
    from_layer = len(model.layers) - 2  # gradient enters at the logits
    patience = config.early_stop_patience or 0
    best_val = np.inf
    best_params = None
    stale = 0
    log = TrainLog()

    for epoch in range(config.epochs):
        loss_sum = 0.0
        correct = 0
        total = 0
        batches = data_mod.make_batches(
            dataset, "train", config.batch_size, model.input_shape,
            seed=config.seed, epoch=epoch, augment_spec=config.augment,
            shuffle=True, dtype=model.dtype,
        )
        for bi, batch in enumerate(batches):
            try:
                run = model.run(batch.images, mode="train", rng=drop_rng,
                                want_caches=True)
                probs = run.output
                loss = cross_entropy(probs, batch.labels)
                n = batch.images.shape[0]
                # Fused softmax + cross-entropy gradient at the logits.
                grad = (probs - batch.labels) / n
                grads, _ = model.backward(run.caches, grad, from_layer=from_layer)
                adam_step(model.params, grads, state, config.learning_rate)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {bi}: {exc}") from exc
            loss_sum += loss * n
            correct += int((probs.argmax(axis=-1) == batch.labels.argmax(axis=-1)).sum())
            total += n

        val_loss, val_acc = _pass_metrics(model, dataset, "val", config.batch_size)
        log.add(epoch, loss_sum / total, correct / total, val_loss, val_acc)

        if patience > 0:
            if val_loss < best_val:
                best_val = val_loss
                best_params = {k: v.copy() for k, v in model.params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    break
    if patience > 0 and best_params is not None:
        model.params = best_params
    return model, log


def evaluate(model: ModelGraph, dataset, split: str, batch_size: int = 32) -> EvalReport:
    """Argmax predictions over one split, no augmentation, into an EvalReport."""
    idx = dataset.indices(split)
    if not idx:
        raise DataError(f"split {split!r} is empty")
    k = len(dataset.class_names)
    cm = np.zeros((k, k), dtype=np.int64)
    for batch in data_mod.make_batches(dataset, split, batch_size, model.input_shape,
                                       shuffle=False, dtype=model.dtype):
        probs = model.forward(batch.images)
        pred = probs.argmax(axis=-1)
        true = batch.labels.argmax(axis=-1)
        for t, p in zip(true, pred):
            cm[int(t), int(p)] += 1
    return make_report(cm, dataset.class_names)


def quality_model_from(model: ModelGraph, num_classes: int = 2, seed: int = 0):
    """Reuse a trained classifier for a new label set: keep every weight,
    swap the output layer when the class count differs."""
    from .model import swap_output_layer

    if model.num_classes == num_classes:
        return model
    return swap_output_layer(model, num_classes, seed=seed)
