"""Sequential model graphs: the two reference architectures, transfer-head
surgery, the freeze boundary, and the forward/backward executor.

A model is an ordered list of LayerSpec entries plus a WeightStore mapping
"<layer_name>/<param_role>" to the parameter tensor. Shapes are checked
once at build time by composing the whole layer stack.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError, StateError
from .tensor import STORAGE_DTYPE, Shape4

LAYER_KINDS = (
    "conv", "dwconv", "pwconv", "batchnorm", "activation",
    "maxpool", "gap", "flatten", "dense", "dropout", "softmax",
)

# Parameter roles per kind, in serialization order. Moving statistics are
# state, not optimizer targets.
PARAM_ROLES = {
    "conv": ("kernel", "bias"),
    "dwconv": ("depthwise_kernel",),
    "pwconv": ("kernel",),
    "batchnorm": ("gamma", "beta", "moving_mean", "moving_var"),
    "dense": ("weight", "bias"),
}
TRAINABLE_ROLES = {
    "conv": ("kernel", "bias"),
    "dwconv": ("depthwise_kernel",),
    "pwconv": ("kernel",),
    "batchnorm": ("gamma", "beta"),
    "dense": ("weight", "bias"),
}


@dataclass
class LayerSpec:
    """One layer of a sequential model; only the fields its kind uses matter."""

    kind: str
    name: str
    trainable: bool = True
    stride: int = 1
    padding: str = "same"
    kernel_hw: tuple[int, int] = (3, 3)
    out_channels: int | None = None
    use_bias: bool = False
    units: int | None = None
    rate: float = 0.5
    fn: str = "relu"
    window: int = 2
    epsilon: float = 1e-3
    momentum: float = 0.99

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if not self.name:
            raise ConfigError("layer name must be non-empty")


def _fmt_shape(shape) -> str:
    if len(shape) == 1:
        shape = (1, 1, shape[0])
    return " × ".join(str(d) for d in shape)


def _out_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    kind = spec.kind
    if kind in ("conv", "dwconv", "pwconv"):
        if len(in_shape) != 3:
            raise ShapeError(f"{spec.name}: conv input must be H x W x C, got {in_shape}")
        h, w, c = in_shape
        kh, kw = (1, 1) if kind == "pwconv" else spec.kernel_hw
        oh, ow = ops.conv_output_hw(h, w, kh, kw, spec.stride, spec.padding)
        if oh < 1 or ow < 1:
            raise ShapeError(f"{spec.name}: output collapses to {oh} x {ow}")
        oc = c if kind == "dwconv" else spec.out_channels
        return (oh, ow, oc)
    if kind == "batchnorm":
        if len(in_shape) != 3:
            raise ShapeError(f"{spec.name}: batchnorm input must be H x W x C")
        return in_shape
    if kind == "maxpool":
        h, w, c = in_shape
        if h < spec.window or w < spec.window:
            raise ShapeError(f"{spec.name}: pool window {spec.window} exceeds input {h} x {w}")
        return (h // spec.window, w // spec.window, c)
    if kind == "gap":
        h, w, c = in_shape
        return (1, 1, c)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    if kind == "dense":
        if len(in_shape) == 3 and in_shape[0] == in_shape[1] == 1:
            n = in_shape[2]
        elif len(in_shape) == 1:
            n = in_shape[0]
        else:
            raise ShapeError(f"{spec.name}: dense needs a flat input, got {in_shape}")
        return (spec.units,)
    if kind in ("activation", "dropout", "softmax"):
        return in_shape
    raise ConfigError(f"unknown layer kind {kind!r}")


def _param_shapes(spec: LayerSpec, in_shape: tuple) -> dict[str, tuple]:
    kind = spec.kind
    if kind == "conv":
        kh, kw = spec.kernel_hw
        shapes = {"kernel": (kh, kw, in_shape[2], spec.out_channels)}
        if spec.use_bias:
            shapes["bias"] = (spec.out_channels,)
        return shapes
    if kind == "dwconv":
        kh, kw = spec.kernel_hw
        return {"depthwise_kernel": (kh, kw, in_shape[2])}
    if kind == "pwconv":
        return {"kernel": (1, 1, in_shape[2], spec.out_channels)}
    if kind == "batchnorm":
        c = (in_shape[2],)
        return {"gamma": c, "beta": c, "moving_mean": c, "moving_var": c}
    if kind == "dense":
        n = in_shape[2] if len(in_shape) == 3 else in_shape[0]
        return {"weight": (n, spec.units), "bias": (spec.units,)}
    return {}


def _init_param(rng, role, shape, dtype):
    if role in ("kernel", "depthwise_kernel", "weight"):
        if role == "depthwise_kernel":
            fan_in = shape[0] * shape[1]
        elif len(shape) == 4:
            fan_in = shape[0] * shape[1] * shape[2]
        else:
            fan_in = shape[0]
        limit = np.sqrt(6.0 / fan_in)  # He-uniform
        return rng.uniform(-limit, limit, size=shape).astype(dtype)
    if role in ("gamma", "moving_var"):
        return np.ones(shape, dtype=dtype)
    return np.zeros(shape, dtype=dtype)


@dataclass
class RunResult:
    output: np.ndarray
    caches: list | None
    captured: dict[int, np.ndarray] = field(default_factory=dict)


class ModelGraph:
    """Ordered layers + bound parameters, shape-checked at construction."""

    def __init__(self, input_shape: Shape4, layers: list[LayerSpec],
                 params: dict[str, np.ndarray] | None = None,
                 dtype=STORAGE_DTYPE, seed: int = 0):
        names = [s.name for s in layers]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(f"duplicate layer names: {dupes}")
        self.input_shape = input_shape
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self.trace = self._compose()
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = params
        self._check_bindings()

    # -- construction ------------------------------------------------------

    def _compose(self):
        trace = []
        shape = self.input_shape.hwc
        for spec in self.layers:
            out = _out_shape(spec, shape)
            trace.append((spec, shape, out))
            shape = out
        return trace

    def _init_params(self, rng):
        params: dict[str, np.ndarray] = {}
        for spec, in_shape, _ in self.trace:
            for role, shape in _param_shapes(spec, in_shape).items():
                params[f"{spec.name}/{role}"] = _init_param(rng, role, shape, self.dtype)
        return params

    def _check_bindings(self):
        for spec, in_shape, _ in self.trace:
            for role, shape in _param_shapes(spec, in_shape).items():
                key = f"{spec.name}/{role}"
                if key not in self.params:
                    raise ConfigError(f"layer {spec.name} has no bound tensor {key}")
                if self.params[key].shape != shape:
                    raise ShapeError(
                        f"tensor {key} has shape {self.params[key].shape}, expected {shape}"
                    )

    # -- introspection -----------------------------------------------------

    def param_names(self) -> list[str]:
        return [f"{spec.name}/{role}"
                for spec, in_shape, _ in self.trace
                for role in _param_shapes(spec, in_shape)]

    def trainable_param_names(self) -> list[str]:
        names = []
        for spec, in_shape, _ in self.trace:
            if not spec.trainable:
                continue
            for role in _param_shapes(spec, in_shape):
                if role in TRAINABLE_ROLES.get(spec.kind, ()):
                    names.append(f"{spec.name}/{role}")
        return names

    def census(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for spec in self.layers:
            counts[spec.kind] = counts.get(spec.kind, 0) + 1
        return counts

    def num_params(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def num_trainable_params(self) -> int:
        return sum(int(self.params[n].size) for n in self.trainable_param_names())

    @property
    def num_classes(self) -> int:
        out = self.trace[-1][2]
        return int(out[-1])

    def layer_index(self, name: str) -> int:
        for i, spec in enumerate(self.layers):
            if spec.name == name:
                return i
        raise ConfigError(f"no layer named {name!r}")

    def last_conv_index(self) -> int:
        for i in range(len(self.layers) - 1, -1, -1):
            if self.layers[i].kind in ("conv", "dwconv", "pwconv"):
                return i
        raise ConfigError("model has no convolutional layer")

    # -- execution ---------------------------------------------------------

    def _conv_params(self, spec) -> ops.ConvParams:
        bias = self.params.get(f"{spec.name}/bias") if spec.use_bias else None
        key = "depthwise_kernel" if spec.kind == "dwconv" else "kernel"
        return ops.ConvParams(self.params[f"{spec.name}/{key}"], bias,
                              spec.stride, spec.padding)

    def _bn_params(self, spec) -> ops.BatchNormParams:
        p = self.params
        return ops.BatchNormParams(
            p[f"{spec.name}/gamma"], p[f"{spec.name}/beta"],
            p[f"{spec.name}/moving_mean"], p[f"{spec.name}/moving_var"],
            spec.epsilon,
        )

    def _dense_params(self, spec) -> ops.DenseParams:
        return ops.DenseParams(self.params[f"{spec.name}/weight"],
                               self.params[f"{spec.name}/bias"])

    def _apply(self, spec, h, mode, rng):
        kind = spec.kind
        if kind == "conv":
            p = self._conv_params(spec)
            return ops.conv2d(h, p), (h, p)
        if kind == "dwconv":
            p = self._conv_params(spec)
            return ops.depthwise_conv2d(h, p), (h, p)
        if kind == "pwconv":
            p = self._conv_params(spec)
            return ops.pointwise_conv2d(h, p), (h, p)
        if kind == "batchnorm":
            p = self._bn_params(spec)
            if mode == "train" and spec.trainable:
                y, new_mean, new_var, cache = ops.batchnorm_train(h, p, spec.momentum)
                self.params[f"{spec.name}/moving_mean"] = new_mean.astype(self.dtype)
                self.params[f"{spec.name}/moving_var"] = new_var.astype(self.dtype)
                return y, ("train", cache)
            y, cache = ops.batchnorm_infer(h, p)
            return y, ("infer", cache)
        if kind == "activation":
            return ops.activation(h, spec.fn), (h, spec.fn)
        if kind == "maxpool":
            return ops._maxpool2d_cached(h, spec.window, spec.window)
        if kind == "gap":
            y = ops.global_avg_pool(h)
            return y.reshape(y.shape[0], -1), h.shape
        if kind == "flatten":
            return h.reshape(h.shape[0], -1), h.shape
        if kind == "dense":
            p = self._dense_params(spec)
            return ops.dense(h, p), (h, p)
        if kind == "dropout":
            if mode == "train" and rng is None:
                raise StateError("training forward pass needs an rng for dropout")
            return ops._dropout_cached(h, spec.rate, mode, rng)
        if kind == "softmax":
            probs = ops.softmax(h)
            return probs, probs
        raise ConfigError(f"unknown layer kind {kind!r}")

    def run(self, x, mode="infer", rng=None, want_caches=False, capture=()) -> RunResult:
        if mode not in ("infer", "train"):
            raise ConfigError(f"mode must be 'infer' or 'train', got {mode!r}")
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 3
        h = x[None] if single else x
        if h.ndim != 4 or h.shape[1:] != self.input_shape.hwc:
            raise ShapeError(
                f"model expects input {self.input_shape.hwc}, got {x.shape}"
            )
        caches = [] if want_caches else None
        captured = {}
        for i, spec in enumerate(self.layers):
            h, cache = self._apply(spec, h, mode, rng)
            if want_caches:
                caches.append(cache)
            if i in capture:
                captured[i] = h
        return RunResult(h[0] if single else h, caches, captured)

    def forward(self, x, mode="infer", rng=None) -> np.ndarray:
        """Run the whole stack and return the final output."""
        return self.run(x, mode=mode, rng=rng).output

    def backward(self, caches, grad, from_layer=None, capture_grad=(),
                 collect_param_grads=True):
        """Propagate grad (w.r.t. the output of layer `from_layer`) down the
        stack. Returns ({param_name: grad}, {layer_index: output_grad}).

        Gradient flow stops below the shallowest layer still needed: the
        deepest of the trainable layers and capture targets bounds the work,
        so a fully frozen backbone costs nothing on the way down.
        """
        if caches is None:
            raise StateError("backward needs the caches of a forward run")
        if from_layer is None:
            from_layer = len(self.layers) - 1
        needed = [i for i in capture_grad if i <= from_layer]
        if collect_param_grads:
            needed += [i for i, s in enumerate(self.layers)
                       if s.trainable and s.kind in TRAINABLE_ROLES and i <= from_layer]
        if not needed:
            return {}, {}
        stop = min(needed)
        grads: dict[str, np.ndarray] = {}
        captured: dict[int, np.ndarray] = {}
        g = grad
        for i in range(from_layer, stop - 1, -1):
            if i in capture_grad:
                captured[i] = g
            spec = self.layers[i]
            need_p = (collect_param_grads and spec.trainable
                      and spec.kind in TRAINABLE_ROLES)
            lg = ops.layer_backward(spec.kind, caches[i], g, need_param_grads=need_p)
            if need_p:
                for role, arr in lg.params.items():
                    grads[f"{spec.name}/{role}"] = arr
            g = lg.input_grad
        return grads, captured


# ---------------------------------------------------------------------------
# Builders


def build_base_cnn(num_classes: int, seed: int = 0, dtype=STORAGE_DTYPE) -> ModelGraph:
    """256 x 256 x 3 CNN: 4 conv, 4 maxpool, 3 batchnorm, 1 dropout,
    3 hidden dense layers and a softmax output."""
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    layers = []
    widths = (32, 64, 128, 256)
    for i, width in enumerate(widths, start=1):
        has_bn = i <= 3
        layers.append(LayerSpec("conv", f"conv{i}", out_channels=width,
                                stride=1, use_bias=not has_bn))
        if has_bn:
            layers.append(LayerSpec("batchnorm", f"conv{i}_bn"))
        layers.append(LayerSpec("activation", f"conv{i}_relu", fn="relu"))
        layers.append(LayerSpec("maxpool", f"pool{i}"))
    layers.append(LayerSpec("flatten", "flatten"))
    for i, units in enumerate((512, 256, 128), start=1):
        layers.append(LayerSpec("dense", f"fc{i}", units=units))
        layers.append(LayerSpec("activation", f"fc{i}_relu", fn="relu"))
        if i == 1:
            layers.append(LayerSpec("dropout", "dropout", rate=0.5))
    layers.append(LayerSpec("dense", "fc_out", units=num_classes))
    layers.append(LayerSpec("softmax", "softmax"))
    return ModelGraph(Shape4(256, 256, 3), layers, dtype=dtype, seed=seed)


# (pointwise output channels, depthwise stride) per separable block.
_MOBILENET_BLOCKS = (
    (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
    (512, 1), (512, 1), (512, 1), (512, 1), (512, 1),
    (1024, 2), (1024, 1),
)


def build_mobilenet(include_top: bool = True, input_hw: int = 224,
                    seed: int = 0, dtype=STORAGE_DTYPE) -> ModelGraph:
    """Depthwise-separable reference network: one standard conv then 13
    dw/pw blocks, each conv followed by batchnorm + relu6.

    input_hw defaults to the reference 224; smaller inputs compose fine
    because every layer uses same padding.
    """
    layers = [
        LayerSpec("conv", "conv1", out_channels=32, stride=2),
        LayerSpec("batchnorm", "conv1_bn"),
        LayerSpec("activation", "conv1_relu", fn="relu6"),
    ]
    for i, (out_c, stride) in enumerate(_MOBILENET_BLOCKS, start=1):
        layers += [
            LayerSpec("dwconv", f"conv_dw_{i}", stride=stride),
            LayerSpec("batchnorm", f"conv_dw_{i}_bn"),
            LayerSpec("activation", f"conv_dw_{i}_relu", fn="relu6"),
            LayerSpec("pwconv", f"conv_pw_{i}", out_channels=out_c),
            LayerSpec("batchnorm", f"conv_pw_{i}_bn"),
            LayerSpec("activation", f"conv_pw_{i}_relu", fn="relu6"),
        ]
    layers.append(LayerSpec("gap", "gap"))
    if include_top:
        layers.append(LayerSpec("dense", "fc", units=1000))
        layers.append(LayerSpec("softmax", "softmax"))
    return ModelGraph(Shape4(input_hw, input_hw, 3), layers, dtype=dtype, seed=seed)


def attach_transfer_head(backbone: ModelGraph, num_classes: int,
                         seed: int = 0) -> ModelGraph:
    """Append GAP + dense 1024/512/256 + softmax classifier to a topless
    backbone. Head layers are trainable and freshly initialized."""
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if any(s.kind in ("dense", "softmax") for s in backbone.layers):
        raise ConfigError("backbone already has a classification head")
    layers = [replace(s) for s in backbone.layers]
    # A topless backbone already ends with its average pool; keep exactly one.
    if not layers or layers[-1].kind != "gap":
        layers.append(LayerSpec("gap", "gap"))
    for units in (1024, 512, 256):
        layers.append(LayerSpec("dense", f"head_fc_{units}", units=units))
    layers.append(LayerSpec("dense", "head_out", units=num_classes))
    layers.append(LayerSpec("softmax", "softmax"))

    model = ModelGraph(backbone.input_shape, layers, dtype=backbone.dtype, seed=seed)
    params = dict(model.params)
    params.update(backbone.params)  # share backbone tensors, keep fresh head
    model.params = params
    model._check_bindings()
    return model


def swap_output_layer(model: ModelGraph, num_classes: int, seed: int = 0) -> ModelGraph:
    """Replace the final dense + softmax with a fresh num_classes output;
    everything else (weights and trainability) carries over."""
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if model.layers[-1].kind != "softmax" or model.layers[-2].kind != "dense":
        raise ConfigError("model does not end with a dense + softmax head")
    old_out = model.layers[-2]
    layers = [replace(s) for s in model.layers]
    layers[-2] = replace(old_out, units=num_classes, trainable=True)
    new = ModelGraph(model.input_shape, layers, dtype=model.dtype, seed=seed)
    params = dict(new.params)
    for name, arr in model.params.items():
        if not name.startswith(f"{old_out.name}/"):
            params[name] = arr
    new.params = params
    new._check_bindings()
    return new


def set_trainable_boundary(model: ModelGraph, freeze_first_n: int) -> ModelGraph:
    """Mark the first n layers (flattened order) non-trainable, the rest
    trainable."""
    if not 0 <= freeze_first_n <= len(model.layers):
        raise ConfigError(
            f"freeze_first_n must be in [0, {len(model.layers)}], got {freeze_first_n}"
        )
    for i, spec in enumerate(model.layers):
        spec.trainable = i >= freeze_first_n
    return model


# ---------------------------------------------------------------------------
# Summary table


def _row_type(spec: LayerSpec) -> str:
    kind = spec.kind
    if kind == "conv":
        return f"Conv / s{spec.stride}"
    if kind == "dwconv":
        return f"Conv dw / s{spec.stride}"
    if kind == "pwconv":
        return f"Conv / s{spec.stride}"
    if kind == "batchnorm":
        return "Batch Norm"
    if kind == "activation":
        return {"relu": "ReLU", "relu6": "ReLU6"}.get(spec.fn, spec.fn)
    if kind == "maxpool":
        return f"Max Pool / s{spec.window}"
    if kind == "gap":
        return "Avg Pool / s1"
    if kind == "flatten":
        return "Flatten"
    if kind == "dense":
        return "FC / s1"
    if kind == "dropout":
        return f"Dropout {spec.rate:g}"
    if kind == "softmax":
        return "Softmax / s1"
    return kind


def _row_filter(spec: LayerSpec, in_shape: tuple) -> str:
    kind = spec.kind
    if kind == "conv":
        kh, kw = spec.kernel_hw
        return f"{kh} × {kw} × {in_shape[2]} × {spec.out_channels}"
    if kind == "dwconv":
        kh, kw = spec.kernel_hw
        return f"{kh} × {kw} × {in_shape[2]} dw"
    if kind == "pwconv":
        return f"1 × 1 × {in_shape[2]} × {spec.out_channels}"
    if kind == "gap":
        return f"Pool {in_shape[0]} × {in_shape[1]}"
    if kind == "maxpool":
        return f"Pool {spec.window} × {spec.window}"
    if kind == "dense":
        n = in_shape[2] if len(in_shape) == 3 else in_shape[0]
        return f"{n} × {spec.units}"
    if kind == "softmax":
        return "Classifier"
    return "-"


def summarize(model: ModelGraph) -> str:
    """Printable layer table: type/stride, filter shape, input size, params."""
    header = ("Layer", "Type / Stride", "Filter Shape", "Input Size",
              "Params", "Trainable")
    rows = [header]
    for spec, in_shape, _ in model.trace:
        n_params = sum(
            int(model.params[f"{spec.name}/{role}"].size)
            for role in _param_shapes(spec, in_shape)
        )
        rows.append((
            spec.name,
            _row_type(spec),
            _row_filter(spec, in_shape),
            _fmt_shape(in_shape),
            str(n_params),
            "yes" if (spec.trainable and spec.kind in TRAINABLE_ROLES) else "-",
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    lines.append("-" * len(lines[0]))
    lines.append(f"Total params: {model.num_params():,}")
    lines.append(f"Trainable params: {model.num_trainable_params():,}")
    return "\n".join(lines)
