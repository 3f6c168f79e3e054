"""Pull the canonical MobileNet (1.0, 224) weights out of Keras and write
them as an NTW file plus a manifest.

Tensor naming follows the consumer's "<layer_name>/<param_role>" convention:
depthwise kernels are exported as kh x kw x C (the trailing depth-multiplier
axis of the Keras layout is squeezed here, at export time), and the
1 x 1 x 1024 x 1000 classifier conv becomes the dense tensors fc/weight and
fc/bias.
"""

import hashlib
import json

import numpy as np

from .ntw_writer import write_ntw

# Pointwise output channels per separable block, in block order.
_BLOCK_CHANNELS = (64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512,
                   1024, 1024)
_BN_ROLES = ("gamma", "beta", "moving_mean", "moving_var")


class FetchError(RuntimeError):
    """The pretrained source model could not be obtained."""


class ExportError(RuntimeError):
    """The source model's layer inventory is not the expected MobileNet."""


def expected_layers() -> list[str]:
    names = ["conv1", "conv1_bn"]
    for i in range(1, len(_BLOCK_CHANNELS) + 1):
        names += [f"conv_dw_{i}", f"conv_dw_{i}_bn",
                  f"conv_pw_{i}", f"conv_pw_{i}_bn"]
    names.append("conv_preds")
    return names


def load_source_model(weights: str = "imagenet", seed: int = 0):
    """Instantiate Keras MobileNet 1.0-224 with the classification top.

    weights="imagenet" downloads (or reuses the cached copy of) the
    canonical checkpoint; "random" fills the same architecture with
    seed-deterministic values, which exercises the full conversion path
    offline.
    """
    import keras

    if weights == "imagenet":
        try:
            return keras.applications.MobileNet(weights="imagenet")
        except Exception as exc:
            raise FetchError(
                f"could not fetch pretrained MobileNet weights: {exc}"
            ) from exc
    if weights != "random":
        raise ExportError(f"weights must be 'imagenet' or 'random', got {weights!r}")
    model = keras.applications.MobileNet(weights=None)
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        current = layer.get_weights()
        if not current:
            continue
        fresh = []
        for i, w in enumerate(current):
            values = rng.standard_normal(w.shape).astype(np.float32) * 0.05
            if layer.name.endswith("_bn") and i == 3:
                values = np.abs(values) + 0.5  # variances stay positive
            fresh.append(values)
        layer.set_weights(fresh)
    return model


def extract_tensors(model) -> dict[str, np.ndarray]:
    """Map the Keras layer inventory onto NTW tensor names."""
    have = {layer.name for layer in model.layers if layer.get_weights()}
    want = set(expected_layers())
    if have != want:
        missing = sorted(want - have)
        extra = sorted(have - want)
        raise ExportError(
            f"unexpected layer inventory; missing={missing} unexpected={extra}"
        )

    tensors: dict[str, np.ndarray] = {}

    def add(name, arr):
        tensors[name] = np.ascontiguousarray(arr, dtype=np.float32)

    def add_bn(layer_name):
        for role, arr in zip(_BN_ROLES, model.get_layer(layer_name).get_weights()):
            add(f"{layer_name}/{role}", arr)

    add("conv1/kernel", model.get_layer("conv1").get_weights()[0])
    add_bn("conv1_bn")
    for i in range(1, len(_BLOCK_CHANNELS) + 1):
        dw = model.get_layer(f"conv_dw_{i}").get_weights()[0]
        if dw.ndim != 4 or dw.shape[3] != 1:
            raise ExportError(f"conv_dw_{i} kernel has shape {dw.shape}, "
                              "expected a depth multiplier of 1")
        add(f"conv_dw_{i}/depthwise_kernel", dw[:, :, :, 0])
        add_bn(f"conv_dw_{i}_bn")
        add(f"conv_pw_{i}/kernel", model.get_layer(f"conv_pw_{i}").get_weights()[0])
        add_bn(f"conv_pw_{i}_bn")
    preds_kernel, preds_bias = model.get_layer("conv_preds").get_weights()
    add("fc/weight", preds_kernel.reshape(preds_kernel.shape[2], preds_kernel.shape[3]))
    add("fc/bias", preds_bias)
    return tensors


def build_manifest(tensors: dict[str, np.ndarray], source: str) -> dict:
    entries = []
    for name, arr in tensors.items():
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "elements": int(arr.size),
            "sha256": hashlib.sha256(
                np.ascontiguousarray(arr, dtype="<f4").tobytes()).hexdigest(),
        })
    return {
        "source": source,
        "tensor_count": len(entries),
        "parameter_count": int(sum(e["elements"] for e in entries)),
        "tensors": entries,
    }


def export_pretrained(out_path, manifest_path=None, weights: str = "imagenet",
                      seed: int = 0) -> dict:
    """Write the NTW file and its manifest JSON; returns the manifest."""
    model = load_source_model(weights, seed)
    tensors = extract_tensors(model)
    write_ntw(out_path, tensors)
    manifest = build_manifest(tensors, source=f"keras MobileNet 1.0-224 ({weights})")
    if manifest_path is None:
        manifest_path = f"{out_path}.manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest
