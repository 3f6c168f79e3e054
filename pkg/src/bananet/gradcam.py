"""Gradient-weighted class activation maps and heatmap rendering.

The map is built from the activations of the model's final convolutional
layer: channel weights are the spatial mean of the gradient of the chosen
class's pre-softmax logit w.r.t. those activations, and the map is the
ReLU of the weighted channel sum, normalized to [0, 1].
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigError
from .model import ModelGraph


@dataclass
class CamResult:
    heatmap: np.ndarray      # h x w raw-resolution map in [0, 1]
    class_index: int
    overlay_map: np.ndarray  # H x W map resized to the model input


def compute_gradcam(model: ModelGraph, image, class_index: int) -> CamResult:
    image = np.asarray(image)
    if image.ndim != 3:
        raise ConfigError(f"gradcam expects one H x W x C image, got {image.shape}")
    k = model.num_classes
    if not 0 <= class_index < k:
        raise ConfigError(f"class_index {class_index} out of range for {k} classes")
    conv_idx = model.last_conv_index()

    run = model.run(image[None], want_caches=True, capture={conv_idx})
    activations = run.captured[conv_idx][0]  # h x w x c

    # Gradient of the pre-softmax logit for class_index.
    from_layer = len(model.layers) - 1
    if model.layers[-1].kind == "softmax":
        from_layer -= 1
    onehot = np.zeros((1, k), dtype=model.dtype)
    onehot[0, class_index] = 1
    _, captured = model.backward(run.caches, onehot, from_layer=from_layer,
                                 capture_grad={conv_idx}, collect_param_grads=False)
    grads = captured[conv_idx][0]

    weights = grads.mean(axis=(0, 1))
    cam = np.maximum((activations * weights).sum(axis=-1), 0.0)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    h, w = model.input_shape.height, model.input_shape.width
    return CamResult(cam.astype(np.float64), class_index, _resize_bilinear(cam, h, w))


def _resize_bilinear(map2d, out_h, out_w):
    """Align-corners bilinear upsample of a 2-D map."""
    src = np.asarray(map2d, dtype=np.float64)
    h, w = src.shape
    sy = np.linspace(0, h - 1, out_h)
    sx = np.linspace(0, w - 1, out_w)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bottom = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


# Blue -> cyan -> green -> yellow -> red ramp: 0 maps to blue, 1 to red.
_COLOR_STOPS = np.array([
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
], dtype=np.float64)


def colorize(map2d) -> np.ndarray:
    """Map values in [0, 1] through the jet-like ramp to H x W x 3 uint8."""
    v = np.clip(np.asarray(map2d, dtype=np.float64), 0.0, 1.0)
    pos = v * (len(_COLOR_STOPS) - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, len(_COLOR_STOPS) - 1)
    frac = (pos - lo)[..., None]
    rgb = _COLOR_STOPS[lo] * (1 - frac) + _COLOR_STOPS[hi] * frac
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def render_heatmap(cam: CamResult, base_image, out_path, blend: float = 0.4) -> None:
    """Write a side-by-side PNG: original, colorized heatmap, overlay.

    base_image is the model-input-resolution image, either uint8 or a
    [-1, 1] float tensor.
    """
    base = np.asarray(base_image)
    if base.dtype != np.uint8:
        base = np.clip(np.rint((base + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = base.shape[:2]
    if cam.overlay_map.shape != (h, w):
        raise ConfigError(
            f"base image {base.shape[:2]} does not match heatmap {cam.overlay_map.shape}"
        )
    heat = colorize(cam.overlay_map)
    overlay = np.clip(
        np.rint((1.0 - blend) * base.astype(np.float64) + blend * heat), 0, 255
    ).astype(np.uint8)
    panel = np.concatenate([base, heat, overlay], axis=1)
    Image.fromarray(panel).save(out_path, format="PNG")
