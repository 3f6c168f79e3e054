"""Forward and backward passes for every layer kind in the two architectures.

Convolutions use cross-correlation (no kernel flip) with TensorFlow-style
"same" padding: output size is ceil(in / stride) and an odd padding deficit
puts the extra row/column at the bottom/right. Public ops accept a single
H x W x C image or a batched B x H x W x C tensor and return the same rank.

Heavy paths (standard conv) run as one GEMM per kernel tap, which keeps
memory flat and leans on BLAS; the naive loop oracles in the test suite
define correctness.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .tensor import check_finite

# ---------------------------------------------------------------------------
# Parameter bundles


@dataclass
class ConvParams:
    """Kernel kh x kw x inC x outC (standard) or kh x kw x C (depthwise)."""

    kernel: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        if self.kernel.ndim not in (3, 4):
            raise ShapeError(f"conv kernel must be rank 3 or 4, got {self.kernel.shape}")
        if self.kernel.shape[0] < 1 or self.kernel.shape[1] < 1:
            raise ShapeError(f"kernel spatial dims must be >= 1, got {self.kernel.shape}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.padding not in ("same", "valid"):
            raise ConfigError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.bias is not None and self.bias.shape != (self.kernel.shape[-1],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match output channels "
                f"{self.kernel.shape[-1]}"
            )


@dataclass
class BatchNormParams:
    """Per-channel affine + moving statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_var: np.ndarray
    epsilon: float = 1e-3

    def __post_init__(self):
        c = self.gamma.shape
        for name in ("beta", "moving_mean", "moving_var"):
            if getattr(self, name).shape != c:
                raise ShapeError(f"batchnorm vector {name} shape differs from gamma {c}")
        if np.any(self.moving_var < 0):
            raise ShapeError("batchnorm moving_var must be >= 0")
        if not self.epsilon > 0:
            raise ConfigError(f"batchnorm epsilon must be > 0, got {self.epsilon}")


@dataclass
class DenseParams:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"dense weight must be rank 2, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"dense bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )


@dataclass
class LayerGrads:
    """Gradients of one layer: per-parameter (by role) plus input gradient."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    input_grad: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Shared helpers


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected H x W x C or B x H x W x C input, got shape {x.shape}")


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


def conv_output_hw(h, w, kh, kw, stride, padding):
    if padding == "same":
        return -(-h // stride), -(-w // stride)
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def _same_pads(h, w, kh, kw, stride):
    oh, ow = conv_output_hw(h, w, kh, kw, stride, "same")
    ph = max((oh - 1) * stride + kh - h, 0)
    pw = max((ow - 1) * stride + kw - w, 0)
    return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2


def _pad_input(x, kh, kw, stride, padding):
    if padding == "same":
        pt, pb, pl, pr = _same_pads(x.shape[1], x.shape[2], kh, kw, stride)
        if pt or pb or pl or pr:
            x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        return x, (pt, pb, pl, pr)
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(
            f"valid padding needs input >= kernel, got {x.shape[1:3]} vs ({kh}, {kw})"
        )
    return x, (0, 0, 0, 0)


def _tap(xp, ki, kj, oh, ow, stride):
    # Window of the padded input seen by kernel position (ki, kj).
    return xp[:, ki : ki + (oh - 1) * stride + 1 : stride,
              kj : kj + (ow - 1) * stride + 1 : stride, :]


# ---------------------------------------------------------------------------
# Convolution family


def conv2d(x, p: ConvParams):
    """Standard 2-D cross-correlation, one GEMM per kernel tap."""
    x4, squeeze = _as_batch(x)
    k = p.kernel
    if k.ndim != 4:
        raise ShapeError(f"conv2d needs a kh x kw x inC x outC kernel, got {k.shape}")
    if x4.shape[3] != k.shape[2]:
        raise ShapeError(
            f"input channels {x4.shape[3]} do not match kernel input channels "
            f"{k.shape[2]} (kernel {k.shape})"
        )
    kh, kw, in_c, out_c = k.shape
    xp, _ = _pad_input(x4, kh, kw, p.stride, p.padding)
    oh, ow = conv_output_hw(x4.shape[1], x4.shape[2], kh, kw, p.stride, p.padding)
    b = x4.shape[0]
    y = np.zeros((b * oh * ow, out_c), dtype=x4.dtype)
    for ki in range(kh):
        for kj in range(kw):
            patch = np.ascontiguousarray(_tap(xp, ki, kj, oh, ow, p.stride))
            y += patch.reshape(b * oh * ow, in_c) @ k[ki, kj]
    y = y.reshape(b, oh, ow, out_c)
    if p.bias is not None:
        y = y + p.bias
    return _unbatch(check_finite(y, "conv2d"), squeeze)


def conv2d_backward(x, p: ConvParams, grad_out, need_param_grads=True):
    x4, _ = _as_batch(x)
    g4, _ = _as_batch(grad_out)
    k = p.kernel
    kh, kw, in_c, out_c = k.shape
    xp, (pt, _pb, pl, _pr) = _pad_input(x4, kh, kw, p.stride, p.padding)
    b, oh, ow, _ = g4.shape
    g2 = g4.reshape(b * oh * ow, out_c)

    grad_k = np.zeros_like(k) if need_param_grads else None
    grad_xp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            patch = np.ascontiguousarray(_tap(xp, ki, kj, oh, ow, p.stride))
            if need_param_grads:
                grad_k[ki, kj] = patch.reshape(b * oh * ow, in_c).T @ g2
            _tap(grad_xp, ki, kj, oh, ow, p.stride)[...] += (g2 @ k[ki, kj].T).reshape(
                b, oh, ow, in_c
            )
    grad_x = grad_xp[:, pt : pt + x4.shape[1], pl : pl + x4.shape[2], :]
    grad_b = g2.sum(axis=0) if (need_param_grads and p.bias is not None) else None
    return grad_x.reshape(np.asarray(x).shape), grad_k, grad_b


def depthwise_conv2d(x, p: ConvParams):
    """Per-channel spatial convolution; channel count is preserved."""
    x4, squeeze = _as_batch(x)
    k = p.kernel
    if k.ndim != 3:
        raise ShapeError(f"depthwise kernel must be kh x kw x C, got {k.shape}")
    if x4.shape[3] != k.shape[2]:
        raise ShapeError(
            f"input channels {x4.shape[3]} do not match depthwise kernel channels "
            f"{k.shape[2]}"
        )
    kh, kw, _c = k.shape
    xp, _ = _pad_input(x4, kh, kw, p.stride, p.padding)
    oh, ow = conv_output_hw(x4.shape[1], x4.shape[2], kh, kw, p.stride, p.padding)
    y = np.zeros((x4.shape[0], oh, ow, x4.shape[3]), dtype=x4.dtype)
    for ki in range(kh):
        for kj in range(kw):
            y += _tap(xp, ki, kj, oh, ow, p.stride) * k[ki, kj]
    if p.bias is not None:
        y = y + p.bias
    return _unbatch(check_finite(y, "depthwise_conv2d"), squeeze)


def depthwise_conv2d_backward(x, p: ConvParams, grad_out, need_param_grads=True):
    x4, _ = _as_batch(x)
    g4, _ = _as_batch(grad_out)
    k = p.kernel
    kh, kw, _c = k.shape
    xp, (pt, _pb, pl, _pr) = _pad_input(x4, kh, kw, p.stride, p.padding)
    oh, ow = g4.shape[1], g4.shape[2]

    grad_k = np.zeros_like(k) if need_param_grads else None
    grad_xp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            patch = _tap(xp, ki, kj, oh, ow, p.stride)
            if need_param_grads:
                grad_k[ki, kj] = (patch * g4).sum(axis=(0, 1, 2))
            _tap(grad_xp, ki, kj, oh, ow, p.stride)[...] += g4 * k[ki, kj]
    grad_x = grad_xp[:, pt : pt + x4.shape[1], pl : pl + x4.shape[2], :]
    grad_b = g4.sum(axis=(0, 1, 2)) if (need_param_grads and p.bias is not None) else None
    return grad_x.reshape(np.asarray(x).shape), grad_k, grad_b


def pointwise_conv2d(x, p: ConvParams):
    """1x1 convolution: a matmul over the channel axis at every pixel."""
    x4, squeeze = _as_batch(x)
    k = p.kernel
    if k.ndim != 4 or k.shape[0] != 1 or k.shape[1] != 1:
        raise ShapeError(f"pointwise kernel must be 1 x 1 x inC x outC, got {k.shape}")
    if x4.shape[3] != k.shape[2]:
        raise ShapeError(
            f"input channels {x4.shape[3]} do not match pointwise kernel channels "
            f"{k.shape[2]}"
        )
    if p.stride != 1:
        return conv2d(x, p)
    b, h, w, c = x4.shape
    y = (x4.reshape(b * h * w, c) @ k[0, 0]).reshape(b, h, w, k.shape[3])
    if p.bias is not None:
        y = y + p.bias
    return _unbatch(check_finite(y, "pointwise_conv2d"), squeeze)


def pointwise_conv2d_backward(x, p: ConvParams, grad_out, need_param_grads=True):
    if p.stride != 1:
        return conv2d_backward(x, p, grad_out, need_param_grads)
    x4, _ = _as_batch(x)
    g4, _ = _as_batch(grad_out)
    b, h, w, c = x4.shape
    out_c = p.kernel.shape[3]
    x2 = x4.reshape(b * h * w, c)
    g2 = g4.reshape(b * h * w, out_c)
    grad_k = None
    if need_param_grads:
        grad_k = (x2.T @ g2).reshape(p.kernel.shape)
    grad_x = (g2 @ p.kernel[0, 0].T).reshape(np.asarray(x).shape)
    grad_b = g2.sum(axis=0) if (need_param_grads and p.bias is not None) else None
    return grad_x, grad_k, grad_b


# ---------------------------------------------------------------------------
# Batch normalization

BN_AXES = (0, 1, 2)  # normalize over batch and space, per channel


def batchnorm_infer(x, p: BatchNormParams):
    x4, squeeze = _as_batch(x)
    _check_bn_channels(x4, p)
    inv_std = 1.0 / np.sqrt(p.moving_var + p.epsilon)
    y = (x4 - p.moving_mean) * (inv_std * p.gamma) + p.beta
    cache = ((x4 - p.moving_mean) * inv_std, p.gamma, inv_std)
    return _unbatch(check_finite(y, "batchnorm"), squeeze), cache


def batchnorm_train(x, p: BatchNormParams, momentum=0.99):
    """Normalize with batch statistics and return updated moving stats."""
    x4, squeeze = _as_batch(x)
    _check_bn_channels(x4, p)
    mean = x4.mean(axis=BN_AXES)
    var = x4.var(axis=BN_AXES)
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x4 - mean) * inv_std
    y = xhat * p.gamma + p.beta
    new_mean = momentum * p.moving_mean + (1.0 - momentum) * mean
    new_var = momentum * p.moving_var + (1.0 - momentum) * var
    if np.any(new_var < 0):
        raise StateError("batchnorm moving variance became negative")
    cache = (xhat, p.gamma, inv_std)
    return _unbatch(check_finite(y, "batchnorm"), squeeze), new_mean, new_var, cache


def batchnorm(x, p: BatchNormParams, mode="infer", momentum=0.99):
    """Spec surface: train mode updates p's moving statistics in place."""
    if mode == "infer":
        y, _ = batchnorm_infer(x, p)
        return y
    y, new_mean, new_var, _ = batchnorm_train(x, p, momentum)
    p.moving_mean = new_mean
    p.moving_var = new_var
    return y


def batchnorm_train_backward(cache, grad_out, need_param_grads=True):
    xhat, gamma, inv_std = cache
    g4, squeeze = _as_batch(grad_out)
    n = g4.shape[0] * g4.shape[1] * g4.shape[2]
    dgamma = (g4 * xhat).sum(axis=BN_AXES)
    dbeta = g4.sum(axis=BN_AXES)
    # d/dx of normalization through the batch mean and (biased) variance.
    gx = (gamma * inv_std) * (g4 - dbeta / n - xhat * (dgamma / n))
    if not need_param_grads:
        dgamma = dbeta = None
    return _unbatch(gx, squeeze), dgamma, dbeta


def batchnorm_infer_backward(cache, grad_out, need_param_grads=True):
    xhat, gamma, inv_std = cache
    g4, squeeze = _as_batch(grad_out)
    gx = g4 * (gamma * inv_std)
    dgamma = (g4 * xhat).sum(axis=BN_AXES) if need_param_grads else None
    dbeta = g4.sum(axis=BN_AXES) if need_param_grads else None
    return _unbatch(gx, squeeze), dgamma, dbeta


def _check_bn_channels(x4, p):
    if x4.shape[-1] != p.gamma.shape[0]:
        raise ShapeError(
            f"batchnorm expects {p.gamma.shape[0]} channels, input has {x4.shape[-1]}"
        )


# ---------------------------------------------------------------------------
# Activations


def activation(x, kind="relu"):
    x = np.asarray(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "relu6":
        return np.minimum(np.maximum(x, 0), x.dtype.type(6))
    raise ConfigError(f"unknown activation {kind!r}")


def activation_backward(x, kind, grad_out):
    x = np.asarray(x)
    if kind == "relu":
        return grad_out * (x > 0)
    if kind == "relu6":
        return grad_out * ((x > 0) & (x < 6))
    raise ConfigError(f"unknown activation {kind!r}")


def relu(x):
    return activation(x, "relu")


def relu6(x):
    return activation(x, "relu6")


# ---------------------------------------------------------------------------
# Pooling


def maxpool2d(x, window=2, stride=2):
    """Channelwise window maximum. Trailing rows/cols that do not fill a
    window are dropped (both reference architectures pool even extents)."""
    y, _ = _maxpool2d_cached(x, window, stride)
    return y


def _maxpool2d_cached(x, window=2, stride=2):
    if window != stride:
        raise ConfigError("maxpool2d supports window == stride only")
    x4, squeeze = _as_batch(x)
    b, h, w, c = x4.shape
    if h < window or w < window:
        raise ShapeError(f"maxpool window {window} larger than input {h} x {w}")
    h2, w2 = h // window, w // window
    xc = x4[:, : h2 * window, : w2 * window, :]
    tiles = xc.reshape(b, h2, window, w2, window, c)
    y = tiles.max(axis=(2, 4))
    flat = tiles.transpose(0, 1, 3, 2, 4, 5).reshape(b, h2, w2, window * window, c)
    argmax = flat.argmax(axis=3)  # deterministic first-max tie break
    cache = (argmax, (b, h, w, c), window, squeeze)
    return _unbatch(y, squeeze), cache


def maxpool2d_backward(cache, grad_out):
    argmax, (b, h, w, c), window, squeeze = cache
    g4, _ = _as_batch(grad_out)
    h2, w2 = g4.shape[1], g4.shape[2]
    scatter = np.zeros((b, h2, w2, window * window, c), dtype=g4.dtype)
    np.put_along_axis(scatter, argmax[:, :, :, None, :], g4[:, :, :, None, :], axis=3)
    gx = np.zeros((b, h, w, c), dtype=g4.dtype)
    gx[:, : h2 * window, : w2 * window, :] = (
        scatter.reshape(b, h2, w2, window, window, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, h2 * window, w2 * window, c)
    )
    return _unbatch(gx, squeeze)


def global_avg_pool(x):
    """Per-channel spatial mean; output 1 x 1 x C (batched: B x 1 x 1 x C)."""
    x4, squeeze = _as_batch(x)
    y = x4.mean(axis=(1, 2), keepdims=True)
    return _unbatch(y, squeeze)


def global_avg_pool_backward(in_shape, grad_out):
    g = np.asarray(grad_out)
    squeeze = len(in_shape) == 3
    b, h, w, c = (1, *in_shape) if squeeze else in_shape
    g = g.reshape(b, 1, 1, c)
    gx = np.broadcast_to(g / (h * w), (b, h, w, c)).astype(g.dtype).copy()
    return gx[0] if squeeze else gx


# ---------------------------------------------------------------------------
# Dense / softmax / dropout


def dense(x, p: DenseParams):
    x = np.asarray(x)
    single = x.ndim == 1
    x2 = x[None] if single else x
    if x2.shape[1] != p.weight.shape[0]:
        raise ShapeError(
            f"dense input width {x2.shape[1]} does not match weight rows "
            f"{p.weight.shape[0]}"
        )
    y = x2 @ p.weight + p.bias
    return check_finite(y[0] if single else y, "dense")


def dense_backward(x, p: DenseParams, grad_out, need_param_grads=True):
    x = np.asarray(x)
    single = x.ndim == 1
    x2 = x[None] if single else x
    g2 = grad_out[None] if single else grad_out
    gw = x2.T @ g2 if need_param_grads else None
    gb = g2.sum(axis=0) if need_param_grads else None
    gx = g2 @ p.weight.T
    return (gx[0] if single else gx), gw, gb


def softmax(x):
    """Exp-normalize along the last axis, stabilized by max subtraction."""
    x = np.asarray(x)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs, grad_out):
    dot = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - dot)


def dropout(x, rate, mode="infer", rng=None):
    """Inverted dropout: inference is the identity, training zeroes each
    element with probability `rate` and scales survivors by 1/(1-rate)."""
    y, _ = _dropout_cached(x, rate, mode, rng)
    return y


def _dropout_cached(x, rate, mode="infer", rng=None):
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x)
    if mode == "infer" or rate == 0.0:
        return x, None
    if rng is None:
        raise StateError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep * scale
    return x * mask, mask


def dropout_backward(mask, grad_out):
    if mask is None:
        return grad_out
    return grad_out * mask


# ---------------------------------------------------------------------------
# Generic backward dispatch (spec surface)


def layer_backward(kind, cache, grad_out, need_param_grads=True) -> LayerGrads:
    """Route grad_out through one layer's backward given its forward cache.

    The cache is whatever the matching forward produced; a missing cache is
    a state error, not a silent zero gradient.
    """
    if cache is None:
        raise StateError(f"backward({kind}) called without a forward cache")
    if kind == "conv":
        x, p = cache
        gx, gk, gb = conv2d_backward(x, p, grad_out, need_param_grads)
        params = {"kernel": gk}
        if gb is not None:
            params["bias"] = gb
        return LayerGrads(params if need_param_grads else {}, gx)
    if kind == "dwconv":
        x, p = cache
        gx, gk, _ = depthwise_conv2d_backward(x, p, grad_out, need_param_grads)
        return LayerGrads({"depthwise_kernel": gk} if need_param_grads else {}, gx)
    if kind == "pwconv":
        x, p = cache
        gx, gk, _ = pointwise_conv2d_backward(x, p, grad_out, need_param_grads)
        return LayerGrads({"kernel": gk} if need_param_grads else {}, gx)
    if kind == "batchnorm":
        bn_mode, bn_cache = cache
        back = batchnorm_train_backward if bn_mode == "train" else batchnorm_infer_backward
        gx, dgamma, dbeta = back(bn_cache, grad_out, need_param_grads)
        params = {"gamma": dgamma, "beta": dbeta} if need_param_grads else {}
        return LayerGrads(params, gx)
    if kind == "activation":
        x, fn = cache
        return LayerGrads({}, activation_backward(x, fn, grad_out))
    if kind == "maxpool":
        return LayerGrads({}, maxpool2d_backward(cache, grad_out))
    if kind == "gap":
        return LayerGrads({}, global_avg_pool_backward(cache, grad_out))
    if kind == "flatten":
        return LayerGrads({}, np.asarray(grad_out).reshape(cache))
    if kind == "dense":
        x, p = cache
        gx, gw, gb = dense_backward(x, p, grad_out, need_param_grads)
        params = {"weight": gw, "bias": gb} if need_param_grads else {}
        return LayerGrads(params, gx)
    if kind == "dropout":
        return LayerGrads({}, dropout_backward(cache, grad_out))
    if kind == "softmax":
        return LayerGrads({}, softmax_backward(cache, grad_out))
    raise ConfigError(f"unknown layer kind {kind!r}")
