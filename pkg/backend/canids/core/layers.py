"""NHWC layers with hand-written forward and backward passes."""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, DegenerateBatch, ShapeMismatch

Shape = Tuple[int, ...]

PROB_CLAMP = 1e-7


# ---------------------------------------------------------------------------
# Functional forms


def _same_pad(kernel_size: int) -> int:
    return (kernel_size - 1) // 2


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> Tuple[np.ndarray, Shape]:
    """(N, H, W, C) -> (N*Ho*Wo, kh*kw*C) patch matrix, patch order (i, j, c)."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    patches = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    patches = patches[:, ::stride, ::stride]  # (N, Ho, Wo, C, kh, kw)
    n, ho, wo, c = patches.shape[:4]
    cols = patches.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    return cols, (n, ho, wo)


def _check_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> None:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv expects NHWC input and HWIO kernel, got {x.shape} and {kernel.shape}")
    if x.shape[3] != kernel.shape[2]:
        raise ShapeMismatch(f"input has {x.shape[3]} channels, kernel expects {kernel.shape[2]}")
    if bias.shape != (kernel.shape[3],):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {kernel.shape[3]} filters")


def _padding(padding: str, kernel_size: int) -> int:
    if padding == "same":
        return _same_pad(kernel_size)
    if padding == "valid":
        return 0
    raise ConfigError(f"unknown padding {padding!r}")


def conv2d_forward(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1, padding: str = "same"
) -> np.ndarray:
    """Cross-correlation of NHWC ``x`` with an HWIO ``kernel``, zero padding."""
    _check_conv(x, kernel, bias)
    kh, kw, cin, cout = kernel.shape
    cols, (n, ho, wo) = im2col(x, kh, kw, stride, _padding(padding, kh))
    out = cols @ kernel.reshape(kh * kw * cin, cout) + bias
    return out.reshape(n, ho, wo, cout)


def conv2d_backward(
    dout: np.ndarray, x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: str = "same"
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dkernel, dbias) for ``conv2d_forward``."""
    kh, kw, cin, cout = kernel.shape
    pad = _padding(padding, kh)
    cols, (n, ho, wo) = im2col(x, kh, kw, stride, pad)
    dout2 = dout.reshape(n * ho * wo, cout)
    dkernel = (cols.T @ dout2).reshape(kernel.shape)
    dbias = dout2.sum(axis=0)
    dcols = (dout2 @ kernel.reshape(kh * kw * cin, cout).T).reshape(n, ho, wo, kh, kw, cin)
    h, w = x.shape[1], x.shape[2]
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, cin), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, pad : pad + h, pad : pad + w, :] if pad else dxp
    return dx, dkernel, dbias


def batchnorm_forward(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, mean: np.ndarray, var: np.ndarray, eps: float
) -> np.ndarray:
    return gamma * (x - mean) / np.sqrt(var + eps) + beta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def dropout_forward(
    x: np.ndarray, rate: float, training: bool, rng: Optional[np.random.Generator]
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout; identity (and no mask) outside training."""
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"dense expects (N, {weight.shape[0]}), got {x.shape}")
    return x @ weight + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def binary_cross_entropy(p_attack: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(p_attack, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = labels.astype(p.dtype)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """BCE on the attack-class softmax probability; returns (loss, dloss/dlogits).

    The gradient is exact for the clamped loss: zero where the probability sits
    outside [1e-7, 1 - 1e-7].
    """
    if logits.ndim != 2 or logits.shape[1] != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"expected (N, 2) logits for {labels.shape[0]} labels, got {logits.shape}")
    p = softmax(logits)[:, 1]
    loss = binary_cross_entropy(p, labels)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    dz1 = np.where(inside, p - labels, 0.0) / logits.shape[0]
    dlogits = np.stack([-dz1, dz1], axis=1).astype(logits.dtype)
    return loss, dlogits


# ---------------------------------------------------------------------------
# Layers


def he_uniform(rng: np.random.Generator, shape: Shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def describe(self) -> Dict:
        return {"kind": self.kind, "name": self.name}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, name: str, in_channels: int, filters: int, rng: np.random.Generator, dtype=np.float32, kernel_size: int = 3):
        super().__init__(name)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        fan_in = kernel_size * kernel_size * in_channels
        self.params["kernel"] = he_uniform(rng, (kernel_size, kernel_size, in_channels, filters), fan_in, dtype)
        self.params["bias"] = np.zeros(filters, dtype=dtype)
        self._x: Optional[np.ndarray] = None

    def forward(self, x, training=False, rng=None):
        self._x = x
        return conv2d_forward(x, self.params["kernel"], self.params["bias"])

    def backward(self, dout):
        dx, self.grads["kernel"], self.grads["bias"] = conv2d_backward(dout, self._x, self.params["kernel"])
        return dx

    def output_shape(self, shape):
        return (*shape[:-1], self.filters)

    def describe(self):
        return {**super().describe(), "in_channels": self.in_channels, "filters": self.filters, "kernel": self.kernel_size}


class BatchNorm2D(Layer):
    kind = "batchnorm"

    def __init__(self, name: str, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        # number of training batches folded into the running statistics
        self.buffers["tracked"] = np.zeros(1, dtype=dtype)
        self._cache = None

    @property
    def has_running_stats(self) -> bool:
        return bool(self.buffers["tracked"][0] > 0)

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.channels:
            raise ShapeMismatch(f"{self.name} expects {self.channels} channels, got {x.shape[-1]}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not training:
            self._cache = ("inference", x, None)
            return batchnorm_forward(x, gamma, beta, self.buffers["running_mean"], self.buffers["running_var"], self.eps)
        if x.shape[0] < 2:
            raise DegenerateBatch(f"{self.name}: batch statistics need at least 2 samples in training mode")
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = ("training", xhat, inv_std)

        count = x.size // self.channels
        unbiased = var * count / max(count - 1, 1)
        m = self.momentum
        self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mean).astype(x.dtype)
        self.buffers["running_var"] = (m * self.buffers["running_var"] + (1 - m) * unbiased).astype(x.dtype)
        self.buffers["tracked"] = self.buffers["tracked"] + 1
        return xhat * gamma + beta

    def backward(self, dout):
        gamma = self.params["gamma"]
        axes = tuple(range(dout.ndim - 1))
        mode, saved, inv_std = self._cache
        if mode == "inference":
            # saved holds the raw input in inference mode
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (saved - self.buffers["running_mean"]) * inv_std
            self.grads["gamma"] = (dout * xhat).sum(axis=axes)
            self.grads["beta"] = dout.sum(axis=axes)
            return dout * gamma * inv_std
        xhat = saved
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        dxhat = dout * gamma
        count = dout.size // self.channels
        return (inv_std / count) * (
            count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
        )

    def describe(self):
        return {**super().describe(), "channels": self.channels, "momentum": self.momentum, "eps": self.eps}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        mask = x > 0
        self._mask = mask
        return x * mask

    def backward(self, dout):
        return dout * self._mask


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, name: str, rate: float):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, training=False, rng=None):
        out, self._mask = dropout_forward(x, self.rate, training, rng)
        return out

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask

    def describe(self):
        return {**super().describe(), "rate": self.rate}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))


class Dense(Layer):
    kind = "dense"

    def __init__(self, name: str, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = he_uniform(rng, (in_features, out_features), in_features, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        self._x = x
        return dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dout):
        self.grads["weight"] = self._x.T @ dout
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"].T

    def output_shape(self, shape):
        return (shape[0], self.out_features)

    def describe(self):
        return {**super().describe(), "in_features": self.in_features, "out_features": self.out_features}
