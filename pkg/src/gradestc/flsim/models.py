"""Small numpy models with hand-written backpropagation.

Parameters live in an ordered ``dict`` of arrays. Weight matrices use the
(out_features, in_features) layout; the conv kernel is stored as
(kernels, in_channels, kh, kw).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError
from ..seeding import TAG_INIT, derive_rng

Params = dict[str, np.ndarray]


@dataclass
class ModelSpec:
    variant: str = "mlp"
    features: int = 32
    classes: int = 4
    hidden: int = 64
    in_channels: int = 1
    kernels: int = 8
    kernel_size: int = 3
    init_seed: int = 0

    def __post_init__(self):
        if self.variant not in ("logreg", "mlp", "tinyconv"):
            raise ConfigError(f"unknown model variant {self.variant!r}")
        dims = (self.features, self.classes, self.hidden, self.in_channels, self.kernels, self.kernel_size)
        if min(dims) < 1:
            raise ConfigError(f"model dimensions must be positive: {self}")


def softmax_cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    batch = logits.shape[0]
    rows = np.arange(batch)
    loss = -np.mean(np.log(probs[rows, y]))
    dlogits = probs
    dlogits[rows, y] -= 1.0
    return float(loss), dlogits / batch


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Model:
    spec: ModelSpec

    def init_params(self) -> Params:
        raise NotImplementedError

    def logits(self, params: Params, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss_and_grads(self, params: Params, x: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
        raise NotImplementedError

    def loss(self, params: Params, x: np.ndarray, y: np.ndarray) -> float:
        return softmax_cross_entropy(self.logits(params, x), y)[0]

    def accuracy(self, params: Params, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(np.argmax(self.logits(params, x), axis=1) == y))

    def _rng(self, name: str):
        return derive_rng(self.spec.init_seed, TAG_INIT, name)


class LogReg(Model):
    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def init_params(self) -> Params:
        s = self.spec
        return {
            "fc.weight": _uniform(self._rng("fc.weight"), (s.classes, s.features), s.features),
            "fc.bias": np.zeros(s.classes),
        }

    def logits(self, params, x):
        return x @ params["fc.weight"].T + params["fc.bias"]

    def loss_and_grads(self, params, x, y):
        loss, dz = softmax_cross_entropy(self.logits(params, x), y)
        return loss, {"fc.weight": dz.T @ x, "fc.bias": dz.sum(axis=0)}


class MLP(Model):
    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def init_params(self) -> Params:
        s = self.spec
        return {
            "fc1.weight": _uniform(self._rng("fc1.weight"), (s.hidden, s.features), s.features),
            "fc1.bias": np.zeros(s.hidden),
            "fc2.weight": _uniform(self._rng("fc2.weight"), (s.classes, s.hidden), s.hidden),
            "fc2.bias": np.zeros(s.classes),
        }

    def _forward(self, params, x):
        pre = x @ params["fc1.weight"].T + params["fc1.bias"]
        hidden = np.maximum(pre, 0.0)
        return pre, hidden, hidden @ params["fc2.weight"].T + params["fc2.bias"]

    def logits(self, params, x):
        return self._forward(params, x)[2]

    def loss_and_grads(self, params, x, y):
        pre, hidden, z = self._forward(params, x)
        loss, dz = softmax_cross_entropy(z, y)
        dhidden = (dz @ params["fc2.weight"]) * (pre > 0)
        return loss, {
            "fc1.weight": dhidden.T @ x,
            "fc1.bias": dhidden.sum(axis=0),
            "fc2.weight": dz.T @ hidden,
            "fc2.bias": dz.sum(axis=0),
        }


class TinyConv(Model):
    """3x3 'same' convolution, ReLU, global average pooling, linear head.

    Inputs are flat vectors reshaped to (in_channels, side, side).
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        side = math.isqrt(spec.features // spec.in_channels)
        if spec.in_channels * side * side != spec.features:
            raise ConfigError("tinyconv needs features = in_channels * side**2")
        if spec.kernel_size % 2 == 0:
            raise ConfigError("tinyconv kernel_size must be odd")
        self.side = side

    def init_params(self) -> Params:
        s = self.spec
        fan_in = s.in_channels * s.kernel_size**2
        return {
            "conv.weight": _uniform(
                self._rng("conv.weight"), (s.kernels, s.in_channels, s.kernel_size, s.kernel_size), fan_in
            ),
            "conv.bias": np.zeros(s.kernels),
            "fc.weight": _uniform(self._rng("fc.weight"), (s.classes, s.kernels), s.kernels),
            "fc.bias": np.zeros(s.classes),
        }

    def _patches(self, x):
        s = self.spec
        pad = s.kernel_size // 2
        img = x.reshape(x.shape[0], s.in_channels, self.side, self.side)
        img = np.pad(img, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        # (B, C, H, W, kh, kw)
        return sliding_window_view(img, (s.kernel_size, s.kernel_size), axis=(2, 3))

    def _forward(self, params, x):
        patches = self._patches(x)
        pre = np.einsum("bchwij,kcij->bkhw", patches, params["conv.weight"]) + params["conv.bias"][:, None, None]
        act = np.maximum(pre, 0.0)
        pooled = act.mean(axis=(2, 3))
        return patches, pre, pooled, pooled @ params["fc.weight"].T + params["fc.bias"]

    def logits(self, params, x):
        return self._forward(params, x)[3]

    def loss_and_grads(self, params, x, y):
        patches, pre, pooled, z = self._forward(params, x)
        loss, dz = softmax_cross_entropy(z, y)
        dpooled = dz @ params["fc.weight"]
        dpre = (pre > 0) * (dpooled[:, :, None, None] / (self.side * self.side))
        return loss, {
            "conv.weight": np.einsum("bkhw,bchwij->kcij", dpre, patches),
            "conv.bias": dpre.sum(axis=(0, 2, 3)),
            "fc.weight": dz.T @ pooled,
            "fc.bias": dz.sum(axis=0),
        }


def build_model(spec: ModelSpec) -> Model:
    return {"logreg": LogReg, "mlp": MLP, "tinyconv": TinyConv}[spec.variant](spec)


def layer_tensor_shape(arr: np.ndarray) -> tuple[int, ...]:
    """Shape of a parameter as a gradient tensor; conv kernels become (W, H, D, C)."""
    return tuple(reversed(arr.shape)) if arr.ndim == 4 else tuple(arr.shape)


def to_tensor_values(arr: np.ndarray) -> np.ndarray:
    return arr.transpose(3, 2, 1, 0) if arr.ndim == 4 else arr


def from_tensor_values(values: np.ndarray) -> np.ndarray:
    return values.transpose(3, 2, 1, 0) if values.ndim == 4 else values
