"""Parameterized layers: registry, initialization, GELU, convolution
wrappers, Switchable Normalization, and the depth-attention vector."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Literal, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Rng, Tensor
from .tensor import ops as T

Mode = Literal["train", "eval"]


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")


@dataclass
class ParamSpec:
    shape: tuple[int, ...]
    init: str  # kaiming | zeros | ones
    fan_in: Optional[int] = None


class ParamRegistry:
    """Ordered name -> tracked Tensor map plus non-learnable buffers.

    Iteration order is insertion order, which fixes both initialization
    draws and checkpoint layout.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._specs: dict[str, ParamSpec] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def add(self, name: str, shape, init: str, fan_in: Optional[int] = None) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        t = Tensor(np.zeros(shape, dtype=self.dtype), tracked=True)
        self._params[name] = t
        self._specs[name] = ParamSpec(shape=shape, init=init, fan_in=fan_in)
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._buffers or name in self._params:
            raise ConfigError(f"duplicate buffer name {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self._buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def spec(self, name: str) -> ParamSpec:
        return self._specs[name]

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return self._buffers

    def param_count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None


def init_params(registry: ParamRegistry, rng: Rng, scheme: str = "default") -> None:
    """Fill all registered parameters in registration order.

    Kernels: Kaiming-uniform over fan-in, bound sqrt(6 / fan_in);
    biases/offsets and normalization logits: zero; gains and the depth
    attention vector: one.
    """
    if scheme != "default":
        raise ConfigError(f"unknown init scheme {scheme!r}")
    for name, t in registry.items():
        spec = registry.spec(name)
        if spec.init == "kaiming":
            if not spec.fan_in or spec.fan_in <= 0:
                raise ConfigError(f"parameter {name!r} needs a positive fan_in")
            bound = math.sqrt(6.0 / spec.fan_in)
            t._set_data(rng.uniform(-bound, bound, spec.shape).astype(registry.dtype))
        elif spec.init == "zeros":
            t._set_data(np.zeros(spec.shape, dtype=registry.dtype))
        elif spec.init == "ones":
            t._set_data(np.ones(spec.shape, dtype=registry.dtype))
        else:
            raise ConfigError(f"unknown init kind {spec.init!r} for {name!r}")


def gelu(x: Tensor) -> Tensor:
    """Exact-erf form x * Phi(x)."""
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    return T.mul(T.mul(x, 0.5), T.add(T.erf(T.mul(x, inv_sqrt2)), 1.0))


class Conv2dLayer:
    def __init__(self, registry: ParamRegistry, prefix: str, in_ch: int, out_ch: int,
                 kernel: int, stride: int = 1, padding: int = 0, groups: int = 1):
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_ch // groups) * kernel * kernel
        self.kernel = registry.add(
            f"{prefix}.kernel", (out_ch, in_ch // groups, kernel, kernel),
            init="kaiming", fan_in=fan_in,
        )
        self.bias = registry.add(f"{prefix}.bias", (out_ch,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.bias, stride=self.stride,
                        padding=self.padding, groups=self.groups)


class ConvTranspose2dLayer:
    def __init__(self, registry: ParamRegistry, prefix: str, in_ch: int, out_ch: int,
                 kernel: int, stride: int = 1, padding: int = 0):
        self.stride = stride
        self.padding = padding
        self.kernel = registry.add(
            f"{prefix}.kernel", (in_ch, out_ch, kernel, kernel),
            init="kaiming", fan_in=in_ch * kernel * kernel,
        )
        self.bias = registry.add(f"{prefix}.bias", (out_ch,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.kernel, self.bias, stride=self.stride,
                                  padding=self.padding)


class SwitchableNorm:
    """Normalization mixing instance/layer/batch statistics via learnable
    softmax weights (separate mixing logits for mean and variance).

    Batch statistics feed an EMA (running mean/var) in train mode; eval
    mode substitutes the running values, which makes each sample's output
    independent of the rest of the batch.
    """

    def __init__(self, registry: ParamRegistry, prefix: str, channels: int,
                 eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = registry.add(f"{prefix}.gamma", (channels,), init="ones")
        self.beta = registry.add(f"{prefix}.beta", (channels,), init="zeros")
        self.lambda_mean = registry.add(f"{prefix}.lambda_mean", (3,), init="zeros")
        self.lambda_var = registry.add(f"{prefix}.lambda_var", (3,), init="zeros")
        self.running_mean = registry.add_buffer(f"{prefix}.running_mean", np.zeros(channels))
        self.running_var = registry.add_buffer(f"{prefix}.running_var", np.ones(channels))

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        _check_mode(mode)
        if x.ndim != 4:
            raise ShapeError(f"SwitchableNorm expects NCHW input, got shape {x.shape}")
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"SwitchableNorm built for {self.channels} channels, input has {c}")

        mu_in = T.mean(x, (2, 3), keepdims=True)
        var_in = T.var(x, (2, 3), keepdims=True)
        mu_ln = T.mean(x, (1, 2, 3), keepdims=True)
        var_ln = T.var(x, (1, 2, 3), keepdims=True)
        if mode == "train":
            mu_bn = T.mean(x, (0, 2, 3), keepdims=True)
            var_bn = T.var(x, (0, 2, 3), keepdims=True)
            m = self.momentum
            self.running_mean *= 1.0 - m
            self.running_mean += m * mu_bn.data.reshape(c)
            self.running_var *= 1.0 - m
            self.running_var += m * var_bn.data.reshape(c)
        else:
            mu_bn = Tensor(self.running_mean.reshape(1, c, 1, 1))
            var_bn = Tensor(self.running_var.reshape(1, c, 1, 1))

        wm = T.softmax(self.lambda_mean, axis=0)
        wv = T.softmax(self.lambda_var, axis=0)
        mu = T.add(T.add(T.mul(wm[0], mu_in), T.mul(wm[1], mu_ln)), T.mul(wm[2], mu_bn))
        v = T.add(T.add(T.mul(wv[0], var_in), T.mul(wv[1], var_ln)), T.mul(wv[2], var_bn))
        inv_std = T.pow_scalar(T.add(v, self.eps), -0.5)
        y = T.mul(T.sub(x, mu), inv_std)
        gamma = T.reshape(self.gamma, (1, c, 1, 1))
        beta = T.reshape(self.beta, (1, c, 1, 1))
        return T.add(T.mul(y, gamma), beta)


def sn_forward(sn: SwitchableNorm, x: Tensor, mode: Mode) -> Tensor:
    return sn.forward(x, mode)


class DepthAttention:
    """Per-channel learnable scaling over the stacked depth outputs."""

    def __init__(self, registry: ParamRegistry, prefix: str, length: int):
        self.length = length
        self.weights = registry.add(f"{prefix}.weights", (length,), init="ones")

    def forward(self, stacked: Tensor) -> Tensor:
        if stacked.ndim == 3:
            channels = stacked.shape[0]
            w = T.reshape(self.weights, (self.length, 1, 1))
        elif stacked.ndim == 4:
            channels = stacked.shape[1]
            w = T.reshape(self.weights, (1, self.length, 1, 1))
        else:
            raise ShapeError(f"depth attention expects (C,H,W) or (N,C,H,W), got {stacked.shape}")
        if channels != self.length:
            raise ShapeError(
                f"depth attention weight length {self.length} does not match "
                f"{channels} input channels"
            )
        return T.mul(stacked, w)


def depth_attention_forward(da: DepthAttention, stacked: Tensor) -> Tensor:
    return da.forward(stacked)
