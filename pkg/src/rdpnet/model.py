"""The change-detection network: region division (strided conv patch
embedding), a stack of ConvMixer blocks, one region-composition
(transposed conv) head per depth, depth attention over the stacked
compositions, and a 1x1 classification head.

Input is the channel-wise concatenation of the two registered images;
output is a 2-class logit map at full input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (
    Conv2dLayer,
    ConvTranspose2dLayer,
    DepthAttention,
    Mode,
    ParamRegistry,
    SwitchableNorm,
    gelu,
    init_params,
)
from .tensor import Rng, Tensor
from .tensor import ops as T


@dataclass(frozen=True)
class RdpNetConfig:
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 6
    out_ch: int = 32
    dw_kernel: int = 7
    in_channels: int = 6  # two RGB images overlaid
    num_classes: int = 2
    dtype: str = "float64"

    def validate(self) -> None:
        for name in ("patch_size", "embed_dim", "depth", "out_ch", "dw_kernel",
                     "in_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.dw_kernel % 2 == 0:
            raise ConfigError(f"dw_kernel must be odd, got {self.dw_kernel}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


class ConvMixerBlock:
    """Depthwise (spatial) mixing with a residual, then pointwise
    (channel) mixing: u = x + SN(GELU(dw(x))); y = SN(GELU(pw(u)))."""

    def __init__(self, registry: ParamRegistry, prefix: str, dim: int, dw_kernel: int):
        pad = (dw_kernel - 1) // 2  # odd kernel, unit stride: same-size output
        self.dw = Conv2dLayer(registry, f"{prefix}.dw", dim, dim, dw_kernel,
                              padding=pad, groups=dim)
        self.sn1 = SwitchableNorm(registry, f"{prefix}.sn1", dim)
        self.pw = Conv2dLayer(registry, f"{prefix}.pw", dim, dim, 1)
        self.sn2 = SwitchableNorm(registry, f"{prefix}.sn2", dim)

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        u = T.add(x, self.sn1.forward(gelu(self.dw(x)), mode))
        return self.sn2.forward(gelu(self.pw(u)), mode)


class RdpNet:
    def __init__(self, config: RdpNetConfig):
        config.validate()
        self.config = config
        reg = ParamRegistry(dtype=config.np_dtype)
        self.registry = reg
        p, dim = config.patch_size, config.embed_dim
        self.division = Conv2dLayer(reg, "division.conv", config.in_channels, dim, p, stride=p)
        self.division_sn = SwitchableNorm(reg, "division.sn", dim)
        self.blocks = [
            ConvMixerBlock(reg, f"blocks.{d}", dim, config.dw_kernel)
            for d in range(config.depth)
        ]
        self.compositions = []
        self.composition_sns = []
        for d in range(config.depth):
            self.compositions.append(
                ConvTranspose2dLayer(reg, f"composition.{d}.convt", dim, config.out_ch,
                                     p, stride=p)
            )
            self.composition_sns.append(
                SwitchableNorm(reg, f"composition.{d}.sn", config.out_ch)
            )
        self.attention = DepthAttention(reg, "attention", config.out_ch * config.depth)
        self.head = Conv2dLayer(reg, "head", config.out_ch * config.depth,
                                config.num_classes, 1)

    @classmethod
    def build(cls, config: RdpNetConfig, rng: Optional[Rng] = None) -> "RdpNet":
        """Assemble and (when an rng is given) initialize the network."""
        net = cls(config)
        if rng is not None:
            init_params(net.registry, rng)
        return net

    @property
    def param_count(self) -> int:
        return self.registry.param_count()

    def _check_spatial(self, h: int, w: int) -> None:
        p = self.config.patch_size
        if h % p != 0 or w % p != 0:
            raise ShapeError(
                f"input extent {h}x{w} must be divisible by patch_size {p}"
            )

    def forward_batch(self, image_a, image_b, mode: Mode) -> Tensor:
        """(N,3,H,W) pair of stacks -> (N,num_classes,H,W) logits."""
        a = image_a.data if isinstance(image_a, Tensor) else np.asarray(image_a)
        b = image_b.data if isinstance(image_b, Tensor) else np.asarray(image_b)
        if a.shape != b.shape:
            raise ShapeError(f"image pair shapes differ: {a.shape} vs {b.shape}")
        if a.ndim != 4:
            raise ShapeError(f"expected (N,C,H,W) batches, got {a.shape}")
        self._check_spatial(a.shape[2], a.shape[3])
        if a.shape[1] * 2 != self.config.in_channels:
            raise ShapeError(
                f"pair supplies {a.shape[1] * 2} concatenated channels, "
                f"network expects {self.config.in_channels}"
            )
        x = Tensor(np.concatenate([a, b], axis=1), dtype=self.config.np_dtype)

        t = gelu(self.division_sn.forward(self.division(x), mode))
        composed = []
        for block, comp, comp_sn in zip(self.blocks, self.compositions, self.composition_sns):
            t = block.forward(t, mode)
            composed.append(gelu(comp_sn.forward(comp(t), mode)))
        stacked = T.concat(composed, axis=1)
        fused = self.attention.forward(stacked)
        return self.head(fused)

    def forward(self, image_a, image_b, mode: Mode) -> Tensor:
        """(3,H,W) image pair -> (num_classes,H,W) logits."""
        a = image_a.data if isinstance(image_a, Tensor) else np.asarray(image_a)
        b = image_b.data if isinstance(image_b, Tensor) else np.asarray(image_b)
        if a.ndim != 3 or b.ndim != 3:
            raise ShapeError(f"expected (C,H,W) images, got {a.shape} and {b.shape}")
        logits = self.forward_batch(a[None], b[None], mode)
        return T.getitem(logits, (0,))


def build(config: RdpNetConfig, rng: Optional[Rng] = None) -> RdpNet:
    return RdpNet.build(config, rng)


def predict_mask(logits) -> np.ndarray:
    """Per-pixel argmax over 2-class logits; exact ties resolve to class 0."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim != 3 or data.shape[0] != 2:
        raise ShapeError(f"predict_mask expects (2,H,W) logits, got {data.shape}")
    return (data[1] > data[0]).astype(np.uint8)


def predict_mask_batch(logits) -> np.ndarray:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim != 4 or data.shape[1] != 2:
        raise ShapeError(f"expected (N,2,H,W) logits, got {data.shape}")
    return (data[:, 1] > data[:, 0]).astype(np.uint8)


def _sn_param_count(channels: int) -> int:
    return 2 * channels + 6  # gain, offset, two 3-way mixing logit vectors


def param_count_formula(config: RdpNetConfig) -> int:
    """Closed-form parameter total, independent of the registry."""
    p, dim, d = config.patch_size, config.embed_dim, config.depth
    oc, k = config.out_ch, config.dw_kernel
    division = config.in_channels * dim * p * p + dim + _sn_param_count(dim)
    per_block = (dim * k * k + dim) + (dim * dim + dim) + 2 * _sn_param_count(dim)
    per_comp = dim * oc * p * p + oc + _sn_param_count(oc)
    attention = oc * d
    head = oc * d * config.num_classes + config.num_classes
    return division + d * per_block + d * per_comp + attention + head


def scaled_config(config: RdpNetConfig, **overrides) -> RdpNetConfig:
    return replace(config, **overrides)
