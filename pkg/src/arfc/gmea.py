"""Median-enhanced channel attention, channel shuffle and strip-conv spatial attention."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .functional import ConvSpec
from .nn import Conv2d, Module, conv1x1, reduced_width
from .tensor import ConfigError, Tensor, relu, sigmoid, take_channels

STRIP_KERNELS = ((1, 7), (7, 1), (1, 11), (11, 1), (1, 21), (21, 1))


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    if channels % groups:
        raise ConfigError(f"{channels} channels cannot form {groups} shuffle groups")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: Tensor, groups: int = 4) -> Tensor:
    return take_channels(x, shuffle_permutation(x.shape[1], groups))


class GMEA(Module):
    def __init__(self, channels: int, rng, groups: int = 4, use_stem: bool = True):
        super().__init__()
        if channels % groups:
            raise ConfigError(f"GMEA channels {channels} not divisible by shuffle groups {groups}")
        hidden = reduced_width(channels)
        self.groups = groups
        self.use_stem = use_stem
        self.fc1 = conv1x1(channels, hidden, rng)
        self.fc2 = conv1x1(hidden, channels, rng)
        self.stem = Conv2d(ConvSpec.same(channels, channels, 5, groups=channels), rng) if use_stem else None
        self.branches = [Conv2d(ConvSpec.same(channels, channels, k, groups=channels), rng)
                         for k in STRIP_KERNELS]
        self.out_conv = conv1x1(channels, channels, rng)

    def mlp(self, v: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(v)))

    def forward(self, x):
        return gmea_forward(x, self)


def channel_attention(f: Tensor, block: GMEA) -> Tensor:
    """Scale ``f`` by the sum of three sigmoid gates (avg, max, median)."""
    gate = sum((sigmoid(block.mlp(F.global_pool(f, kind))) for kind in ("avg", "max", "median")),
               start=0.0)
    return f * gate


def depthwise_clamped(x: Tensor, conv: Conv2d) -> Tensor:
    """Depthwise 'same' conv with taps that can only ever see padding cropped away.

    A kernel extent larger than ``2 * size - 1`` reaches past the image on
    both sides for every output pixel, so cropping to that extent is exact.
    """
    spec = conv.spec
    _, _, h, w = x.shape
    kh, kw = min(spec.kernel_h, 2 * h - 1), min(spec.kernel_w, 2 * w - 1)
    if (kh, kw) == (spec.kernel_h, spec.kernel_w):
        return conv(x)
    r0, c0 = (spec.kernel_h - kh) // 2, (spec.kernel_w - kw) // 2
    weight = conv.weight[:, :, r0:r0 + kh, c0:c0 + kw]
    cropped = ConvSpec.same(spec.in_channels, spec.out_channels, (kh, kw), groups=spec.groups, bias=spec.bias)
    return F.conv2d(x, cropped, weight, conv.bias)


def spatial_attention(fs: Tensor, block: GMEA) -> Tensor:
    base = depthwise_clamped(fs, block.stem) if block.use_stem else fs
    total = None
    for conv in block.branches:
        y = depthwise_clamped(base, conv)
        total = y if total is None else total + y
    return block.out_conv(total) * fs


def gmea_forward(f: Tensor, block: GMEA) -> Tensor:
    return spatial_attention(channel_shuffle(channel_attention(f, block), block.groups), block)
