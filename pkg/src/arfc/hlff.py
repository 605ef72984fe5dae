"""High-low feature fusion on skip connections."""

from __future__ import annotations

from . import functional as F
from .functional import ConvSpec
from .nn import Conv2d, LayerNorm, Module, conv1x1
from .tensor import ConfigError, ShapeError, Tensor, concat, split

DILATIONS = (1, 2, 5, 7)


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    return F.bilinear_upsample(x, factor)


class HLFF(Module):
    """Fuse a low-level map (C_low, H, W) with a high-level map (C_high, H/2, W/2)."""

    def __init__(self, c_low: int, c_high: int, rng, groups: int = 4):
        super().__init__()
        if c_low % groups:
            raise ConfigError(f"HLFF low-level channels {c_low} not divisible by {groups}")
        self.groups = groups
        self.align_dw = Conv2d(ConvSpec.same(c_high, c_high, 3, groups=c_high), rng)
        self.align_pw = conv1x1(c_high, c_low, rng)
        q = c_low // groups
        self.group_convs = [Conv2d(ConvSpec.same(2 * q, q, 3, dilation=d), rng) for d in DILATIONS[:groups]]
        self.group_norm = LayerNorm(2 * q)
        self.out_norm = LayerNorm(c_low)
        self.out_proj = conv1x1(c_low, c_low, rng)

    def align(self, high: Tensor) -> Tensor:
        return bilinear_upsample(self.align_pw(self.align_dw(high)), 2)

    def forward(self, low, high):
        return hlff_forward(low, high, self)


def hlff_forward(low: Tensor, high: Tensor, block: HLFF) -> Tensor:
    aligned = block.align(high)
    if aligned.shape != low.shape:
        raise ShapeError(f"aligned high-level map {aligned.shape} != low-level {low.shape}")
    lows = split(low, block.groups, axis=1)
    highs = split(aligned, block.groups, axis=1)
    paths = [conv(block.group_norm(concat([h, l], axis=1)))
             for conv, h, l in zip(block.group_convs, highs, lows)]
    return block.out_proj(block.out_norm(concat(paths, axis=1)))
