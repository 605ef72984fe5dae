"""Haar subbands, radial frequency masks and the wavelet downsampling block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import Module, conv1x1, conv3x3, reduced_width
from .tensor import ShapeError, Tensor, concat, make, relu, sigmoid, split


@dataclass
class WaveletSubbands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    source_shape: tuple

    def f1(self) -> Tensor:
        """All four subbands stacked on the channel axis."""
        return concat([self.ll, self.lh, self.hl, self.hh], axis=1)

    def f2(self) -> Tensor:
        return self.ll


def haar_analyze(x: Tensor) -> WaveletSubbands:
    """One unnormalised 2-D Haar level.

    For each 2x2 block [[a, b], [c, d]]::

        ll = a + b + c + d      lh = (a + c) - (b + d)
        hl = (a + b) - (c + d)  hh = (a + d) - (b + c)
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"haar_analyze needs even spatial dims, got {h}x{w}")
    d = x.data
    a, b, cc, dd = d[:, :, 0::2, 0::2], d[:, :, 0::2, 1::2], d[:, :, 1::2, 0::2], d[:, :, 1::2, 1::2]
    bands = np.concatenate([a + b + cc + dd, a - b + cc - dd, a + b - cc - dd, a - b - cc + dd], axis=1)

    def backward(g):
        gll, glh, ghl, ghh = np.split(g, 4, axis=1)
        gx = np.empty((n, c, h, w), dtype=g.dtype)
        gx[:, :, 0::2, 0::2] = gll + glh + ghl + ghh
        gx[:, :, 0::2, 1::2] = gll - glh + ghl - ghh
        gx[:, :, 1::2, 0::2] = gll + glh - ghl - ghh
        gx[:, :, 1::2, 1::2] = gll - glh - ghl + ghh
        return (gx,)

    stacked = make(bands, (x,), backward, "haar_analyze")
    ll, lh, hl, hh = split(stacked, 4, axis=1)
    return WaveletSubbands(ll, lh, hl, hh, (h, w))


def haar_synthesize(s: WaveletSubbands) -> Tensor:
    """Exact inverse of :func:`haar_analyze`."""
    shape = s.ll.shape
    if any(t.shape != shape for t in (s.lh, s.hl, s.hh)):
        raise ShapeError("subbands must share one shape")
    n, c, h, w = shape
    ll, lh, hl, hh = (t.data for t in (s.ll, s.lh, s.hl, s.hh))
    out = np.empty((n, c, 2 * h, 2 * w), dtype=ll.dtype)
    out[:, :, 0::2, 0::2] = (ll + lh + hl + hh) / 4
    out[:, :, 0::2, 1::2] = (ll - lh + hl - hh) / 4
    out[:, :, 1::2, 0::2] = (ll + lh - hl - hh) / 4
    out[:, :, 1::2, 1::2] = (ll - lh - hl + hh) / 4

    def backward(g):
        ga, gb, gc, gd = g[:, :, 0::2, 0::2], g[:, :, 0::2, 1::2], g[:, :, 1::2, 0::2], g[:, :, 1::2, 1::2]
        return ((ga + gb + gc + gd) / 4, (ga - gb + gc - gd) / 4,
                (ga + gb - gc - gd) / 4, (ga - gb - gc + gd) / 4)

    return make(out, (s.ll, s.lh, s.hl, s.hh), backward, "haar_synthesize")


def haar_fuse_downsampled(s: WaveletSubbands) -> Tensor:
    """Top-left sample of every reconstructed 2x2 block, at subband resolution."""
    return (s.ll + s.lh + s.hl + s.hh) * 0.25


@dataclass
class FrequencyMask:
    values: np.ndarray
    cutoff: float
    center: tuple
    kind: str


def radial_distance(h: int, w: int) -> np.ndarray:
    u0, v0 = h // 2, w // 2
    u = np.arange(h)[:, None] - u0
    v = np.arange(w)[None, :] - v0
    return np.sqrt(u * u + v * v)


def cutoff_for(h: int, w: int) -> int:
    return max(max(h, w) // 20, 1)


def build_mask(kind: str, h: int, w: int) -> FrequencyMask:
    """Radial mask in centred spectral coordinates.

    ``high_pass`` is ``1 - exp(-D0^2 / D^2)`` for ``D >= D0`` and 0 inside;
    ``low_pass`` is ``exp(-D^2 / D0^2)`` for ``D <= D0`` and 1 outside.
    """
    d0 = cutoff_for(h, w)
    dist = radial_distance(h, w)
    if kind == "high_pass":
        with np.errstate(divide="ignore"):
            vals = np.where(dist >= d0, 1.0 - np.exp(-(d0 ** 2) / np.maximum(dist, 1e-300) ** 2), 0.0)
    elif kind == "low_pass":
        vals = np.where(dist <= d0, np.exp(-(dist ** 2) / d0 ** 2), 1.0)
    elif kind == "identity":
        vals = np.ones((h, w))
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    return FrequencyMask(vals, float(d0), (h // 2, w // 2), kind)


class SqueezeExcite(Module):
    def __init__(self, channels: int, rng):
        super().__init__()
        hidden = reduced_width(channels)
        self.fc1 = conv1x1(channels, hidden, rng)
        self.fc2 = conv1x1(hidden, channels, rng)

    def gate(self, x: Tensor) -> Tensor:
        return sigmoid(self.fc2(relu(self.fc1(F.global_pool(x, "avg")))))

    def forward(self, x):
        return se_attention(x, self)


class PixelAttention(Module):
    def __init__(self, channels: int, rng):
        super().__init__()
        self.conv = conv1x1(channels, channels, rng)

    def forward(self, x):
        return pixel_attention(x, self)


def se_attention(x: Tensor, params: SqueezeExcite) -> Tensor:
    """Global-average squeeze, two-layer excitation, per-channel rescale."""
    return x * params.gate(x)


def pixel_attention(x: Tensor, params: PixelAttention) -> Tensor:
    return x * sigmoid(params.conv(x))


def suppress(x: Tensor) -> Tensor:
    """Sigmoid squashing applied to the recalibrated low band."""
    return sigmoid(x)


class WFED(Module):
    """Wavelet frequency-enhanced 2x downsampling, C channels in and out."""

    def __init__(self, channels: int, rng):
        super().__init__()
        if channels % 2:
            raise ValueError(f"WFED needs an even channel count, got {channels}")
        self.channels = channels
        c3 = 3 * channels
        self.entry = conv3x3(channels, channels, rng)
        self.se_high = SqueezeExcite(c3, rng)
        self.pa_high = PixelAttention(c3, rng)
        self.proj_se = conv1x1(c3, c3 // 2, rng)
        self.proj_pa = conv1x1(c3, c3 // 2, rng)
        self.se_low = SqueezeExcite(channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return wfed_forward(x, self)


def wfed_forward(x: Tensor, block: WFED) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"WFED needs even spatial dims, got {h}x{w}")
    bands = haar_analyze(block.entry(x))
    hh_, ww_ = h // 2, w // 2

    high = F.dft2_filter(concat([bands.lh, bands.hl, bands.hh], axis=1), build_mask("high_pass", hh_, ww_))
    high = concat([block.proj_se(se_attention(high, block.se_high)),
                   block.proj_pa(pixel_attention(high, block.pa_high))], axis=1)
    low = F.dft2_filter(bands.ll, build_mask("low_pass", hh_, ww_))
    low = suppress(se_attention(low, block.se_low))

    lh, hl, hh = split(high, 3, axis=1)
    enhanced = haar_fuse_downsampled(WaveletSubbands(low, lh, hl, hh, (h, w)))
    return enhanced + F.pool2d(x, "max", 2, 2)
