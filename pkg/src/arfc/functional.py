"""Primitive kernels with hand-written adjoints.

Every function takes and returns :class:`~arfc.tensor.Tensor` objects of
shape (N, C, H, W) unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tensor import ConfigError, ShapeError, Tensor, make, record_branch


def _quad(padding) -> tuple:
    """Normalise padding to (top, bottom, left, right)."""
    if isinstance(padding, int):
        return (padding,) * 4
    if len(padding) == 2:
        return (padding[0], padding[0], padding[1], padding[1])
    return tuple(padding)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    padding: tuple = (0, 0, 0, 0)
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "padding", _quad(self.padding))
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w,
               self.stride, self.dilation, self.groups) < 1:
            raise ConfigError(f"non-positive field in {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}")

    @classmethod
    def same(cls, in_channels, out_channels, kernel=3, dilation=1, groups=1, bias=True):
        """Stride-1 spec whose zero padding preserves H and W."""
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        ph, pw = dilation * (kh - 1) // 2, dilation * (kw - 1) // 2
        return cls(in_channels, out_channels, kh, kw, 1, dilation, groups, (ph, ph, pw, pw), bias)

    @property
    def weight_shape(self) -> tuple:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_h, self.kernel_w)

    def output_size(self, h: int, w: int) -> tuple:
        t, b, l, r = self.padding
        ho = (h + t + b - self.dilation * (self.kernel_h - 1) - 1) // self.stride + 1
        wo = (w + l + r - self.dilation * (self.kernel_w - 1) - 1) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"{self} yields empty output for input {h}x{w}")
        return ho, wo


def _pad(x: np.ndarray, pad: tuple) -> np.ndarray:
    t, b, l, r = pad
    if not any(pad):
        return x
    return np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)))


def _tap_slices(kh, kw, stride, dil, ho, wo):
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dil, j * dil
            yield i * kw + j, (slice(None), slice(None), slice(r0, r0 + hs, stride), slice(c0, c0 + ws, stride))


def _im2col(xp, kh, kw, stride, dil, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh * kw, ho, wo), dtype=xp.dtype)
    for t, sl in _tap_slices(kh, kw, stride, dil, ho, wo):
        cols[:, :, t] = xp[sl]
    return cols


def _col2im(cols, padded_shape, kh, kw, stride, dil, ho, wo):
    gx = np.zeros(padded_shape, dtype=cols.dtype)
    for t, sl in _tap_slices(kh, kw, stride, dil, ho, wo):
        gx[sl] += cols[:, :, t]
    return gx


def _depthwise(x: Tensor, spec: ConvSpec, weight: Tensor, ho: int, wo: int):
    """Direct-loop depthwise conv; avoids materialising k-fold columns for long strips."""
    n, c, h, w = x.shape
    xp = np.ascontiguousarray(_pad(x.data, spec.padding))
    wd = np.ascontiguousarray(weight.data.reshape(c, spec.kernel_h, spec.kernel_w))
    out = _kernels.depthwise_forward(xp, wd, spec.stride, spec.dilation, ho, wo)

    def backward(go):
        gw, gxp = _kernels.depthwise_backward(np.ascontiguousarray(go), xp, wd, spec.stride,
                                              spec.dilation, x.requires_grad)
        gx = None
        if x.requires_grad:
            top, _, left, _ = spec.padding
            gx = gxp[:, :, top:top + h, left:left + w]
        return gx, (gw.reshape(spec.weight_shape) if weight.requires_grad else None)

    return out, backward


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Zero-padded cross-correlation (no kernel flip)."""
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"input {x.shape} does not match {spec.in_channels} input channels")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"weight {weight.shape} != expected {spec.weight_shape}")
    n, c, h, w = x.shape
    ho, wo = spec.output_size(h, w)
    kh, kw, g = spec.kernel_h, spec.kernel_w, spec.groups
    k = kh * kw
    p = ho * wo
    cout = spec.out_channels
    wd = weight.data
    depthwise = g == c and cout == c and g > 1
    pointwise = k == 1 and g == 1 and spec.stride == 1 and not any(spec.padding)
    if depthwise:
        out, dw_backward = _depthwise(x, spec, weight, ho, wo)
    else:
        xp = _pad(x.data, spec.padding)
        if pointwise:
            cols = xp.reshape(n, c, 1, p)
        else:
            cols = _im2col(xp, kh, kw, spec.stride, spec.dilation, ho, wo)
        if g == 1:
            w2 = wd.reshape(cout, c * k)
            out = np.matmul(w2, cols.reshape(n, c * k, p))
        else:
            w2 = wd.reshape(g, cout // g, (c // g) * k)
            out = np.einsum("gok,ngkp->ngop", w2, cols.reshape(n, g, (c // g) * k, p), optimize=True)
        out = out.reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def backward(gout):
        gb = None
        if bias is not None and bias.requires_grad:
            gb = gout.sum(axis=(0, 2, 3))
        if depthwise:
            return (*dw_backward(gout), gb)
        go = gout.reshape(n, cout, p)
        gw = gx = None
        if weight.requires_grad:
            if g == 1:
                gw = np.matmul(go, cols.reshape(n, c * k, p).transpose(0, 2, 1)).sum(axis=0)
            else:
                gw = np.einsum("ngop,ngkp->gok", go.reshape(n, g, cout // g, p),
                               cols.reshape(n, g, (c // g) * k, p), optimize=True)
            gw = gw.reshape(spec.weight_shape)
        if x.requires_grad:
            if g == 1:
                gcols = np.matmul(w2.T, go)
            else:
                gcols = np.einsum("gok,ngop->ngkp", w2, go.reshape(n, g, cout // g, p), optimize=True)
            if pointwise:
                gx = gcols.reshape(x.shape)
            else:
                gxp = _col2im(gcols.reshape(n, c, k, ho, wo), xp.shape, kh, kw, spec.stride,
                              spec.dilation, ho, wo)
                t, _, l, _ = spec.padding
                gx = gxp[:, :, t:t + h, l:l + w]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward, "conv2d")


def replicate_pad_even(x: Tensor) -> Tensor:
    """Repeat the last row/column so that H and W become even."""
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    if not (ph or pw):
        return x
    out = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")

    def backward(g):
        gx = g[:, :, :h, :w].copy()
        if ph:
            gx[:, :, h - 1, :] += g[:, :, h, :w]
        if pw:
            gx[:, :, :, w - 1] += g[:, :, :h, w]
        if ph and pw:
            gx[:, :, h - 1, w - 1] += g[:, :, h, w]
        return (gx,)

    return make(out, (x,), backward, "replicate_pad")


def pool2d(x: Tensor, kind: str = "max", window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping window pooling; odd inputs are replicate-padded first."""
    if window != stride:
        raise ConfigError("only non-overlapping pooling (window == stride) is supported")
    if x.shape[2] == 0 or x.shape[3] == 0:
        raise ShapeError(f"empty spatial dims in {x.shape}")
    if window == 2:
        x = replicate_pad_even(x)
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"{h}x{w} not divisible by pooling window {window}")
    ho, wo = h // window, w // window
    blocks = x.data.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, ho, wo, window * window)
    if kind == "max":
        arg = blocks.argmax(axis=-1)
        record_branch(arg)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            gb = np.zeros(blocks.shape, dtype=g.dtype)
            np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
            return (_unblock(gb, n, c, ho, wo, window),)
    elif kind == "avg":
        out = blocks.mean(axis=-1)

        def backward(g):
            gb = np.broadcast_to(g[..., None] / (window * window), blocks.shape)
            return (_unblock(gb, n, c, ho, wo, window),)
    else:
        raise ConfigError(f"unknown pooling kind {kind!r}")
    return make(np.ascontiguousarray(out), (x,), backward, f"{kind}_pool2d")


def _unblock(gb, n, c, ho, wo, k):
    gb = gb.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(gb).reshape(n, c, ho * k, wo * k)


def global_pool(x: Tensor, kind: str = "avg") -> Tensor:
    """Per-channel spatial statistic, shape (N, C, 1, 1).

    The median of an even-length channel is the mean of its two middle
    order statistics.
    """
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    L = h * w
    if kind == "avg":
        out = flat.mean(axis=-1)

        def backward(g):
            return (np.broadcast_to(g / L, (n, c, h, w)).copy(),)
    elif kind in ("max", "median"):
        if kind == "max":
            picks = [(flat.argmax(axis=-1), 1.0)]
        else:
            mid = [L // 2] if L % 2 else [L // 2 - 1, L // 2]
            order = np.argpartition(flat, mid, axis=-1)
            if L % 2:
                picks = [(order[..., L // 2], 1.0)]
            else:
                picks = [(order[..., L // 2 - 1], 0.5), (order[..., L // 2], 0.5)]
        record_branch(*(idx for idx, _ in picks))
        out = sum(wt * np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0] for idx, wt in picks)

        def backward(g):
            gf = np.zeros_like(flat)
            for idx, wt in picks:
                cur = np.take_along_axis(gf, idx[..., None], axis=-1)
                np.put_along_axis(gf, idx[..., None], cur + wt * g.reshape(n, c, 1), axis=-1)
            return (gf.reshape(n, c, h, w),)
    else:
        raise ConfigError(f"unknown global pooling kind {kind!r}")
    return make(np.asarray(out, dtype=x.dtype).reshape(n, c, 1, 1), (x,), backward, f"global_{kind}")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over (N, H, W).

    In training mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    n, c, h, w = x.shape
    m = n * h * w
    shape = (1, c, 1, 1)
    if training:
        if m < 2:
            raise ShapeError(f"batch_norm needs N*H*W >= 2 per channel, got {m}")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu.reshape(c)
        running_var *= momentum
        running_var += (1 - momentum) * var.reshape(c) * m / (m - 1)
    else:
        mu = running_mean.reshape(shape).astype(x.dtype)
        var = running_var.reshape(shape).astype(x.dtype)
        xc = x.data - mu
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            if training:
                gx = inv / m * (m * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
            else:
                gx = dxhat * inv
        return gx, gg, gbeta

    return make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample normalisation over (C, H, W) with a per-channel affine."""
    n, c, h, w = x.shape
    m = c * h * w
    shape = (1, c, 1, 1)
    mu = x.data.mean(axis=(1, 2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(1, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            gx = inv / m * (m * dxhat - dxhat.sum(axis=(1, 2, 3), keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=(1, 2, 3), keepdims=True))
        return gx, gg, gbeta

    return make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "layer_norm")


def _check_symmetric(m: np.ndarray) -> None:
    # m[k] must equal m[-k] (mod size) for the filter to be real and self-adjoint
    mirrored = np.roll(m[::-1, ::-1], 1, axis=(0, 1))
    if not np.allclose(m, mirrored, rtol=0, atol=1e-12):
        raise ConfigError("frequency mask is not point-symmetric about the spectral center")


def dft2_filter(x: Tensor, mask) -> Tensor:
    """Multiply the centred 2-D spectrum of every channel by a real mask.

    ``mask`` is an (H, W) array (or anything with a ``values`` attribute)
    laid out in centred coordinates, i.e. the zero frequency sits at
    ``(H // 2, W // 2)``.
    """
    values = np.asarray(getattr(mask, "values", mask), dtype=np.float64)
    if values.shape != x.shape[2:]:
        raise ShapeError(f"mask {values.shape} does not match spatial dims {x.shape[2:]}")
    m = np.fft.ifftshift(values)
    _check_symmetric(m)

    def apply(a):
        return np.fft.ifft2(np.fft.fft2(a, axes=(2, 3)) * m, axes=(2, 3)).real.astype(x.dtype)

    return make(apply(x.data), (x,), lambda g: (apply(g),), "dft2_filter")


def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.arange(n_out), i0), 1 - frac)
    np.add.at(mat, (np.arange(n_out), i1), frac)
    return mat


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Bilinear resize by an integer factor (half-pixel centres, edge clamp)."""
    n, c, h, w = x.shape
    uh = _interp_matrix(h, factor).astype(x.dtype)
    uw = _interp_matrix(w, factor).astype(x.dtype)
    out = np.matmul(uh, np.matmul(x.data, uw.T))

    def backward(g):
        return (np.matmul(uh.T, np.matmul(g, uw)),)

    return make(out, (x,), backward, "bilinear_upsample")
