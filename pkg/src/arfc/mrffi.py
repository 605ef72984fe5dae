"""Gated three-expert convolution.

Experts: multi-scale dilated convolution (MSDC), modulated deformable
convolution (DCN) and multi-directional difference convolution (MDDC).
A pooled-feature scorer mixes them with per-sample softmax weights.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from . import functional as F
from .functional import ConvSpec
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Module, conv1x1, kaiming_uniform
from .tensor import (ConfigError, Parameter, ShapeError, Tensor, broadcast_to, concat, make, matmul,
                     record_branch, recording_branches, relu, reshape, sigmoid, softmax, tsum)

# (row, col) offsets of the two five-point difference stencils
S_HV = ((-1, 0), (0, -1), (0, 0), (0, 1), (1, 0))
S_DG = ((-1, -1), (-1, 1), (0, 0), (1, -1), (1, 1))


# -- deformable sampling --------------------------------------------------
def deform_conv2d(x: Tensor, offset: Tensor, modulation: Tensor, weight: Tensor,
                  padding: int = 1, dilation: int = 1) -> Tensor:
    """Modulated deformable convolution, stride 1.

    ``offset`` is (N, 2K, H', W') with channel ``2k`` the row shift and
    ``2k + 1`` the column shift of tap ``k``; ``modulation`` is (N, K, H', W').
    Fractional positions are read bilinearly, zero outside the image.
    """
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if cin != c:
        raise ShapeError(f"weight expects {cin} channels, input has {c}")
    k = kh * kw
    ho = h + 2 * padding - dilation * (kh - 1)
    wo = w + 2 * padding - dilation * (kw - 1)
    if offset.shape != (n, 2 * k, ho, wo) or modulation.shape != (n, k, ho, wo):
        raise ShapeError(f"offset {offset.shape} / modulation {modulation.shape} mismatch")
    p = ho * wo
    dt = x.dtype
    ki, kj = np.divmod(np.arange(k), kw)
    base_y = np.repeat(np.arange(ho) - padding, wo)[None, :] + (ki * dilation)[:, None]
    base_x = np.tile(np.arange(wo) - padding, ho)[None, :] + (kj * dilation)[:, None]
    base_y, base_x = base_y.astype(dt), base_x.astype(dt)
    xd = np.ascontiguousarray(x.data)
    off = np.ascontiguousarray(offset.data.reshape(n, k, 2, p))
    if recording_branches():
        record_branch(np.floor(base_y + off[:, :, 0]), np.floor(base_x + off[:, :, 1]))
    sampled = _kernels.gather(xd, off, base_y, base_x)
    mod = modulation.data.reshape(n, 1, k, p)
    cols = (sampled * mod).reshape(n, c * k, p)
    w2 = weight.data.reshape(cout, c * k)
    out = np.matmul(w2, cols).reshape(n, cout, ho, wo)

    def backward(g):
        go = g.reshape(n, cout, p)
        gw = np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape) if weight.requires_grad else None
        gcols = np.matmul(w2.T, go).reshape(n, c, k, p)
        gmod = (gcols * sampled).sum(axis=1).reshape(modulation.shape)
        gx, goff = _kernels.scatter(gcols * mod, xd, off, base_y, base_x, x.requires_grad)
        return (gx if x.requires_grad else None), goff.reshape(offset.shape), gmod, gw

    return make(out, (x, offset, modulation, weight), backward, "deform_conv2d")


# -- experts --------------------------------------------------------------
class MSDC(Module):
    """Dilated 3x3 convs at rates 1, 2, 3 plus a pooled global branch."""

    def __init__(self, cin: int, cout: int, rng):
        super().__init__()
        if cout % 4:
            raise ConfigError(f"MSDC output channels must be divisible by 4, got {cout}")
        mid = cout // 4
        self.dilated = [ConvBNReLU(ConvSpec.same(cin, mid, 3, d, bias=False), rng) for d in (1, 2, 3)]
        self.gap_proj = conv1x1(cin, mid, rng)
        self.fuse = ConvBNReLU(ConvSpec.same(cout, cout, 1, bias=False), rng)

    def forward(self, x):
        return msdc_forward(x, self)


def msdc_forward(x: Tensor, branch: MSDC) -> Tensor:
    n, _, h, w = x.shape
    ys = [conv(x) for conv in branch.dilated]
    g = relu(branch.gap_proj(F.global_pool(x, "avg")))
    ys.append(broadcast_to(g, (n, g.shape[1], h, w)))
    return branch.fuse(concat(ys, axis=1))


class DCN(Module):
    def __init__(self, cin: int, cout: int, rng):
        super().__init__()
        self.k = 9
        self.offset_conv = Conv2d(ConvSpec.same(cin, 2 * self.k, 3), rng, zero_init=True)
        self.modulation_conv = Conv2d(ConvSpec.same(cin, self.k, 3), rng, zero_init=True)
        self.weight = Parameter(kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9))

    def forward(self, x):
        return dcn_forward(x, self)


def dcn_forward(x: Tensor, branch: DCN) -> Tensor:
    offset = branch.offset_conv(x)
    modulation = sigmoid(branch.modulation_conv(x))
    return deform_conv2d(x, offset, modulation, branch.weight)


def _embed_matrix(stencil) -> np.ndarray:
    """(5, 9) matrix placing stencil weights into a flattened 3x3 kernel."""
    e = np.zeros((len(stencil), 9))
    for i, (dr, dc) in enumerate(stencil):
        e[i, (dr + 1) * 3 + (dc + 1)] = 1.0
    return e


def _reparam_matrix(stencil) -> np.ndarray:
    e = _embed_matrix(stencil)
    e[:, 4] -= 1.0  # centre tap collects -sum of all stencil weights
    return e


class MDDC(Module):
    """Horizontal/vertical and diagonal central-difference convolutions."""

    def __init__(self, cin: int, cout: int, rng):
        super().__init__()
        fan_in = cin * 5
        self.hv_weight = Parameter(kaiming_uniform(rng, (cout, cin, 5), fan_in))
        self.dg_weight = Parameter(kaiming_uniform(rng, (cout, cin, 5), fan_in))
        self.spec3 = ConvSpec.same(cin, cout, 3, bias=False)
        self.spec1 = ConvSpec.same(cin, cout, 1, bias=False)

    def forward(self, x):
        return mddc_forward(x, self, fast=True)

    def reparameterize(self) -> np.ndarray:
        """Single equivalent 3x3 kernel (HV + DG), shape (Cout, Cin, 3, 3)."""
        k = self.hv_weight.data @ _reparam_matrix(S_HV) + self.dg_weight.data @ _reparam_matrix(S_DG)
        return k.reshape(self.spec3.weight_shape).astype(self.hv_weight.dtype)


def _difference_conv(x: Tensor, weight: Tensor, stencil, branch: MDDC) -> Tensor:
    dt = weight.dtype
    kernel = reshape(matmul(weight, _embed_matrix(stencil).astype(dt)), branch.spec3.weight_shape)
    centre = reshape(tsum(weight, axis=-1), branch.spec1.weight_shape)
    return F.conv2d(x, branch.spec3, kernel) - F.conv2d(x, branch.spec1, centre)


def mddc_forward(x: Tensor, branch: MDDC, fast: bool = False) -> Tensor:
    """Sum of the HV and DG difference convolutions.

    ``fast`` runs one 3x3 convolution with the reparameterised kernel;
    otherwise each stencil is evaluated as ``sum_p w(p) x(p0+p) - x(p0) sum_p w(p)``.
    """
    if fast:
        dt = branch.hv_weight.dtype
        kernel = (matmul(branch.hv_weight, _reparam_matrix(S_HV).astype(dt))
                  + matmul(branch.dg_weight, _reparam_matrix(S_DG).astype(dt)))
        return F.conv2d(x, branch.spec3, reshape(kernel, branch.spec3.weight_shape))
    return (_difference_conv(x, branch.hv_weight, S_HV, branch)
            + _difference_conv(x, branch.dg_weight, S_DG, branch))


# -- gating ---------------------------------------------------------------
class GatedUnit(Module):
    def __init__(self, cin: int, rng, hidden: int = 16, experts: int = 3):
        super().__init__()
        self.fc1 = conv1x1(cin, hidden, rng)
        self.fc2 = conv1x1(hidden, experts, rng)

    def scores(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(F.global_pool(x, "avg"))))

    def forward(self, x):
        return gate_weights(x, self)


def gate_weights(x: Tensor, unit: GatedUnit) -> Tensor:
    """Per-sample softmax over expert scores, shape (N, 3, 1, 1)."""
    return softmax(unit.scores(x), axis=1)


class MRFFIConv(Module):
    """Drop-in replacement for a 3x3 conv + BN + ReLU, ``cin -> cout``."""

    def __init__(self, cin: int, cout: int, rng, gate_hidden: int = 16):
        super().__init__()
        self.msdc = MSDC(cin, cout, rng)
        self.dcn = DCN(cin, cout, rng)
        self.dcn_bn = BatchNorm2d(cout)
        self.mddc = MDDC(cin, cout, rng)
        self.mddc_bn = BatchNorm2d(cout)
        self.gate = GatedUnit(cin, rng, gate_hidden)

    def experts(self, x: Tensor) -> list:
        return [msdc_forward(x, self.msdc),
                relu(self.dcn_bn(dcn_forward(x, self.dcn))),
                relu(self.mddc_bn(mddc_forward(x, self.mddc, fast=True)))]

    def forward(self, x, gate_override=None):
        return mrffi_forward(x, self, gate_override)


def mrffi_forward(x: Tensor, bank: MRFFIConv, gate_override=None) -> Tensor:
    """Convex per-sample combination of the three expert outputs.

    ``gate_override`` pins the mixing weights (shape (3,) or (N, 3)).
    """
    ys = bank.experts(x)
    if any(y.shape != ys[0].shape for y in ys):
        raise ConfigError(f"expert output shapes differ: {[y.shape for y in ys]}")
    if gate_override is None:
        g = gate_weights(x, bank.gate)
    else:
        pinned = np.broadcast_to(np.asarray(gate_override, dtype=x.dtype), (x.shape[0], 3))
        g = Tensor(pinned.reshape(x.shape[0], 3, 1, 1))
    return g[:, 0:1] * ys[0] + g[:, 1:2] * ys[1] + g[:, 2:3] * ys[2]
