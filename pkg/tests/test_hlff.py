import numpy as np
import pytest

from arfc import functional as F
from arfc import hlff
from arfc.selftest import loop_conv2d, perturb_parameters
from arfc.tensor import ConfigError, Parameter, ShapeError, Tensor, split
from helpers import assert_grads, weighted_sum


def interp_oracle(x, factor=2):
    """Each output pixel from its half-pixel source coordinate, clamped at the edges."""
    h, w = x.shape
    out = np.zeros((h * factor, w * factor))
    for i in range(h * factor):
        for j in range(w * factor):
            sy = min(max((i + 0.5) / factor - 0.5, 0), h - 1)
            sx = min(max((j + 0.5) / factor - 0.5, 0), w - 1)
            y0, x0 = int(sy), int(sx)
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * x[y0, x0] + fx * x[y0, x1])
                         + fy * ((1 - fx) * x[y1, x0] + fx * x[y1, x1]))
    return out


def test_upsample_closed_form(rng):
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    got = hlff.bilinear_upsample(Tensor(x[None, None]), 2).data[0, 0]
    np.testing.assert_allclose(got, interp_oracle(x))
    np.testing.assert_allclose(got[0], [0, 0.25, 0.75, 1])
    np.testing.assert_array_equal(hlff.bilinear_upsample(Tensor(np.full((1, 1, 1, 1), 7.0))).data, 7.0)
    r = rng.normal(size=(5, 3))
    np.testing.assert_allclose(hlff.bilinear_upsample(Tensor(r[None, None])).data[0, 0], interp_oracle(r))


def layer_norm(v, g, b):
    mu = v.mean(axis=(1, 2, 3), keepdims=True)
    var = v.var(axis=(1, 2, 3), keepdims=True)
    return (v - mu) / np.sqrt(var + 1e-5) * g[:, None, None] + b[:, None, None]


def test_group_by_group_oracle(f64, rng):
    block = perturb_parameters(hlff.HLFF(8, 16, rng), rng)
    low, high = rng.normal(size=(2, 8, 6, 6)), rng.normal(size=(2, 16, 3, 3))
    aligned = block.align(Tensor(high)).data
    dw, pw = block.align_dw, block.align_pw
    manual = loop_conv2d(high, dw.weight.data, dw.bias.data, groups=16, padding=dw.spec.padding)
    manual = loop_conv2d(manual, pw.weight.data, pw.bias.data)
    np.testing.assert_allclose(aligned, F.bilinear_upsample(Tensor(manual)).data, atol=1e-12)
    paths = []
    gn = block.group_norm
    for i, (conv, d) in enumerate(zip(block.group_convs, (1, 2, 5, 7))):
        assert conv.spec.dilation == d
        pair = np.concatenate([aligned[:, 2 * i:2 * i + 2], low[:, 2 * i:2 * i + 2]], axis=1)
        pair = layer_norm(pair, gn.weight.data, gn.bias.data)
        paths.append(loop_conv2d(pair, conv.weight.data, conv.bias.data, dilation=d, padding=conv.spec.padding))
    fused = layer_norm(np.concatenate(paths, axis=1), block.out_norm.weight.data, block.out_norm.bias.data)
    want = loop_conv2d(fused, block.out_proj.weight.data, block.out_proj.bias.data)
    got = block(Tensor(low), Tensor(high)).data
    assert got.shape == low.shape
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_zero_high_level_input_is_isolated(f64, rng):
    block = perturb_parameters(hlff.HLFF(8, 16, rng), rng)
    for conv in (block.align_dw, block.align_pw):
        conv.weight.data[...] = 0
    low = Tensor(rng.normal(size=(1, 8, 4, 4)))
    a = block(low, Tensor(rng.normal(size=(1, 16, 2, 2)))).data
    b = block(low, Tensor(np.zeros((1, 16, 2, 2)))).data
    np.testing.assert_array_equal(a, b)


def test_split_is_a_partition(rng):
    x = Tensor(rng.normal(size=(2, 8, 3, 3)))
    parts = split(x, 4, axis=1)
    assert all(p.shape[1] == 2 for p in parts)
    np.testing.assert_array_equal(np.concatenate([p.data for p in parts], axis=1), x.data)


def test_channel_and_shape_errors(rng):
    with pytest.raises(ConfigError):
        hlff.HLFF(6, 16, rng)
    block = hlff.HLFF(8, 16, rng)
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((1, 8, 6, 6))), Tensor(np.zeros((1, 16, 2, 2))))


def test_hlff_gradcheck(f64, rng):
    block = perturb_parameters(hlff.HLFF(8, 16, rng), rng)
    low = Parameter(rng.normal(size=(2, 8, 4, 4)))
    high = Parameter(rng.normal(size=(2, 16, 2, 2)))
    assert_grads(weighted_sum(lambda: block(low, high), low.shape, rng), [low, high] + block.parameters(),
                 max_coords=30)
