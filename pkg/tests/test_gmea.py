import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arfc import gmea
from arfc.selftest import loop_conv2d, perturb_parameters
from arfc.tensor import ConfigError, Parameter, Tensor
from helpers import assert_grads, weighted_sum


def sig(v):
    return 1 / (1 + np.exp(-v))


def mlp(block, v):
    h = np.maximum(v @ block.fc1.weight.data[:, :, 0, 0].T + block.fc1.bias.data, 0)
    return h @ block.fc2.weight.data[:, :, 0, 0].T + block.fc2.bias.data


def test_shuffle_permutations():
    np.testing.assert_array_equal(gmea.shuffle_permutation(4, 4), np.arange(4))
    np.testing.assert_array_equal(gmea.shuffle_permutation(8, 4), [0, 2, 4, 6, 1, 3, 5, 7])
    with pytest.raises(ConfigError):
        gmea.shuffle_permutation(6, 4)


@given(st.integers(1, 8), st.sampled_from([1, 2, 4]))
def test_shuffle_is_a_bijection(k, groups):
    c = k * groups
    perm = gmea.shuffle_permutation(c, groups)
    matrix = np.eye(c)[perm]
    np.testing.assert_array_equal(matrix @ matrix.T, np.eye(c))
    x = np.random.default_rng(k).normal(size=(1, c, 2, 2))
    shuffled = gmea.channel_shuffle(Tensor(x), groups).data
    np.testing.assert_array_equal(shuffled[:, np.argsort(perm)], x)


def test_channel_attention_oracle(f64, rng):
    block = perturb_parameters(gmea.GMEA(8, rng), rng)
    x = rng.normal(size=(2, 8, 5, 4))
    flat = x.reshape(2, 8, -1)
    gate = sum(sig(mlp(block, d)) for d in (flat.mean(-1), flat.max(-1), np.median(flat, -1)))
    assert (gate > 0).all() and (gate < 3).all()
    got = gmea.channel_attention(Tensor(x), block).data
    np.testing.assert_allclose(got, x * gate[:, :, None, None], atol=1e-12)
    const = np.full((1, 8, 3, 3), 0.7)
    want = 3 * sig(mlp(block, const[:, :, 0, 0]))
    np.testing.assert_allclose(gmea.channel_attention(Tensor(const), block).data, const * want[:, :, None, None])


def test_zero_mlp_gives_one_and_a_half(f64, rng):
    block = gmea.GMEA(8, rng)
    for p in (block.fc1.weight, block.fc1.bias, block.fc2.weight, block.fc2.bias):
        p.data[...] = 0
    x = rng.normal(size=(1, 8, 4, 4))
    np.testing.assert_allclose(gmea.channel_attention(Tensor(x), block).data, 1.5 * x)


def test_spatial_attention_six_branch_oracle(f64, rng):
    block = perturb_parameters(gmea.GMEA(4, rng), rng)
    x = rng.normal(size=(2, 4, 24, 23))  # large enough that no strip kernel is clamped
    stem = block.stem
    base = loop_conv2d(x, stem.weight.data, stem.bias.data, groups=4, padding=stem.spec.padding)
    total = sum(loop_conv2d(base, b.weight.data, b.bias.data, groups=4, padding=b.spec.padding)
                for b in block.branches)
    want = loop_conv2d(total, block.out_conv.weight.data, block.out_conv.bias.data) * x
    np.testing.assert_allclose(gmea.spatial_attention(Tensor(x), block).data, want, atol=1e-9)
    assert [b.spec.kernel_h * 100 + b.spec.kernel_w for b in block.branches] == [107, 701, 111, 1101, 121, 2101]


def test_clamped_strips_are_exact_on_small_maps(f64, rng):
    block = perturb_parameters(gmea.GMEA(4, rng), rng)
    x = rng.normal(size=(1, 4, 4, 3))
    for conv in block.branches:
        want = loop_conv2d(x, conv.weight.data, conv.bias.data, groups=4, padding=conv.spec.padding)
        np.testing.assert_allclose(gmea.depthwise_clamped(Tensor(x), conv).data, want, atol=1e-12)


def test_branch_isolation_and_zero_weights(f64, rng):
    block = perturb_parameters(gmea.GMEA(4, rng), rng)
    x = rng.normal(size=(1, 4, 9, 9))
    block.stem.weight.data[...] = 0
    block.stem.weight.data[:, :, 2, 2] = 1
    block.stem.bias.data[...] = 0
    for b in block.branches[1:]:
        b.weight.data[...] = 0
        b.bias.data[...] = 0
    only = block.branches[0]
    d = loop_conv2d(x, only.weight.data, only.bias.data, groups=4, padding=only.spec.padding)
    want = loop_conv2d(d, block.out_conv.weight.data, block.out_conv.bias.data) * x
    np.testing.assert_allclose(gmea.spatial_attention(Tensor(x), block).data, want, atol=1e-12)

    for p in block.parameters():
        p.data[...] = 0
    out = block(Tensor(x))
    assert out.shape == x.shape
    np.testing.assert_array_equal(out.data, 0)


def test_stem_toggle(rng):
    block = gmea.GMEA(8, rng, use_stem=False)
    assert block.stem is None and block(Tensor(rng.normal(size=(1, 8, 6, 6)))).shape == (1, 8, 6, 6)


def test_gmea_gradcheck(f64, rng):
    block = perturb_parameters(gmea.GMEA(8, rng), rng)
    x = Parameter(rng.normal(size=(2, 8, 6, 5)))
    assert_grads(weighted_sum(lambda: block(x), x.shape, rng), [x] + block.parameters(), max_coords=25)
