import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arfc import functional as F
from arfc.functional import ConvSpec
from arfc.selftest import loop_conv2d
from arfc.tensor import ConfigError, Parameter, ShapeError, Tensor, precision
from helpers import assert_grads, weighted_sum


@st.composite
def conv_cases(draw):
    groups = draw(st.sampled_from([1, 2, 3]))
    cin = groups * draw(st.integers(1, 2))
    cout = groups * draw(st.integers(1, 2))
    kh, kw = draw(st.integers(1, 4)), draw(st.integers(1, 4))
    stride, dil = draw(st.integers(1, 2)), draw(st.integers(1, 2))
    pad = tuple(draw(st.integers(0, 2)) for _ in range(4))
    h = draw(st.integers(dil * (kh - 1) + 1, 9))
    w = draw(st.integers(dil * (kw - 1) + 1, 9))
    return ConvSpec(cin, cout, kh, kw, stride, dil, groups, pad), h, w, draw(st.integers(0, 2 ** 31))


@given(conv_cases())
def test_conv2d_matches_loop_oracle(case):
    spec, h, w, seed = case
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, spec.in_channels, h, w))
    wt = rng.normal(size=spec.weight_shape)
    b = rng.normal(size=spec.out_channels)
    got = F.conv2d(Tensor(x), spec, Tensor(wt), Tensor(b)).data
    want = loop_conv2d(x, wt, b, spec.stride, spec.dilation, spec.groups, spec.padding)
    np.testing.assert_allclose(got, want, atol=1e-10)


@pytest.mark.parametrize("spec", [
    ConvSpec.same(4, 4, (1, 7), groups=4),  # depthwise kernel path
    ConvSpec.same(6, 6, 5, dilation=2, groups=6),
    ConvSpec.same(3, 5, 1),  # pointwise matmul path
    ConvSpec(4, 6, 3, 2, stride=2, groups=2, padding=(1, 0, 2, 1)),
])
def test_conv2d_gradcheck(f64, rng, spec):
    x = Parameter(rng.normal(size=(2, spec.in_channels, 7, 8)))
    w = Parameter(rng.normal(size=spec.weight_shape))
    b = Parameter(rng.normal(size=spec.out_channels))
    ho, wo = spec.output_size(7, 8)
    assert_grads(weighted_sum(lambda: F.conv2d(x, spec, w, b), (2, spec.out_channels, ho, wo), rng), [x, w, b])


def test_conv2d_32_bit_output_stays_32_bit(rng):
    spec = ConvSpec.same(2, 3, 3)
    x = Tensor(rng.normal(size=(1, 2, 5, 5)).astype(np.float32))
    w = Tensor(rng.normal(size=spec.weight_shape).astype(np.float32))
    assert F.conv2d(x, spec, w).dtype == np.float32


def test_conv_spec_validation():
    with pytest.raises(ConfigError):
        ConvSpec(3, 4, groups=2)
    with pytest.raises(ConfigError):
        ConvSpec(1, 1, 5, 5).output_size(3, 3)
    with pytest.raises(ShapeError):
        F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), ConvSpec.same(3, 1), Tensor(np.zeros((1, 3, 3, 3))))


def test_max_pool_forward_and_odd_padding():
    x = np.arange(15.0).reshape(1, 1, 3, 5)
    out = F.pool2d(Tensor(x), "max").data[0, 0]
    # odd rows/cols repeat the last row/col before pooling
    np.testing.assert_array_equal(out, [[6, 8, 9], [11, 13, 14]])


@pytest.mark.parametrize("kind", ["max", "avg"])
def test_pool_gradcheck(f64, rng, kind):
    x = Parameter(rng.normal(size=(2, 3, 5, 6)))
    assert_grads(weighted_sum(lambda: F.pool2d(x, kind), (2, 3, 3, 3), rng), [x])


@pytest.mark.parametrize("kind", ["avg", "max", "median"])
def test_global_pool_matches_numpy(f64, rng, kind):
    for h, w in [(3, 3), (4, 5)]:
        x = rng.normal(size=(2, 3, h, w))
        got = F.global_pool(Tensor(x), kind).data[..., 0, 0]
        want = {"avg": np.mean, "max": np.max, "median": np.median}[kind](x.reshape(2, 3, -1), axis=-1)
        np.testing.assert_allclose(got, want, atol=1e-12)
        p = Parameter(x)
        assert_grads(weighted_sum(lambda: F.global_pool(p, kind), (2, 3, 1, 1), rng), [p])


def test_batch_norm_train_and_eval(f64, rng):
    x = rng.normal(2.0, 3.0, size=(4, 3, 5, 5))
    gamma, beta = Parameter(np.ones(3)), Parameter(np.zeros(3))
    rm, rv = np.zeros(3), np.ones(3)
    out = F.batch_norm(Tensor(x), gamma, beta, rm, rv, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))
    const = F.batch_norm(Tensor(np.full((2, 3, 2, 2), 5.0)), gamma, beta, np.zeros(3), np.ones(3), True).data
    np.testing.assert_array_equal(const, 0)
    ev = F.batch_norm(Tensor(x), gamma, beta, rm, rv, training=False).data
    np.testing.assert_allclose(ev, (x - rm[:, None, None]) / np.sqrt(rv[:, None, None] + 1e-5))
    with pytest.raises(ShapeError):
        F.batch_norm(Tensor(np.zeros((1, 3, 1, 1))), gamma, beta, rm, rv, training=True)


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradcheck(f64, rng, training):
    x = Parameter(rng.normal(size=(3, 2, 4, 4)))
    g, b = Parameter(rng.normal(size=2)), Parameter(rng.normal(size=2))
    rm, rv = rng.normal(size=2), rng.uniform(0.5, 2, size=2)
    fn = weighted_sum(lambda: F.batch_norm(x, g, b, rm.copy(), rv.copy(), training), x.shape, rng)
    assert_grads(fn, [x, g, b])


def test_layer_norm_statistics_and_gradcheck(f64, rng):
    x = Parameter(rng.normal(1.0, 4.0, size=(3, 4, 5, 5)))
    g, b = Parameter(rng.normal(size=4)), Parameter(rng.normal(size=4))
    plain = F.layer_norm(x, Parameter(np.ones(4)), Parameter(np.zeros(4))).data
    np.testing.assert_allclose(plain.mean(axis=(1, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(plain.var(axis=(1, 2, 3)), 1, atol=1e-5)
    assert_grads(weighted_sum(lambda: F.layer_norm(x, g, b), x.shape, rng), [x, g, b])


def direct_dft2_filter(x, mask):
    """O(H^2 W^2) spectral filtering with explicit DFT matrices, centred mask."""
    h, w = x.shape[-2:]
    fh = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fw = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    spec = fh @ x @ fw.T
    centred = np.roll(spec, (h // 2, w // 2), axis=(-2, -1)) * mask
    spec = np.roll(centred, (-(h // 2), -(w // 2)), axis=(-2, -1))
    return (np.conj(fh) @ spec @ np.conj(fw).T).real / (h * w)


@pytest.mark.parametrize("shape", [(8, 8), (7, 10), (5, 5)])
def test_dft2_filter_matches_direct_dft(f64, rng, shape):
    h, w = shape
    dist = np.hypot(*np.meshgrid(np.arange(h) - h // 2, np.arange(w) - w // 2, indexing="ij"))
    mask = np.exp(-dist ** 2 / 4.0)
    if h % 2 == 0 or w % 2 == 0:
        # even sizes need the Nyquist row/col symmetric under k -> -k
        m = np.fft.ifftshift(mask)
        mask = np.fft.fftshift((m + np.roll(m[::-1, ::-1], 1, axis=(0, 1))) / 2)
    x = rng.normal(size=(2, 3, h, w))
    np.testing.assert_allclose(F.dft2_filter(Tensor(x), mask).data, direct_dft2_filter(x, mask), atol=1e-10)
    p = Parameter(x)
    assert_grads(weighted_sum(lambda: F.dft2_filter(p, mask), x.shape, rng), [p])


def test_dft2_filter_rejects_asymmetric_mask():
    mask = np.zeros((4, 4))
    mask[0, 1] = 1
    with pytest.raises(ConfigError):
        F.dft2_filter(Tensor(np.zeros((1, 1, 4, 4))), mask)


def test_bilinear_upsample_preserves_constants_and_gradchecks(f64, rng):
    const = F.bilinear_upsample(Tensor(np.full((1, 2, 3, 4), 2.5)), 2).data
    np.testing.assert_allclose(const, 2.5)
    x = Parameter(rng.normal(size=(2, 2, 3, 4)))
    assert_grads(weighted_sum(lambda: F.bilinear_upsample(x, 2), (2, 2, 6, 8), rng), [x])


def test_bilinear_upsample_interior_values():
    x = np.array([[0.0, 4.0]])[None, None]
    out = F.bilinear_upsample(Tensor(x), 2).data[0, 0, 0]
    np.testing.assert_allclose(out, [0.0, 1.0, 3.0, 4.0])


def test_conv2d_precision_context_roundtrip(rng):
    with precision(np.float64):
        spec = ConvSpec.same(1, 1, 3)
        out = F.conv2d(Tensor(rng.normal(size=(1, 1, 4, 4))), spec, Tensor(np.ones(spec.weight_shape)))
    assert out.dtype == np.float64
