import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arfc import experiment
from arfc.network import NetConfig, build_network, infer, infer_padded, soft_iou_loss
from arfc.selftest import perturb_parameters
from arfc.tensor import ConfigError, Parameter, ShapeError, Tensor
from helpers import assert_grads

SMALL = (4, 8, 12, 16, 20)


def small(**switches):
    return build_network(NetConfig(stage_channels=SMALL, **switches))


@pytest.mark.parametrize("variant", sorted(experiment.VARIANTS))
def test_every_variant_maps_image_to_logits(rng, variant):
    net = small(**experiment.VARIANTS[variant])
    out = net(Tensor(rng.random((2, 1, 32, 16)).astype(np.float32)))
    assert out.shape == (2, 1, 32, 16) and out.dtype == np.float32


def test_ablation_switches_change_the_architecture():
    counts = {v: small(**s).num_parameters() for v, s in experiment.VARIANTS.items()}
    assert counts["full"] == small().num_parameters()  # construction is deterministic
    assert len(set(counts.values())) == len(counts)
    assert counts["backbone"] < counts["full"]


def test_same_seed_same_weights():
    a, b = small(seed=5).state_dict(), small(seed=5).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = small(seed=6).state_dict()
    assert any(not np.array_equal(a[k], c[k]) for k in a)


@pytest.mark.parametrize("chans,match", [
    ((8, 16, 32, 64), "5 stage widths"),
    ((8, 16, 30, 64, 128), "divisible by 4"),
    ((8, 16, 16, 64, 128), "strictly increasing"),
])
def test_config_errors(chans, match):
    with pytest.raises(ConfigError, match=match):
        NetConfig(stage_channels=chans)


@given(st.integers(1, 40))
def test_loss_at_perfect_and_empty_predictions(t):
    y = np.zeros((1, 1, 8, 8))
    y.reshape(-1)[:t] = 1
    perfect = soft_iou_loss(Tensor(np.where(y > 0, 60.0, -60.0), dtype=np.float64), y).item()
    empty = soft_iou_loss(Tensor(np.full(y.shape, -60.0), dtype=np.float64), y).item()
    assert abs(perfect) < 1e-12
    assert abs(empty - t / (t + 1)) < 1e-12


def test_loss_averages_over_samples_and_checks_shape():
    y = np.zeros((2, 1, 4, 4))
    y[0, 0, 0, 0] = 1
    logits = np.full(y.shape, -60.0)
    logits[0] = np.where(y[0] > 0, 60.0, -60.0)
    assert soft_iou_loss(Tensor(logits, dtype=np.float64), y).item() == pytest.approx(0.0, abs=1e-12)
    y[1, 0, 1, 1] = 1
    assert soft_iou_loss(Tensor(logits, dtype=np.float64), y).item() == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(ShapeError):
        soft_iou_loss(Tensor(logits), y[:, :, :2])


def test_loss_gradcheck(f64, rng):
    logits = Parameter(rng.normal(size=(2, 1, 5, 5)))
    y = rng.random((2, 1, 5, 5)) < 0.3
    assert_grads(lambda: soft_iou_loss(logits, y), [logits])


def test_infer_contract(rng):
    net = small()
    img = rng.random((32, 48))
    mask, sal = infer(net, img, threshold=0.5)
    assert mask.shape == sal.shape == (1, 1, 32, 48)
    np.testing.assert_array_equal(mask, sal > 0.5)
    assert net.training  # mode restored
    with pytest.raises(ShapeError, match="infer_padded"):
        infer(net, rng.random((30, 32)))


def test_infer_padded_crops_back(rng):
    net = perturb_parameters(small(), rng)
    img = rng.random((21, 35))
    mask, sal = infer_padded(net, img)
    assert mask.shape == (1, 1, 21, 35)
    aligned = rng.random((32, 32))
    np.testing.assert_array_equal(infer_padded(net, aligned)[1], infer(net, aligned)[1])
    assert infer_padded(net, rng.random((5, 3)))[1].shape == (1, 1, 5, 3)
