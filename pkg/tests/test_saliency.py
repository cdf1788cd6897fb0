import math

import numpy as np
import pytest

from san.errors import ConfigurationError, DataError
from san.nn import Params
from san.saliency import (
    backbone_forward,
    binary_f1,
    fuse_high,
    fuse_low,
    init_saliency_params,
    rrb,
    saliency_forward,
    saliency_loss,
)
from san.tensor import Tensor, gradcheck, tsum, upsample_nearest
from san.training import train_saliency


@pytest.fixture
def params():
    return init_saliency_params(Params(), seed=0)


def _zero_biases(params):
    for name, p in params.items():
        if name.endswith(".bias"):
            p.data[...] = 0.0


def test_backbone_shapes(params):
    f1, f2, f3 = backbone_forward(np.random.default_rng(0).uniform(size=(3, 32, 32)), params)
    assert (f1.shape, f2.shape, f3.shape) == ((8, 16, 16), (16, 8, 8), (32, 4, 4))


def test_backbone_zero_image_gives_zero_features(params):
    _zero_biases(params)
    for f in backbone_forward(np.zeros((3, 32, 32)), params):
        assert not np.any(f.data)


def test_backbone_rejects_indivisible_size(params):
    with pytest.raises(ConfigurationError):
        backbone_forward(np.zeros((3, 20, 20)), params)


def test_fusion_shapes_and_zero_propagation(params):
    f1, f2, f3 = np.zeros((8, 16, 16)), np.zeros((16, 8, 8)), np.zeros((32, 4, 4))
    low = fuse_low(Tensor(f1), Tensor(f2), params)
    high = fuse_high(Tensor(f3), params, low.shape[-2:])
    assert low.shape == (16, 16, 16) and high.shape == (16, 16, 16)
    assert not np.any(low.data) and not np.any(high.data)


def test_zero_residue_gives_upsampled_s0(params):
    rng = np.random.default_rng(1)
    for name in ("sal.phi.0", "sal.phi.1"):
        for suffix in (".weight", ".bias"):
            params[name + suffix].data[...] = 0.0
    low, high = Tensor(rng.normal(size=(16, 16, 16))), Tensor(rng.normal(size=(16, 16, 16)))
    s0, s1 = rrb(low, high, params, (32, 32))
    assert np.array_equal(s1.data, upsample_nearest(s0, 2).data)


def test_constant_s0_and_residue(params):
    # S0 = c (zero kernel, bias c); residue = r (zero kernel, bias r)
    params["sal.s0.weight"].data[...] = 0.0
    params["sal.s0.bias"].data[...] = 0.75
    params["sal.phi.1.weight"].data[...] = 0.0
    params["sal.phi.1.bias"].data[...] = -0.5
    rng = np.random.default_rng(2)
    _, s1 = rrb(Tensor(rng.normal(size=(16, 4, 4))), Tensor(rng.normal(size=(16, 4, 4))), params)
    assert np.array_equal(s1.data, np.full((4, 4), 0.25))


def test_full_forward_shapes(params):
    out = saliency_forward(np.random.default_rng(0).uniform(size=(2, 3, 32, 32)), params)
    assert out["S0"].shape == (2, 16, 16)
    assert out["S1"].shape == (2, 32, 32)


def test_loss_is_ln2_at_zero_logits():
    mask = (np.random.default_rng(0).uniform(size=(8, 8)) > 0.5).astype(float)
    assert saliency_loss(np.zeros((8, 8)), mask).item() == pytest.approx(math.log(2.0), abs=1e-15)


def test_loss_vanishes_at_saturation():
    mask = np.array([[1.0, 0.0], [0.0, 1.0]])
    logits = np.where(mask > 0, 60.0, -60.0)
    assert saliency_loss(logits, mask).item() < 1e-20


def test_loss_matches_per_pixel_bce():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 6)) * 3
    y = (rng.uniform(size=(6, 6)) > 0.4).astype(float)
    total = 0.0
    for xi, yi in zip(x.ravel(), y.ravel()):
        p = 1.0 / (1.0 + math.exp(-xi))
        total += -(yi * math.log(p) + (1 - yi) * math.log(1 - p))
    assert saliency_loss(x, y).item() == pytest.approx(total / x.size, rel=1e-12)
    assert saliency_loss(x, y).item() >= 0


def test_loss_rejects_non_binary_mask():
    with pytest.raises(DataError):
        saliency_loss(np.zeros((2, 2)), np.full((2, 2), 0.5))


def test_binary_f1():
    mask = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert binary_f1(np.array([[1.0, 1.0], [-1.0, -1.0]]), mask) == 1.0
    # one true positive, one false positive, one false negative
    assert binary_f1(np.array([[1.0, -1.0], [1.0, -1.0]]), mask) == pytest.approx(0.5)


def test_saliency_gradcheck_on_16px_inputs():
    params = init_saliency_params(Params(), seed=4, channels=(2, 3, 4), fusion_width=3)
    rng = np.random.default_rng(4)
    for p in params.values():
        p.data += rng.normal(scale=0.1, size=p.shape)
    image = Tensor(rng.uniform(size=(3, 16, 16)))
    assert gradcheck(lambda: tsum(saliency_forward(image, params)["S1"]), {**params, "image": image}) <= 1e-4


def test_single_pair_overfits():
    rng = np.random.default_rng(5)
    image = rng.uniform(size=(1, 3, 16, 16))
    mask = np.zeros((1, 16, 16))
    mask[0, 4:10, 5:12] = 1.0
    params = init_saliency_params(Params(), seed=0)
    rows = train_saliency(params, image, mask, lr=0.1, batch=1, iterations=500, seed=0)
    assert rows[-1]["loss"] < 0.1
    assert rows[-1]["loss"] <= rows[0]["loss"]


def test_zero_learning_rate_is_a_no_op():
    rng = np.random.default_rng(6)
    params = init_saliency_params(Params(), seed=0)
    before = params.numpy()
    train_saliency(params, rng.uniform(size=(2, 3, 16, 16)), np.zeros((2, 16, 16)), 0.0, 2, 3, 0)
    after = params.numpy()
    assert all(np.array_equal(before[k], after[k]) for k in before)
