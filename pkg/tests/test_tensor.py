import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from san.errors import ConfigurationError, ShapeError, UsageError
from san.tensor import (
    Tensor,
    avg_pool2d,
    backward,
    concat,
    conv2d,
    gradcheck,
    matmul,
    mean_axis,
    no_grad,
    prelu,
    sigmoid,
    softmax,
    tanh,
    tmax,
    tsum,
    upsample_nearest,
)


# -- naive oracles ----------------------------------------------------------
def matmul_oracle(a, b):
    m, n = a.shape
    p = b.shape[1]
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for t in range(n):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv_oracle(x, w, stride, padding):
    c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * padding, wd + 2 * padding))
    xp[:, padding:padding + h, padding:padding + wd] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((k, oh, ow))
    for ko in range(k):
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0
                for ci in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            acc += w[ko, ci, i, j] * xp[ci, y * stride + i, xx * stride + j]
                out[ko, y, xx] = acc
    return out


def pool_oracle(x, sh, sw):
    h, w = x.shape
    out = np.zeros((h // sh, w // sw))
    for y in range(h // sh):
        for xx in range(w // sw):
            acc = 0.0
            for i in range(sh):
                for j in range(sw):
                    acc += x[y * sh + i, xx * sw + j]
            out[y, xx] = acc / (sh * sw)
    return out


# -- matmul -------------------------------------------------------------------
def test_matmul_identity_and_projector():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m).data, m)
    out = matmul([[1.0, 0.0], [0.0, 0.0]], [[5.0], [7.0]]).data
    assert np.array_equal(out, [[5.0], [0.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(a, b).data, matmul_oracle(a, b), rtol=0, atol=1e-14)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


# -- conv2d -------------------------------------------------------------------
def test_conv2d_trivial_cases():
    out = conv2d(np.ones((1, 3, 3)), np.full((1, 1, 1, 1), 2.0))
    assert np.array_equal(out.data, np.full((1, 3, 3), 2.0))
    out = conv2d(np.array([[[1.0, 2.0], [3.0, 4.0]]]), np.ones((1, 1, 2, 2)))
    assert np.array_equal(out.data, [[[10.0]]])


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv2d_bit_exact_against_nested_loops(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    x = rng.normal(size=(2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    if (5 + 2 * padding - 3) % stride:
        pytest.skip("non-integral geometry")
    assert np.array_equal(conv2d(x, w, stride=stride, padding=padding).data, conv_oracle(x, w, stride, padding))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), size=st.integers(3, 8), c=st.integers(1, 3), k=st.integers(1, 3))
def test_conv2d_bit_exact_property(seed, size, c, k):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(c, size, size))
    w = rng.normal(size=(k, c, 3, 3))
    assert np.array_equal(conv2d(x, w, padding=1).data, conv_oracle(x, w, 1, 1))


def test_conv2d_batched_equals_per_sample():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2, 6, 6))
    w = rng.normal(size=(4, 2, 3, 3))
    b = rng.normal(size=4)
    batched = conv2d(x, w, b, padding=1).data
    for n in range(3):
        assert np.array_equal(batched[n], conv2d(x[n], w, b, padding=1).data)


def test_conv2d_non_integral_output_is_configuration_error():
    with pytest.raises(ConfigurationError):
        conv2d(np.ones((1, 4, 4)), np.ones((1, 1, 3, 3)), stride=2, padding=0)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)))


# -- pooling / upsampling -----------------------------------------------------
def test_avg_pool_trivial():
    assert np.array_equal(avg_pool2d(np.ones((4, 4)), 2, 2).data, np.ones((2, 2)))
    assert np.array_equal(avg_pool2d([[1.0, 3.0], [5.0, 7.0]], 2, 2).data, [[4.0]])


def test_avg_pool_bit_exact_block_mean():
    x = np.random.default_rng(1).normal(size=(6, 6))
    assert np.array_equal(avg_pool2d(x, 3, 2).data, pool_oracle(x, 3, 2))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), sh=st.sampled_from([1, 2, 4]), sw=st.sampled_from([1, 2, 4, 8]))
def test_avg_pool_bit_exact_property(seed, sh, sw):
    x = np.random.default_rng(seed).normal(size=(8, 8))
    assert np.array_equal(avg_pool2d(x, sh, sw).data, pool_oracle(x, sh, sw))


def test_avg_pool_indivisible():
    with pytest.raises(ConfigurationError):
        avg_pool2d(np.ones((5, 4)), 2, 2)


def test_upsample_nearest_definition():
    out = upsample_nearest([[1.0, 2.0], [3.0, 4.0]], 2).data
    assert np.array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


# -- elementwise family -------------------------------------------------------
def test_sigmoid_and_softmax_trivial():
    assert sigmoid(0.0).item() == 0.5
    np.testing.assert_allclose(softmax([2.5, 2.5, 2.5]).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_sigmoid_is_stable_for_large_inputs():
    out = sigmoid([-800.0, 800.0]).data
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[1] == 1.0


def test_prelu_definition():
    out = prelu([[-2.0, 3.0]], [0.25], axis=0).data
    assert np.array_equal(out, [[-0.5, 3.0]])


def test_tanh_derivative_matches_central_difference():
    x = Tensor([0.3], requires_grad=True)
    (g,) = backward(tsum(tanh(x)), {"x": x}).values()
    h = 1e-5
    numeric = (math.tanh(0.3 + h) - math.tanh(0.3 - h)) / (2 * h)
    assert abs(g[0] - numeric) / abs(numeric) < 1e-6


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 7), scale=st.floats(0.1, 50.0))
def test_softmax_simplex(seed, n, scale):
    x = np.random.default_rng(seed).normal(size=(3, n)) * scale
    out = softmax(x, axis=1).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)


# -- backward -----------------------------------------------------------------
def test_backward_linear_and_quadratic():
    p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    g = backward(tsum(p), {"p": p})["p"]
    assert np.array_equal(g, np.ones((2, 3)))
    q = Tensor([1.0, 2.0], requires_grad=True)
    assert np.array_equal(backward(tsum(q * q), {"q": q})["q"], [2.0, 4.0])


def test_backward_requires_scalar():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(UsageError):
        backward(p * 2.0, {"p": p})


def test_unreachable_parameter_gets_zero_gradient():
    p = Tensor([1.0], requires_grad=True)
    q = Tensor([[1.0, 2.0]], requires_grad=True)
    grads = backward(tsum(p * 3.0), {"p": p, "q": q})
    assert np.array_equal(grads["q"], np.zeros((1, 2)))


def test_shared_node_visited_once():
    p = Tensor([2.0], requires_grad=True)
    y = p * p
    loss = tsum(y + y * y)  # y reused
    # d/dp (p^2 + p^4) = 2p + 4p^3
    assert backward(loss, {"p": p})["p"][0] == pytest.approx(2 * 2 + 4 * 8)


def test_no_grad_records_nothing():
    p = Tensor([1.0], requires_grad=True)
    with no_grad():
        out = p * 3.0
    assert not out.requires_grad and out._ctx is None


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))
    a = conv2d(x, w, padding=1).data
    b = conv2d(x, w, padding=1).data
    assert a.tobytes() == b.tobytes()


# -- gradcheck ----------------------------------------------------------------
def test_gradcheck_square_is_exact():
    x = Tensor([3.0])
    assert gradcheck(lambda: tsum(x * x), [x], 1e-5) < 1e-8


def test_gradcheck_sigmoid_sum():
    x = Tensor(np.random.default_rng(0).normal(size=4))
    assert gradcheck(lambda: tsum(sigmoid(x)), [x], 1e-5) < 1e-6


def _composite(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(1, 2, 6, 6)))
    w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5)
    b = Tensor(rng.normal(size=3) * 0.1)
    slope = Tensor(rng.uniform(0.1, 0.4, size=3))
    m = Tensor(rng.normal(size=(9, 4)) * 0.3)
    probe = Tensor(rng.normal(size=(1, 3, 4)))

    def f():
        h = prelu(conv2d(x, w, b, padding=1), slope, axis=1)
        p = avg_pool2d(h, 2, 2)  # 1 x 3 x 3 x 3
        flat = p.reshape(3, 9)
        z = tanh(matmul(flat, m))
        att = softmax(z, axis=1)
        up = upsample_nearest(p, 2)
        mix = concat([att.reshape(1, 3, 4), probe], axis=0)
        return tsum(mix * mix) + mean_axis(sigmoid(up)) + tsum(tmax(z, axis=1))

    return f, {"x": x, "w": w, "b": b, "slope": slope, "m": m}


@pytest.mark.parametrize("seed", range(20))
def test_composed_function_gradcheck(seed):
    f, point = _composite(seed)
    assert gradcheck(f, point, 1e-5) <= 1e-4
