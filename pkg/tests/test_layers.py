import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dscnn.errors import DimensionError
from dscnn.gradcheck import check_gradients
from dscnn.layers import (Conv2d, Deconv2d, concat, conv2d, conv_transpose2d, maxpool2d, relu,
                          sigmoid, upsample)
from dscnn.tensor import Tensor, backward, tensor_new, tensor_sum


def direct_conv(x, w, b, pad):
    """Loop-by-loop cross-correlation, independent of the im2col path."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    out[bi, oc, i, j] = np.sum(xp[bi, :, i:i + kh, j:j + kw] * w[oc]) + b[oc]
    return out


def weighted_sum(out, rng_seed=0):
    """Scalar probe with generic weights so every output element matters."""
    probe = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return tensor_sum(out * Tensor(probe, dtype=np.float64))


def f64(rng, *shape, grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=grad, dtype=np.float64)


# conv2d ----------------------------------------------------------------------


def test_conv_identity_1x1(rng):
    layer = Conv2d(1, 1, 1)
    layer.weight.data[:] = 1.0
    x = Tensor(rng.standard_normal((1, 1, 5, 5)).astype(np.float32))
    assert np.array_equal(layer(x).data, x.data)


def test_conv_zero_kernel_gives_bias():
    layer = Conv2d(2, 1, 3)
    layer.weight.data[:] = 0.0
    layer.bias.data[:] = 0.7
    out = layer(tensor_new((1, 2, 4, 4), 3.0))
    assert np.allclose(out.data, 0.7)


def test_conv_averaging_kernel_on_constant_image():
    c = 2.0
    layer = Conv2d(1, 1, 3)
    layer.weight.data[:] = 1.0 / 9.0
    x = tensor_new((1, 1, 5, 5), c)
    out = layer(x).data[0, 0]
    oracle = direct_conv(x.data.astype(np.float64), layer.weight.data.astype(np.float64), [0.0], 1)[0, 0]
    assert np.allclose(out, oracle, atol=1e-6)
    assert out[2, 2] == pytest.approx(c)
    assert out[0, 0] == pytest.approx(4 * c / 9)
    assert out[0, 2] == pytest.approx(6 * c / 9)


def test_conv_matches_direct_oracle(rng):
    x = rng.standard_normal((2, 3, 6, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                 Tensor(b.reshape(1, 4, 1, 1), dtype=np.float64), padding=1)
    assert np.allclose(out.data, direct_conv(x, w, b, 1), atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        Conv2d(3, 2, 3)(tensor_new((1, 2, 4, 4), 0.0))


def test_conv_rejects_other_kernel_sizes():
    with pytest.raises(DimensionError):
        Conv2d(1, 1, 5)


def test_identity_convs_compose(rng):
    x = Tensor(rng.standard_normal((1, 3, 4, 4)).astype(np.float32))
    y = x
    for _ in range(4):
        layer = Conv2d(3, 3, 1)
        layer.weight.data[:] = np.eye(3, dtype=np.float32)[:, :, None, None]
        y = layer(y)
    assert np.array_equal(y.data, x.data)


# relu / sigmoid -------------------------------------------------------------------


def test_relu_forward_and_subgradient():
    x = tensor_new((1, 1, 1, 3), [-1, 0, 2], requires_grad=True)
    out = relu(x)
    assert np.array_equal(out.data.reshape(-1), [0, 0, 2])
    backward(out.sum())
    assert np.array_equal(x.grad.reshape(-1), [0, 0, 1])


def test_relu_identity_on_positive(rng):
    x = Tensor(rng.random((1, 2, 3, 3)).astype(np.float32) + 0.1)
    assert np.array_equal(relu(x).data, x.data)


def test_sigmoid_values():
    out = sigmoid(tensor_new((1, 1, 1, 3), [0.0, -1000.0, 1000.0], dtype=np.float64))
    v = out.data.reshape(-1)
    assert v[0] == 0.5
    # exp(-1000) is below the smallest subnormal double, so 0.0 is the correctly rounded value
    assert 0.0 <= v[1] <= 1e-300 and np.isfinite(v[1])
    assert v[2] == 1.0


def test_sigmoid_no_overflow_warning():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        sigmoid(tensor_new((1, 1, 1, 2), [-1000.0, 1000.0]))


def test_sigmoid_derivative_at_zero():
    x = tensor_new((1, 1, 1, 1), 0.0, requires_grad=True, dtype=np.float64)
    backward(sigmoid(x).sum())
    h = 1e-5
    fd = (1 / (1 + np.exp(-h)) - 1 / (1 + np.exp(h))) / (2 * h)
    assert x.grad.item() == pytest.approx(0.25)
    assert x.grad.item() == pytest.approx(fd, rel=1e-8)


# maxpool / upsample -----------------------------------------------------------


def test_maxpool_block():
    x = tensor_new((1, 1, 2, 2), [1, 2, 3, 4], requires_grad=True)
    out = maxpool2d(x)
    assert out.shape == (1, 1, 1, 1) and out.item() == 4
    backward((out * 5.0).sum())
    assert np.array_equal(x.grad.reshape(-1), [0, 0, 0, 5])


def test_maxpool_constant_image():
    out = maxpool2d(tensor_new((1, 2, 4, 6), 1.5))
    assert out.shape == (1, 2, 2, 3) and np.all(out.data == 1.5)


def test_maxpool_tie_goes_to_first():
    x = tensor_new((1, 1, 2, 2), 1.0, requires_grad=True)
    backward(maxpool2d(x).sum())
    assert np.array_equal(x.grad.reshape(-1), [1, 0, 0, 0])


def test_maxpool_odd_size():
    with pytest.raises(DimensionError):
        maxpool2d(tensor_new((1, 1, 3, 4), 0.0))


def test_upsample_single_value():
    x = tensor_new((1, 1, 1, 1), 3.0, requires_grad=True)
    out = upsample(x)
    assert np.array_equal(out.data, np.full((1, 1, 2, 2), 3.0))
    backward(out.sum())
    assert x.grad.item() == 4.0


def test_upsample_then_average_pool_is_identity(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 5)).astype(np.float32))
    up = upsample(x).data
    avg = up.reshape(2, 3, 4, 2, 5, 2).mean(axis=(3, 5))
    assert np.allclose(avg, x.data)


def test_upsample_factor_equals_repeated_doubling(rng):
    x = Tensor(rng.standard_normal((1, 2, 3, 3)).astype(np.float32))
    assert np.array_equal(upsample(x, 8).data, upsample(upsample(upsample(x))).data)


# deconv ---------------------------------------------------------------------


def test_deconv_identity():
    layer = Deconv2d(1, 1, kernel_size=1)
    layer.weight.data[:] = 1.0
    x = tensor_new((1, 1, 3, 3), np.arange(9.0))
    assert np.array_equal(layer(x).data, x.data)


@pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (1, 1, 3), (2, 0, 2), (2, 1, 4)])
def test_deconv_is_adjoint_of_conv(rng, stride, padding, k):
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((5, 3, k, k))
    y_shape = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), None, stride, padding).shape
    y = rng.standard_normal(y_shape)
    conv_x = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), None, stride, padding).data
    deconv_y = conv_transpose2d(Tensor(y, dtype=np.float64), Tensor(w, dtype=np.float64), None,
                                stride, padding).data
    assert deconv_y.shape == x.shape
    assert np.sum(conv_x * y) == pytest.approx(np.sum(x * deconv_y), abs=1e-4)


def test_deconv_adjoint_float32_layers(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
    conv = Conv2d(2, 3, 3, rng)
    y = Tensor(rng.standard_normal((1, 3, 4, 4)).astype(np.float32))
    dec = Deconv2d(3, 2, 3, stride=1, padding=1)
    dec.weight.data = conv.weight.data.copy()
    lhs = np.sum(conv2d(x, conv.weight, None, 1, 1).data.astype(np.float64) * y.data)
    rhs = np.sum(x.data.astype(np.float64) * dec(y).data)
    assert lhs == pytest.approx(rhs, abs=1e-4)


def test_deconv_output_shape_formula():
    layer = Deconv2d(1, 1, kernel_size=2, stride=2)
    assert layer(tensor_new((1, 1, 2, 2), 1.0)).shape == (1, 1, 4, 4)
    layer = Deconv2d(2, 3, kernel_size=3, stride=1)
    assert layer(tensor_new((1, 2, 5, 5), 1.0)).shape == (1, 3, 7, 7)


def test_deconv_channel_mismatch():
    with pytest.raises(DimensionError):
        Deconv2d(2, 1)(tensor_new((1, 3, 4, 4), 0.0))


# concat ---------------------------------------------------------------------


def test_concat_shapes_and_split(rng):
    a = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
    out = concat(a, b)
    assert out.shape == (1, 5, 4, 4)
    up = rng.standard_normal((1, 5, 4, 4))
    backward(tensor_sum(out * Tensor(up)))
    assert np.allclose(np.concatenate([a.grad, b.grad], axis=1), up.astype(np.float32))


def test_concat_spatial_mismatch():
    with pytest.raises(DimensionError):
        concat(tensor_new((1, 1, 4, 4), 0.0), tensor_new((1, 1, 4, 2), 0.0))


def test_concat_empty_forbidden():
    with pytest.raises(DimensionError):
        concat(tensor_new((1, 1, 4, 4), 0.0), tensor_new((1, 0, 4, 4), 0.0))


# gradient checks, each layer in isolation ------------------------------------------


def _layer_cases(rng):
    x = f64(rng, 2, 3, 4, 4)
    y = f64(rng, 2, 2, 4, 4)
    w3, w1, b = f64(rng, 4, 3, 3, 3), f64(rng, 4, 3, 1, 1), f64(rng, 1, 4, 1, 1)
    wd, bd = f64(rng, 3, 2, 3, 3), f64(rng, 1, 2, 1, 1)
    wd2 = f64(rng, 3, 2, 2, 2)
    return {
        "conv3x3": (lambda: weighted_sum(conv2d(x, w3, b, 1, 1)), {"x": x, "w": w3, "b": b}),
        "conv1x1": (lambda: weighted_sum(conv2d(x, w1, b)), {"x": x, "w": w1, "b": b}),
        "deconv3x3": (lambda: weighted_sum(conv_transpose2d(x, wd, bd, 1, 1)), {"x": x, "w": wd, "b": bd}),
        "deconv_s2": (lambda: weighted_sum(conv_transpose2d(x, wd2, None, 2, 0)), {"x": x, "w": wd2}),
        "relu": (lambda: weighted_sum(relu(x)), {"x": x}),
        "sigmoid": (lambda: weighted_sum(sigmoid(x)), {"x": x}),
        "maxpool": (lambda: weighted_sum(maxpool2d(x)), {"x": x}),
        "upsample": (lambda: weighted_sum(upsample(x)), {"x": x}),
        "concat": (lambda: weighted_sum(concat(x, y)), {"x": x, "y": y}),
    }


@pytest.mark.parametrize("name", list(_layer_cases(np.random.default_rng(0))))
def test_layer_gradients(name):
    loss, params = _layer_cases(np.random.default_rng(7))[name]
    report = check_gradients(loss, params, h=1e-5, tol=1e-3)
    assert report.passed, report.format()


# shape properties ---------------------------------------------------------------

dims = st.sampled_from([2, 4, 8, 16])


@settings(max_examples=30, deadline=None)
@given(n=st.sampled_from([1, 2]), c=st.integers(1, 8), o=st.integers(1, 8), h=dims, w=dims,
       k=st.sampled_from([1, 3]))
def test_shape_contracts(n, c, o, h, w, k):
    x = tensor_new((n, c, h, w), 0.5)
    assert Conv2d(c, o, k)(x).shape == (n, o, h, w)
    assert relu(x).shape == x.shape and sigmoid(x).shape == x.shape
    assert maxpool2d(x).shape == (n, c, h // 2, w // 2)
    assert upsample(x).shape == (n, c, 2 * h, 2 * w)
    assert concat(x, tensor_new((n, o, h, w), 0.0)).shape == (n, c + o, h, w)
    assert Deconv2d(c, o, 3, stride=1, padding=1)(x).shape == (n, o, h, w)
    assert Deconv2d(c, o, 2, stride=2)(x).shape == (n, o, 2 * h, 2 * w)
