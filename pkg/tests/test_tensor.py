import numpy as np
import pytest

from dscnn.errors import ContractError, DimensionError, NumericError
from dscnn.gradcheck import check_gradients, finite_diff_check, relative_error
from dscnn.layers import Conv2d
from dscnn.objectives import soft_dice_loss
from dscnn.tensor import Tensor, backward, no_grad, tensor_new, tensor_sum


def test_tensor_new_fill_zero():
    t = tensor_new((1, 1, 2, 2), 0)
    assert t.shape == (1, 1, 2, 2)
    assert np.array_equal(t.data, np.zeros((1, 1, 2, 2)))
    assert t.grad is None
    assert t.dtype == np.float32


def test_tensor_new_values_round_trip():
    vals = np.arange(18, dtype=np.float32)
    t = tensor_new((1, 2, 3, 3), vals)
    assert np.array_equal(t.data.reshape(-1), vals)
    assert t.data[0, 1, 0, 0] == 9


@pytest.mark.parametrize("shape,fill", [((1, 1, 2, 2), [1, 2, 3]), ((1, 1, 0, 2), 0.0), ((1, 2, 2), 0.0)])
def test_tensor_new_rejects_bad_shapes(shape, fill):
    with pytest.raises(DimensionError):
        tensor_new(shape, fill)


def test_backward_of_sum_is_ones():
    w = tensor_new((1, 1, 2, 2), [1, 2, 3, 4], requires_grad=True)
    backward(w.sum())
    assert np.array_equal(w.grad, np.ones((1, 1, 2, 2)))


def test_backward_of_square():
    w = tensor_new((1, 1, 2, 2), [1, 2, 3, 4], requires_grad=True)
    backward((w * w).sum())
    assert np.array_equal(w.grad.reshape(-1), [2, 4, 6, 8])


def test_unreachable_leaf_gets_zero_grad():
    w = tensor_new((1, 1, 2, 2), [1, 2, 3, 4], requires_grad=True)
    v = tensor_new((1, 1, 2, 2), 1.0, requires_grad=True)
    backward(v.sum(), inputs=[w, v])
    assert np.array_equal(w.grad, np.zeros((1, 1, 2, 2)))


def test_backward_requires_scalar_loss():
    w = tensor_new((1, 1, 2, 2), 1.0, requires_grad=True)
    with pytest.raises(ContractError):
        backward(w * 2.0)


def test_backward_accumulates(rng):
    w = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
    loss = lambda: ((w * w) * 3.0 + w).sum()
    backward(loss())
    once = w.grad.copy()
    backward(loss())
    assert np.array_equal(w.grad, 2 * once)


def test_backward_is_linear(rng):
    w = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True, dtype=np.float64)
    l1 = lambda: (w * w).sum()
    l2 = lambda: (w * w * w).sum()
    backward(l1())
    g1, w.grad = w.grad, None
    backward(l2())
    g2, w.grad = w.grad, None
    backward(l1() * 2.5 + l2() * -0.7)
    assert np.allclose(w.grad, 2.5 * g1 - 0.7 * g2, atol=1e-6, rtol=0)


def test_shared_subexpression_visited_once(rng):
    w = Tensor(rng.standard_normal((1, 1, 2, 2)), requires_grad=True)
    y = w * w
    backward((y + y).sum())
    assert np.allclose(w.grad, 4 * w.data)


def test_no_grad_records_nothing():
    w = tensor_new((1, 1, 2, 2), 1.0, requires_grad=True)
    with no_grad():
        out = (w * w).sum()
    assert not out.requires_grad and out.is_leaf


def test_scalar_arithmetic():
    a = tensor_new((1, 1, 1, 2), [1.0, 2.0], requires_grad=True)
    out = (1.0 - a) * 3.0 + (-a) - 2.0
    assert np.allclose(out.data.reshape(-1), [-3.0, -7.0])
    backward(out.sum())
    assert np.allclose(a.grad, -4.0)


def test_mul_shape_mismatch():
    with pytest.raises(DimensionError):
        tensor_new((1, 1, 2, 2), 1.0) * tensor_new((1, 1, 2, 3), 1.0)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, 0.0) == pytest.approx(0.1)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


class _Wrap:
    def __init__(self, layer):
        self.layer = layer

    def parameters(self):
        return self.layer.parameters()

    def forward(self, image):
        from dscnn.layers import sigmoid
        return [sigmoid(self.layer(image))]


def _dice_loss(outputs, mask):
    return soft_dice_loss(outputs[0], mask)


def _sample(rng, size=4, channels=1):
    from dscnn.data import SamplePair
    img = Tensor(rng.random((1, channels, size, size)).astype(np.float32))
    mask = Tensor((rng.random((1, 1, size, size)) > 0.5).astype(np.float32))
    return SamplePair(img, mask, "s")


def test_finite_diff_check_1x1_conv_dice(rng):
    model = _Wrap(Conv2d(1, 1, 1, rng))
    report = finite_diff_check(model, _dice_loss, _sample(rng), h=1e-3, tol=1e-3)
    assert report.passed, report.format()
    assert report.max_error < 1e-3
    assert model.layer.weight.dtype == np.float32  # restored


def test_finite_diff_check_frozen_model_is_vacuous(rng):
    class Frozen:
        def parameters(self):
            return {}

        def forward(self, image):
            return [image]

    report = finite_diff_check(Frozen(), _dice_loss, _sample(rng))
    assert report.passed and report.errors == {}


def test_finite_diff_check_detects_corruption(rng):
    model = _Wrap(Conv2d(1, 1, 3, rng))

    def corrupt(name, grad):
        grad[0] += 1.0
        return grad

    report = finite_diff_check(model, _dice_loss, _sample(rng), grad_hook=corrupt, refine=3)
    assert not report.passed


def test_finite_diff_check_non_finite_loss_names_parameter():
    w = tensor_new((1, 1, 1, 1), 1.0, requires_grad=True, dtype=np.float64)

    def loss():
        if w.data[0, 0, 0, 0] != 1.0:
            return tensor_new((1, 1, 1, 1), np.nan, dtype=np.float64)
        return tensor_sum(w)

    with pytest.raises(NumericError, match="bad_param"):
        check_gradients(loss, {"bad_param": w})


def test_check_gradients_subsample_minimum(rng):
    w = Tensor(rng.standard_normal((1, 1, 20, 20)), requires_grad=True, dtype=np.float64)
    report = check_gradients(lambda: (w * w).sum(), {"w": w}, max_elements=100)
    assert report.checked["w"] == 100 and report.passed
