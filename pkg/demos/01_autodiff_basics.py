"""Reverse-mode autodiff on rank-4 tensors, checked against finite differences.

Run: python3 demos/01_autodiff_basics.py
"""

import numpy as np

from dscnn import Tensor, backward
from dscnn.gradcheck import check_gradients
from dscnn.layers import conv2d, relu, sigmoid
from dscnn.tensor import tensor_sum

rng = np.random.default_rng(0)

# a tiny graph: sum(sigmoid(relu(conv(x, w) + b)))
x = Tensor(rng.standard_normal((1, 2, 6, 6)), dtype=np.float64)
w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True, dtype=np.float64)
b = Tensor(rng.standard_normal((1, 3, 1, 1)) * 0.1, requires_grad=True, dtype=np.float64)


def loss():
    return tensor_sum(sigmoid(relu(conv2d(x, w, b, stride=1, padding=1))))


backward(loss())
print("loss", loss().item())
print("dL/db", b.grad.reshape(-1))

# the same gradients, probed numerically
report = check_gradients(loss, {"w": w, "b": b}, h=1e-5, tol=1e-3)
print(report.format())
