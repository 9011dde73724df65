"""Reverse-mode gradients against central finite differences (64-bit)."""

import numpy as np

from fusionnet import tensor as T
from fusionnet.gradcheck import check_gradient, numeric_gradient, relative_error, run_suite


def test_suite_all_ops_pass():
    for result in run_suite(trials=5, seed=3):
        assert result.passed, f"{result.op}: {result.worst_error:.3e} > {result.tolerance}"


def test_conv_weight_grad_through_mse():
    rng = np.random.default_rng(0)
    x = T.Tensor(rng.normal(0, 1, (1, 2, 5, 5)))
    w = T.Tensor(rng.normal(0, 0.5, (3, 2, 3, 3)), requires_grad=True)
    b = T.Tensor(np.zeros(3), requires_grad=True)
    y = T.Tensor(rng.normal(0, 1, (1, 3, 5, 5)))

    def build():
        return T.mse_loss(T.conv2d(x, w, b), y), [w, b]

    assert check_gradient(build) <= 1e-3


def test_batch_norm_input_gamma_beta():
    rng = np.random.default_rng(1)
    x = T.Tensor(rng.normal(0, 1, (2, 2, 3, 3)), requires_grad=True)
    gamma = T.Tensor(np.array([1.3, 0.7]), requires_grad=True)
    beta = T.Tensor(np.array([0.1, -0.2]), requires_grad=True)
    y = T.Tensor(rng.normal(0, 1, (2, 2, 3, 3)))

    def build():
        out = T.batch_norm(x, gamma, beta, np.zeros(2), np.ones(2), training=True)
        return T.mse_loss(out, y), [x, gamma, beta]

    assert check_gradient(build) <= 1e-3


def test_numeric_gradient_on_quadratic_is_exact():
    x = np.array([1.0, -2.0, 0.5])
    g = numeric_gradient(lambda: float((x**2).sum()), x)
    assert relative_error(2 * x, g) < 1e-9
