"""Tests de L_reg y L_cls a través del proxy congelado."""

import numpy as np
import pytest

from d4am.errors import DataError, ShapeError
from d4am.netcore import NetworkSpec, init_params
from d4am.objectives import (
    ClsBatch,
    ProxyModel,
    RegBatch,
    cls_loss_and_grad,
    reg_loss_and_grad,
    softmax_cross_entropy,
)


def _fd_grad(f, theta, h=1e-5):
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def _proxy(seed=5, d=3, k=4):
    spec = NetworkSpec.build([d, 6, k], "tanh", "softmax")
    return ProxyModel(spec, init_params(spec, seed), name="proxy", seed=seed)


def test_reg_single_sample_hand_derivative():
    """Linear 1-D enhancer y = w·x (b = 0): loss (w·x − c)², grad_w 2x(w·x − c)."""
    spec = NetworkSpec.build([1, 1])
    theta = np.array([0.7, 0.0])
    x, c = 2.0, 3.0
    loss, grad = reg_loss_and_grad(spec, theta, RegBatch(np.array([[x]]), np.array([[c]])))
    assert loss == pytest.approx((0.7 * x - c) ** 2)
    assert grad[0] == pytest.approx(2 * x * (0.7 * x - c))
    assert grad[1] == pytest.approx(2 * (0.7 * x - c))


def test_reg_grad_matches_finite_differences(rng):
    spec = NetworkSpec.build([3, 5, 3], "tanh")
    theta = rng.standard_normal(spec.num_params)
    batch = RegBatch(rng.standard_normal((7, 3)), rng.standard_normal((7, 3)))
    _loss, grad = reg_loss_and_grad(spec, theta, batch)
    fd = _fd_grad(lambda t: reg_loss_and_grad(spec, t, batch)[0], theta)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


def test_cls_grad_matches_finite_differences_through_proxy(rng):
    spec = NetworkSpec.build([3, 5, 3], "tanh")
    theta = rng.standard_normal(spec.num_params)
    proxy = _proxy()
    batch = ClsBatch(rng.standard_normal((6, 3)), rng.integers(0, 4, size=6))
    _loss, grad = cls_loss_and_grad(spec, theta, proxy, batch)
    fd = _fd_grad(lambda t: cls_loss_and_grad(spec, t, proxy, batch)[0], theta)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


def test_cls_does_not_touch_proxy(rng):
    spec = NetworkSpec.build([3, 3])
    proxy = _proxy()
    before = proxy.params.copy()
    cls_loss_and_grad(spec, init_params(spec, 0), proxy, ClsBatch(rng.standard_normal((4, 3)), np.array([0, 1, 2, 3])))
    np.testing.assert_array_equal(proxy.params, before)
    with pytest.raises(ValueError):
        proxy.params[0] = 1.0


def test_proxy_requires_softmax_head():
    spec = NetworkSpec.build([3, 4])
    with pytest.raises(DataError):
        ProxyModel(spec, init_params(spec, 0))


def test_cross_entropy_uniform_logits():
    loss, d = softmax_cross_entropy(np.zeros((5, 4)), np.array([0, 1, 2, 3, 0]))
    assert loss == pytest.approx(np.log(4))
    np.testing.assert_allclose(d.sum(axis=1), np.zeros(5), atol=1e-15)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(DataError):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_cls_batch_rejects_float_labels():
    with pytest.raises(DataError):
        ClsBatch(np.zeros((2, 3)), np.array([0.0, 1.0]))


def test_batch_shape_errors():
    with pytest.raises(ShapeError):
        RegBatch(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        ClsBatch(np.zeros((2, 3)), np.array([0, 1, 2]))
    with pytest.raises(ShapeError):
        reg_loss_and_grad(NetworkSpec.build([2, 2]), np.zeros(6), RegBatch(np.zeros((1, 3)), np.zeros((1, 3))))


def test_cls_dimension_mismatch_between_enhancer_and_proxy():
    spec = NetworkSpec.build([2, 2])
    with pytest.raises(ShapeError):
        cls_loss_and_grad(spec, init_params(spec, 0), _proxy(d=3), ClsBatch(np.zeros((1, 2)), np.array([0])))
