"""Tests del motor de redes: conteo de parámetros, forward, backward por diferencias finitas."""

import numpy as np
import pytest

from d4am.errors import ConfigError, ShapeError
from d4am.netcore import (
    NetworkSpec,
    axpy,
    backward,
    dot,
    forward,
    init_params,
    norm_sq,
    softmax,
    unpack,
)


def _straight_line_forward(spec, params, x):
    """Independent evaluator: explicit loops over units, no matrix products."""
    a = list(x)
    offset = 0
    n_layers = len(spec.layer_dims) - 1
    for l in range(n_layers):
        fan_in, fan_out = spec.layer_dims[l], spec.layer_dims[l + 1]
        w = params[offset : offset + fan_in * fan_out]
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        z = [sum(a[i] * w[i * fan_out + j] for i in range(fan_in)) + b[j] for j in range(fan_out)]
        act = spec.activations[l] if l < n_layers - 1 else spec.output_activation
        if act == "tanh":
            a = [np.tanh(v) for v in z]
        elif act == "relu":
            a = [max(v, 0.0) for v in z]
        elif act == "softmax":
            m = max(z)
            e = [np.exp(v - m) for v in z]
            a = [v / sum(e) for v in e]
        else:
            a = z
    return np.array(a)


def _random_spec(rng):
    depth = int(rng.integers(1, 4))
    dims = [int(d) for d in rng.integers(1, 6, size=depth + 1)]
    acts = tuple(rng.choice(["tanh", "identity"]) for _ in range(depth - 1))
    out = str(rng.choice(["identity", "softmax"]))
    return NetworkSpec(tuple(dims), acts, out)


def test_num_params_counts_weights_and_biases():
    """[4, 8, 4] → 4·8+8 + 8·4+4 = 76."""
    assert NetworkSpec.build([4, 8, 4]).num_params == 76
    assert init_params(NetworkSpec.build([4, 8, 4]), seed=3).shape == (76,)


def test_init_params_is_deterministic():
    spec = NetworkSpec.build([2, 2])
    np.testing.assert_array_equal(init_params(spec, 7), init_params(spec, 7))
    assert not np.array_equal(init_params(spec, 7), init_params(spec, 8))


def test_init_params_biases_zero():
    spec = NetworkSpec.build([3, 5, 2])
    for _w, b in unpack(spec, init_params(spec, 0)):
        assert np.all(b == 0.0)


def test_spec_validation():
    with pytest.raises(ConfigError):
        NetworkSpec((3,))
    with pytest.raises(ConfigError):
        NetworkSpec((3, 0, 2), ("tanh",))
    with pytest.raises(ConfigError):
        NetworkSpec((3, 4, 2), ())
    with pytest.raises(ConfigError):
        NetworkSpec((3, 4, 2), ("sigmoid",))
    with pytest.raises(ConfigError):
        NetworkSpec((3, 2), (), "relu")


def test_affine_map_hand_computed():
    """dims [1,1], identity: y = w·x + b."""
    spec = NetworkSpec.build([1, 1])
    params = np.array([2.5, -1.0])
    assert forward(spec, params, np.array([4.0]))[0] == pytest.approx(9.0)


def test_identity_network_returns_input():
    spec = NetworkSpec.build([3, 3])
    params = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    x = np.array([0.3, -1.2, 5.0])
    np.testing.assert_array_equal(forward(spec, params, x), x)


def test_softmax_equal_logits():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])


def test_softmax_head_sums_to_one(rng):
    spec = NetworkSpec.build([4, 6, 5], "tanh", "softmax")
    out = forward(spec, init_params(spec, 1), rng.standard_normal((10, 4)))
    np.testing.assert_allclose(out.sum(axis=1), np.ones(10), atol=1e-12)


def test_forward_matches_straight_line_evaluator():
    rng = np.random.default_rng(11)
    for _ in range(30):
        spec = _random_spec(rng)
        params = rng.standard_normal(spec.num_params)
        x = rng.standard_normal(spec.input_dim)
        np.testing.assert_allclose(forward(spec, params, x), _straight_line_forward(spec, params, x), atol=1e-12)


def test_forward_shape_mismatch():
    spec = NetworkSpec.build([3, 2])
    with pytest.raises(ShapeError):
        forward(spec, init_params(spec, 0), np.zeros(4))
    with pytest.raises(ShapeError):
        forward(spec, np.zeros(spec.num_params + 1), np.zeros(3))


def _rel_close(a, b, tol):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3)
    return np.all(np.abs(a - b) / scale <= tol)


def test_backward_matches_finite_differences():
    """Central differences with h=1e-5, relative error 1e-4, on 100 random nets."""
    rng = np.random.default_rng(2024)
    h = 1e-5
    for _ in range(100):
        spec = _random_spec(rng)
        params = rng.standard_normal(spec.num_params)
        x = rng.standard_normal(spec.input_dim)
        u = rng.standard_normal(spec.output_dim)
        g_params, g_input = backward(spec, params, x, u)

        def f(p, inp):
            return float(np.dot(u, forward(spec, p, inp)))

        fd_params = np.empty_like(params)
        for i in range(params.size):
            e = np.zeros_like(params)
            e[i] = h
            fd_params[i] = (f(params + e, x) - f(params - e, x)) / (2 * h)
        fd_input = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            fd_input[i] = (f(params, x + e) - f(params, x - e)) / (2 * h)
        assert _rel_close(g_params, fd_params, 1e-4), spec
        assert _rel_close(g_input, fd_input, 1e-4), spec


def test_backward_batch_sums_per_sample_gradients(rng):
    spec = NetworkSpec.build([3, 4, 2], "tanh")
    params = rng.standard_normal(spec.num_params)
    x = rng.standard_normal((5, 3))
    u = rng.standard_normal((5, 2))
    batch_grad, batch_input = backward(spec, params, x, u)
    single = [backward(spec, params, x[i], u[i]) for i in range(5)]
    np.testing.assert_allclose(batch_grad, sum(g for g, _ in single), atol=1e-12)
    np.testing.assert_allclose(batch_input, np.stack([gi for _, gi in single]), atol=1e-12)


def test_backward_zero_upstream(rng):
    spec = NetworkSpec.build([3, 4, 2], "tanh", "softmax")
    params = rng.standard_normal(spec.num_params)
    g, gi = backward(spec, params, rng.standard_normal(3), np.zeros(2))
    assert not g.any() and not gi.any()


def test_backward_linear_is_outer_product():
    spec = NetworkSpec.build([2, 3])
    params = init_params(spec, 0)
    x = np.array([1.5, -2.0])
    u = np.array([0.5, 1.0, -1.0])
    g, _ = backward(spec, params, x, u)
    (gw, gb), = unpack(spec, g)
    np.testing.assert_allclose(gw, np.outer(x, u))
    np.testing.assert_allclose(gb, u)


def test_backward_upstream_shape_error():
    spec = NetworkSpec.build([2, 3])
    with pytest.raises(ShapeError):
        backward(spec, init_params(spec, 0), np.zeros(2), np.zeros(4))


def test_vector_algebra():
    assert dot(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0
    assert norm_sq(np.array([3.0, 4.0])) == 25.0
    np.testing.assert_array_equal(axpy(2.0, np.array([1.0, 0.0]), np.array([0.0, 1.0])), [2.0, 1.0])
    with pytest.raises(ShapeError):
        dot(np.zeros(2), np.zeros(3))
    with pytest.raises(ShapeError):
        axpy(1.0, np.zeros(2), np.zeros(3))
