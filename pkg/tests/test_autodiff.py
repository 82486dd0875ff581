"""Numerics core: primitive op contracts, backward, and determinism."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conflab.autodiff import (
    Graph,
    LOG_FLOOR,
    cross_entropy,
    sigmoid_values,
    softmax_values,
)
from conflab.errors import ConfigError, NumericError, StateError
from conflab.rng import RngState


def test_softmax_symmetry():
    assert np.allclose(softmax_values(np.array([0.0, 0.0])), [0.5, 0.5])


def test_softmax_analytic():
    out = softmax_values(np.array([0.0, np.log(3.0)]))
    assert np.allclose(out, [0.25, 0.75], atol=1e-12)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.floats(-20, 20))
@settings(max_examples=50, deadline=None)
def test_softmax_shift_invariance(xs, k):
    x = np.array(xs)
    assert np.allclose(softmax_values(x + k), softmax_values(x), atol=1e-9)


def test_softmax_sums_to_one():
    gen = RngState(0).generator()
    x = gen.normal(0, 5, size=(4, 7))
    p = softmax_values(x, axis=-1)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericError):
        softmax_values(np.array([0.0, np.nan]))


def test_sigmoid_symmetry_point():
    assert sigmoid_values(np.array(0.0)) == 0.5


def test_sigmoid_analytic():
    assert np.isclose(sigmoid_values(np.array(np.log(3.0))), 0.75, atol=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_sigmoid_complement_identity(xs):
    x = np.array(xs)
    assert np.allclose(sigmoid_values(x) + sigmoid_values(-x), 1.0, atol=1e-12)


def test_sigmoid_open_interval():
    x = RngState(1).generator().normal(0, 3, size=100)
    s = sigmoid_values(x)
    assert np.all(s > 0) and np.all(s < 1)


def test_cross_entropy_one_hot_is_zero():
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0


def test_cross_entropy_uniform():
    assert np.isclose(cross_entropy(np.full(4, 0.25), 2), np.log(4.0), atol=1e-9)
    assert np.isclose(cross_entropy(np.array([0.25, 0.5, 0.25]), 0), 1.3862943611, atol=1e-6)


def test_cross_entropy_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(np.array([0.5, 0.5]), 2)


def test_cross_entropy_log_floor():
    val = cross_entropy(np.array([1.0, 0.0]), 1)
    assert np.isclose(val, -np.log(LOG_FLOOR))


# -- dropout ----------------------------------------------------------------


def test_dropout_rate_zero_identity():
    g = Graph()
    x = g.const(np.arange(12.0).reshape(3, 4))
    out = g.dropout(x, 0.0, RngState(0), enabled=True)
    assert np.array_equal(out.value, x.value)


def test_dropout_disabled_identity():
    g = Graph()
    x = g.const(np.arange(12.0).reshape(3, 4))
    out = g.dropout(x, 0.9, RngState(0), enabled=False)
    assert np.array_equal(out.value, x.value)


def test_dropout_law_of_large_numbers():
    g = Graph()
    x = g.const(np.ones(100_000))
    out = g.dropout(x, 0.5, RngState(42).stream("dropout"), enabled=True)
    assert abs(out.value.mean() - 1.0) < 0.03
    zero_frac = float((out.value == 0).mean())
    assert abs(zero_frac - 0.5) < 0.01


def test_dropout_rejects_rate_one():
    g = Graph()
    x = g.const(np.ones(3))
    with pytest.raises(ConfigError):
        g.dropout(x, 1.0, RngState(0))


# -- backward ----------------------------------------------------------------


def test_backward_square():
    g = Graph(dtype=np.float64)
    x = g.param("x", np.array([3.0]))
    loss = g.sum(g.mul(x, x))
    grads = g.backward(loss)
    assert np.allclose(grads["x"], [6.0])


def test_backward_unused_param_gets_zero():
    g = Graph(dtype=np.float64)
    x = g.param("x", np.array([3.0]))
    unused = g.param("w", np.array([2.0, 2.0]))
    loss = g.sum(g.mul(x, x))
    grads = g.backward(loss)
    assert np.array_equal(grads["w"], np.zeros(2))


def test_backward_before_forward_raises():
    g = Graph()
    with pytest.raises(StateError):
        g.backward(Graph().const(np.array(1.0)))


def test_backward_requires_scalar_loss():
    g = Graph()
    x = g.param("x", np.ones(3))
    y = g.mul(x, x)
    with pytest.raises(StateError):
        g.backward(y)


def test_backward_foreign_node_rejected():
    g1 = Graph()
    x1 = g1.param("x", np.ones(1))
    loss1 = g1.sum(x1)
    g2 = Graph()
    x2 = g2.param("x", np.ones(1))
    g2.sum(x2)
    with pytest.raises(StateError):
        g2.backward(loss1)


def test_backward_deterministic_bitwise():
    def run():
        g = Graph()
        gen = RngState(9).stream("d").generator()
        x = g.param("x", np.linspace(-1, 1, 24).reshape(4, 6).astype(np.float32))
        h = g.dropout(g.softmax(x, axis=-1), 0.3, gen, enabled=True)
        loss = g.sum(g.mul(h, h))
        return loss.value.copy(), g.backward(loss)["x"].copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1.tobytes() == l2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_mean_stack_requires_matching_shapes():
    g = Graph()
    a = g.const(np.ones((2, 3)))
    b = g.const(np.ones((3, 2)))
    with pytest.raises(ConfigError):
        g.mean_stack([a, b])
    with pytest.raises(ConfigError):
        g.mean_stack([])


def test_mean_stack_identity_on_identical_inputs():
    g = Graph(dtype=np.float64)
    h = g.const(np.arange(6.0).reshape(2, 3))
    out = g.mean_stack([h, h, h])
    assert np.allclose(out.value, h.value)


def test_attention_masked_key_gets_zero_weight():
    # output must not change when masked key-values change
    gen = RngState(5).generator()
    q = gen.normal(size=(1, 3, 4))
    k = gen.normal(size=(1, 3, 4))
    v = gen.normal(size=(1, 3, 4))
    mask = np.zeros((1, 1, 3, 3))
    mask[..., 2] = -1e9
    g = Graph(dtype=np.float64)
    out1 = g.attention(g.const(q), g.const(k), g.const(v), heads=2, mask=mask).value
    k2, v2 = k.copy(), v.copy()
    k2[:, 2], v2[:, 2] = 99.0, -99.0
    g = Graph(dtype=np.float64)
    out2 = g.attention(g.const(k2 * 0 + q), g.const(k2), g.const(v2), heads=2, mask=mask).value
    assert np.allclose(out1, out2, atol=1e-12)


def test_log_floor():
    g = Graph(dtype=np.float64)
    x = g.const(np.array([0.0, 1e-20, 1.0]))
    out = g.log(x)
    assert np.allclose(out.value[:2], np.log(LOG_FLOOR))
    assert out.value[2] == 0.0
