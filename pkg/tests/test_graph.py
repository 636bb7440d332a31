import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from catreparam.graph import DomainError, Graph, GraphError, NonFiniteGradient, ShapeError, sgd_momentum_step
from catreparam.oracle import finite_difference

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def grad_of(build, x):
    g = Graph()
    p = g.param(x, name="x")
    loss = build(g, p)
    return g.backward(loss)[p.id]


def value_of(build, x):
    g = Graph()
    return float(build(g, g.constant(x)).value)


def assert_fd(build, x, rtol=1e-6):
    fd = finite_difference(lambda t: value_of(build, t), x, h=1e-6)
    np.testing.assert_allclose(grad_of(build, x), fd, rtol=rtol, atol=1e-7)


UNARY = {
    "sigmoid": lambda g, p: g.sigmoid(p),
    "tanh": lambda g, p: g.tanh(p),
    "softplus": lambda g, p: g.softplus(p),
    "exp": lambda g, p: g.exp(p),
    "square": lambda g, p: g.square(p),
    "softmax": lambda g, p: g.softmax(p),
    "log_softmax": lambda g, p: g.log_softmax(p),
    "tempered_softmax": lambda g, p: g.tempered_softmax(p, 0.3),
    "log": lambda g, p: g.log(g.exp(p) + 0.5),
    "neg": lambda g, p: -p,
    "div": lambda g, p: p / (g.square(p) + 1.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name, rng):
    w = rng.normal(size=(3, 4))
    x = rng.normal(size=(3, 4))
    assert_fd(lambda g, p: (UNARY[name](g, p) * w).sum(), x)


def test_log_sum_exp_and_reductions(rng):
    x = rng.normal(size=(2, 5))
    assert_fd(lambda g, p: g.log_sum_exp(p, axis=1).sum(), x)
    assert_fd(lambda g, p: (p.mean(axis=0) * np.arange(5)).sum(), x)
    assert_fd(lambda g, p: g.log_sum_exp(p.reshape(10), axis=0), x)


def test_matmul_concat_slice(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))

    def build(g, p):
        c = g.constant(b)
        h = g.concat([p @ c, p[:, :2]], axis=1)
        return g.square(h).sum()

    assert_fd(build, a)


def test_broadcast_gradients_sum_over_expanded_axes(rng):
    bias = rng.normal(size=4)
    x = rng.normal(size=(5, 4))
    g = Graph()
    b = g.param(bias)
    loss = (g.constant(x) + b).sum()
    np.testing.assert_allclose(g.backward(loss)[b.id], np.full(4, 5.0))


def test_clip_and_relu_gradients_are_masked():
    g = Graph()
    p = g.param(np.array([-1.0, 0.5, 2.0]))
    loss = (g.clip(p, 0.0, 1.0) + g.relu(p)).sum()
    np.testing.assert_array_equal(g.backward(loss)[p.id], [0.0, 2.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), st.floats(0.2, 5.0))
def test_tempered_softmax_gradient_property(x, tau):
    w = np.array([[1.0, -2.0, 0.5], [0.3, 0.1, -1.0]])
    assert_fd(lambda g, p: (g.tempered_softmax(p, tau) * w).sum(), x, rtol=1e-5)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4,), elements=finite))
def test_softmax_rows_sum_to_one(x):
    g = Graph()
    np.testing.assert_allclose(g.softmax(g.constant(x)).value.sum(), 1.0, rtol=1e-12)


def test_straight_through_forward_is_hard_backward_is_soft(rng):
    g = Graph()
    p = g.param(rng.normal(size=3))
    soft = g.softmax(p)
    hard = g.argmax_one_hot(soft)
    z = g.straight_through(hard, soft)
    np.testing.assert_array_equal(z.value, hard.value)
    w = np.array([1.0, 2.0, 3.0])
    grad = g.backward((z * w).sum())[p.id]
    s = soft.value
    np.testing.assert_allclose(grad, s * (w - s @ w))


def test_stop_gradient_and_argmax_block_the_sweep():
    g = Graph()
    p = g.param(np.array([0.1, 0.9]))
    loss = (g.stop_gradient(p) * p).sum() + g.argmax_one_hot(p).sum()
    np.testing.assert_allclose(g.backward(loss)[p.id], [0.1, 0.9])


def test_non_reparameterized_sample_blocks_gradient():
    g = Graph()
    p = g.param(np.array([0.2, 0.3]))
    z = g.stochastic(p * 2.0, "point", reparameterized=False)
    loss = z.sum() + p.sum()
    np.testing.assert_array_equal(g.backward(loss)[p.id], [1.0, 1.0])


def test_argmax_ties_go_to_lowest_index():
    g = Graph()
    assert g.argmax_one_hot(g.constant([1.0, 3.0, 3.0])).value.tolist() == [0.0, 1.0, 0.0]


def test_backward_twice_fails_loudly():
    g = Graph()
    p = g.param(np.ones(2))
    loss = p.sum()
    g.backward(loss)
    with pytest.raises(GraphError):
        g.backward(loss)
    with pytest.raises(GraphError):
        g.exp(p)


def test_non_scalar_loss_and_foreign_nodes_rejected():
    g, h = Graph(), Graph()
    p = g.param(np.ones(2))
    with pytest.raises(GraphError):
        g.backward(p)
    with pytest.raises(GraphError):
        h.exp(p)


def test_domain_errors():
    g = Graph()
    with pytest.raises(DomainError):
        g.log(g.constant([0.0, 1.0]))
    with pytest.raises(DomainError):
        g.constant([1.0]) / g.constant([0.0])


def test_matmul_shape_mismatch():
    g = Graph()
    with pytest.raises((ShapeError, ValueError)):
        g.constant(np.ones((2, 3))) @ g.constant(np.ones((2, 3)))


def test_param_values_are_copied():
    value = np.zeros(3)
    g = Graph()
    p = g.param(value)
    value[0] = 1.0
    assert p.value[0] == 0.0


def test_momentum_step_is_classical_and_pure():
    params = {"w": np.array([1.0, 2.0])}
    grads = {"w": np.array([0.5, -1.0])}
    p1, v1 = sgd_momentum_step(params, grads, 0.1, {})
    np.testing.assert_allclose(p1["w"], [0.95, 2.1])
    p2, v2 = sgd_momentum_step(p1, grads, 0.1, v1, momentum=0.9)
    np.testing.assert_allclose(v2["w"], [0.95, -1.9])
    np.testing.assert_allclose(p2["w"], p1["w"] - 0.1 * v2["w"])
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])


def test_momentum_step_rejects_non_finite_before_mutating():
    params = {"a": np.ones(2), "b": np.ones(2)}
    grads = {"a": np.ones(2), "b": np.array([np.nan, 0.0])}
    with pytest.raises(NonFiniteGradient):
        sgd_momentum_step(params, grads, 0.1, {})
    np.testing.assert_array_equal(params["a"], np.ones(2))
