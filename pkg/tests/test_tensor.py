import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horncore import tensor as T
from horncore.tensor import Parameter, ParameterStore, Tensor

from conftest import central_diff


def _check_grad(build, arrays, tol=1e-6):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = T.grad(build(*tensors), tensors)
    for t, a, g in zip(tensors, arrays, analytic):
        num = central_diff(lambda: float(build(*[Tensor(x) for x in arrays]).data), a,
                           indices=range(min(a.size, 20)))
        for i, v in num.items():
            assert abs(g.reshape(-1)[i] - v) <= tol * max(1.0, abs(v))


def test_rejects_zero_extent():
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 0)))


def test_integer_data_becomes_float():
    assert Tensor([1, 2, 3]).dtype == np.float64


def test_add_broadcast_gradient(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal(4)
    _check_grad(lambda x, y: T.reduce_sum(T.mul(T.add(x, y), T.add(x, y))), [a, b])


def test_linear_gradient_axis1(rng):
    x, w, b = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((3, 5)), rng.standard_normal(5)
    r = rng.standard_normal((2, 5, 4, 4))
    _check_grad(lambda x, w, b: T.reduce_sum(T.mul(T.linear(x, w, b, axis=1), Tensor(r))), [x, w, b])


def test_linear_matches_einsum(rng):
    x, w = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((3, 5))
    out = T.linear(Tensor(x), Tensor(w), axis=1).data
    np.testing.assert_allclose(out, np.einsum("bchw,cd->bdhw", x, w), atol=1e-12)


def test_layer_norm_gradient(rng):
    x = rng.standard_normal((2, 6, 3, 3))
    g, b = rng.standard_normal(6), rng.standard_normal(6)
    r = rng.standard_normal(x.shape)
    _check_grad(lambda x, g, b: T.reduce_sum(T.mul(T.layer_norm(x, g, b), Tensor(r))), [x, g, b])


def test_layer_norm_statistics(rng):
    y = T.layer_norm(Tensor(rng.standard_normal((4, 8, 2, 2)) * 5 + 3), eps=0.0).data
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1, atol=1e-10)


@pytest.mark.parametrize("fn", [T.gelu, T.sigmoid, T.tanh])
def test_activation_gradients(fn, rng):
    x = rng.standard_normal((3, 5))
    _check_grad(lambda x: T.reduce_sum(T.mul(fn(x), fn(x))), [x])


def test_gelu_reference_values():
    x = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, [-0.15865525393145707, 0.0, 0.8413447460685429],
                               rtol=1e-12)


def test_cross_entropy_matches_manual(rng):
    z = rng.standard_normal((5, 4))
    y = np.array([0, 3, 1, 1, 2])
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    expected = -np.log(p[np.arange(5), y]).mean()
    assert float(T.softmax_cross_entropy(Tensor(z), y).data) == pytest.approx(expected, rel=1e-12)
    _check_grad(lambda z: T.softmax_cross_entropy(z, y), [z])


def test_split_concat_roundtrip_and_gradient(rng):
    x = rng.standard_normal((2, 7, 3, 3))
    parts = T.channel_split(Tensor(x), [1, 2, 4])
    assert [p.shape[1] for p in parts] == [1, 2, 4]
    np.testing.assert_array_equal(T.concat(parts).data, x)
    r = rng.standard_normal((2, 4, 3, 3))
    _check_grad(lambda x: T.reduce_sum(T.mul(T.channel_split(x, [3, 4])[1], Tensor(r))), [x])


def test_split_width_mismatch():
    with pytest.raises(ValueError):
        T.channel_split(Tensor(np.zeros((1, 4, 2, 2))), [1, 2])


def test_elementwise_mul_requires_equal_shapes():
    with pytest.raises(ValueError):
        T.elementwise_mul(Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones((1, 1, 2, 2))))


def test_upsample_gradient(rng):
    x = rng.standard_normal((1, 2, 2, 3))
    r = rng.standard_normal((1, 2, 4, 6))
    _check_grad(lambda x: T.reduce_sum(T.mul(T.upsample_nearest(x, 2), Tensor(r))), [x])


def test_shared_subexpression_accumulates(rng):
    x = rng.standard_normal(4)
    t = Tensor(x, requires_grad=True)
    y = T.mul(t, t)
    (g,) = T.grad(T.reduce_sum(T.add(y, y)), [t])
    np.testing.assert_allclose(g, 4 * x)


def test_grad_requires_scalar():
    with pytest.raises(ValueError):
        T.grad(Tensor(np.ones(3), requires_grad=True), [])


def test_backward_accumulates_into_parameter_grad(rng):
    p = Parameter("w", rng.standard_normal(3))
    T.backward(T.reduce_sum(T.mul(p, p)))
    T.backward(T.reduce_sum(p))
    np.testing.assert_allclose(p.grad, 2 * p.data + 1)


def test_no_grad_builds_no_graph():
    p = Parameter("w", np.ones(2))
    with T.no_grad():
        y = T.mul(p, p)
    assert not y.requires_grad


def test_deep_chain_does_not_recurse(rng):
    t = Tensor(np.ones(2), requires_grad=True)
    y = t
    for _ in range(5000):
        y = T.scale(y, 1.0)
    (g,) = T.grad(T.reduce_sum(y), [t])
    np.testing.assert_array_equal(g, 1.0)


def test_parameter_store_rules(rng):
    s = ParameterStore()
    s.add("a", np.zeros((2, 3)))
    s.add("b", np.zeros(4))
    assert s.names() == ["a", "b"] and s.num_elements() == 10
    with pytest.raises(KeyError):
        s.add("a", np.zeros(1))
    state = s.state_dict()
    state["a"] = rng.standard_normal((2, 3))
    s.load_state_dict(state)
    np.testing.assert_array_equal(s["a"].data, state["a"])
    with pytest.raises(ValueError):
        s.load_state_dict({"a": np.zeros((2, 3))})
    with pytest.raises(ValueError):
        s.load_state_dict({"a": np.zeros((3, 2)), "b": np.zeros(4)})


def test_divided_difference_of_cubic():
    f = lambda t: 2 * t**3 - t + 5
    assert T.divided_difference(f, 0.3, 3, 0.5) == pytest.approx(12.0, rel=1e-12)
    assert abs(T.divided_difference(f, 0.3, 4, 0.5)) < 1e-9


def test_library_gradcheck_detects_wrong_backward(rng):
    def bad(x):
        return Tensor.from_op(x.data * 2.0, (x,), lambda g: (g * 3.0,))
    x = Tensor(rng.standard_normal(4))
    assert T.gradcheck(lambda: T.reduce_sum(bad(x)), [x]) > 0.1
    assert T.gradcheck(lambda: T.reduce_sum(T.mul(x, x)), [x]) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 2**31 - 1))
def test_sum_mean_gradient_property(shape, seed):
    x = np.random.default_rng(seed).standard_normal(shape)
    t = Tensor(x, requires_grad=True)
    (g,) = T.grad(T.reduce_mean(t), [t])
    np.testing.assert_allclose(g, np.full(shape, 1.0 / x.size))
