import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from predrisk import autodiff as ad
from predrisk.autodiff import Tensor, custom_op
from predrisk.errors import NotScalar, ShapeError
from predrisk.optim import grad_check

TOL = 1e-4


def leaf(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def away_from(rng, shape, points, gap=0.05):
    """Random values kept at least ``gap`` away from each kink in ``points``."""
    x = rng.uniform(-1, 1, size=shape)
    for p in points:
        near = np.abs(x - p) < gap
        x[near] = p + np.sign(x[near] - p + 1e-12) * gap * 2
    return Tensor(x, requires_grad=True)


def check(build, params, rng):
    w = rng.normal(size=build().shape)
    return grad_check(lambda: ad.sum_(build() * w), params)


def unary_cases():
    return {
        "tanh": (ad.tanh, {}),
        "sigmoid": (ad.sigmoid, {}),
        "exp": (ad.exp, {}),
        "log": (ad.log, {"lo": 0.2, "hi": 2.0}),
        "sqrt": (ad.sqrt, {"lo": 0.2, "hi": 2.0}),
        "neg": (ad.neg, {}),
    }


@pytest.mark.parametrize("name", sorted(unary_cases()))
def test_unary_gradients(name, rng):
    fn, kw = unary_cases()[name]
    x = leaf(rng, 3, 4, **kw)
    assert check(lambda: fn(x), [x], rng) < TOL


def test_leaky_relu_gradient(rng):
    x = away_from(rng, (5, 4), [0.0])
    assert check(lambda: ad.leaky_relu(x, 0.1), [x], rng) < TOL


def test_clip_gradient(rng):
    x = away_from(rng, (5, 4), [-0.5, 0.5])
    assert check(lambda: ad.clip(x, -0.5, 0.5), [x], rng) < TOL


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_gradients_with_broadcasting(op, rng):
    fn = getattr(ad, op)
    a = leaf(rng, 3, 4)
    b = leaf(rng, 4, lo=0.5, hi=1.5)
    c = leaf(rng, 3, 1, lo=0.5, hi=1.5)
    assert check(lambda: fn(fn(a, b), c), [a, b, c], rng) < TOL


@pytest.mark.parametrize("shapes", [((3, 4), (4, 5)), ((2, 3, 4), (4, 2)), ((4,), (4, 3)), ((3, 4), (4,))])
def test_matmul_gradient(shapes, rng):
    a, b = leaf(rng, *shapes[0]), leaf(rng, *shapes[1])
    assert check(lambda: a @ b, [a, b], rng) < TOL


@pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), ((0, 2), False)])
def test_reductions(axis, keepdims, rng):
    x = leaf(rng, 2, 3, 4)
    assert check(lambda: ad.sum_(x, axis, keepdims), [x], rng) < TOL
    assert check(lambda: ad.mean(x, axis, keepdims), [x], rng) < TOL


def test_shape_ops(rng):
    x = leaf(rng, 2, 3, 4)
    assert check(lambda: ad.reshape(x, (6, 4)), [x], rng) < TOL
    assert check(lambda: ad.transpose(x, (2, 0, 1)), [x], rng) < TOL
    assert check(lambda: x[:, 1:, ::2], [x], rng) < TOL
    assert check(lambda: x[..., 0], [x], rng) < TOL


def test_fancy_index_accumulates(rng):
    x = leaf(rng, 5)
    assert check(lambda: x[np.array([0, 2, 2, 4])], [x], rng) < TOL
    out = ad.sum_(x[np.array([1, 1, 1])])
    x.zero_grad()
    out.backward()
    assert x.grad[1] == 3.0


def test_concat_and_stack(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 5)
    assert check(lambda: ad.concat([a, b], axis=-1), [a, b], rng) < TOL
    c, d = leaf(rng, 2, 3), leaf(rng, 2, 3)
    assert check(lambda: ad.stack([c, d, c], axis=1), [c, d], rng) < TOL


def test_softmax_masked(rng):
    x = leaf(rng, 3, 5)
    mask = np.array([[1, 1, 0, 1, 0], [1, 1, 1, 1, 1], [0, 0, 1, 0, 0]], bool)
    assert check(lambda: ad.softmax(x, -1, mask), [x], rng) < TOL
    y = ad.softmax(x, -1, mask).data
    assert np.allclose(y.sum(-1), 1.0)
    assert np.all(y[~mask] == 0)


def test_softmax_all_masked_row_is_zero(rng):
    x = leaf(rng, 2, 3)
    y = ad.softmax(x, -1, np.array([[0, 0, 0], [1, 0, 1]], bool))
    assert np.all(y.data[0] == 0)
    assert np.isclose(y.data[1].sum(), 1.0)


@pytest.mark.parametrize("stride", [1, (2, 1)])
def test_conv2d_gradient(stride, rng):
    x = leaf(rng, 2, 3, 4, 3)
    w = leaf(rng, 5, 3, 2, 2)
    b = leaf(rng, 5)
    assert check(lambda: ad.conv2d(x, w, b, stride), [x, w, b], rng) < TOL


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(3, 4, 3))
    w = rng.normal(size=(2, 3, 2, 2))
    out = ad.conv2d(Tensor(x), Tensor(w)).data
    ref = np.zeros((2, 3, 2))
    for f in range(2):
        for i in range(3):
            for j in range(2):
                ref[f, i, j] = np.sum(x[:, i : i + 2, j : j + 2] * w[f])
    assert np.allclose(out, ref, atol=1e-12)


def test_maxpool_gradient(rng):
    # distinct values so the argmax is stable under perturbation
    x = Tensor(rng.permutation(24).reshape(2, 4, 3) * 0.1, requires_grad=True)
    assert check(lambda: ad.maxpool2d(x, (2, 1), (1, 1)), [x], rng) < TOL
    assert check(lambda: ad.maxpool2d(x, 2), [x], rng) < TOL


def test_maxpool_ties_go_to_first(rng):
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    ad.sum_(ad.maxpool2d(x, 2)).backward()
    assert x.grad.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


def test_lstm_cell_gradient(rng):
    x, h, c = leaf(rng, 2, 3), leaf(rng, 2, 4), leaf(rng, 2, 4)
    w_ih, w_hh, bias = leaf(rng, 3, 16), leaf(rng, 4, 16), leaf(rng, 16)

    def build():
        h2, c2 = ad.lstm_cell(x, h, c, w_ih, w_hh, bias)
        return ad.concat([h2, c2], axis=-1)

    assert check(build, [x, h, c, w_ih, w_hh, bias], rng) < TOL


def test_shared_node_accumulates(rng):
    x = leaf(rng, 3)
    y = x * x + x
    ad.sum_(y).backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_repeated_backward_accumulates(rng):
    x = leaf(rng, 3)
    ad.sum_(x * 2.0).backward()
    ad.sum_(x * 2.0).backward()
    assert np.allclose(x.grad, 4.0)


def test_wrong_backward_is_caught(rng):
    x = leaf(rng, 4)

    def bad_square(t):
        return custom_op(t.data**2, (t,), lambda g: (g * t.data,))  # missing factor 2

    assert grad_check(lambda: ad.sum_(bad_square(x)), [x]) > 0.1


def test_errors():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ad.reshape(Tensor(np.ones(6)), (4, 2))
    with pytest.raises(NotScalar):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_constants_get_no_gradient(rng):
    x, k = leaf(rng, 3), Tensor(np.ones(3))
    ad.sum_(x * k).backward()
    assert k.grad is None


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_add_matches_numpy_and_grads_sum_to_count(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    out = ta + tb
    assert np.array_equal(out.data, a + b)
    ad.sum_(out).backward()
    assert np.all(ta.grad == 1.0)
    assert np.all(tb.grad == 3.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 6), elements=st.floats(-30, 30, allow_nan=False)))
def test_softmax_rows_are_distributions(x):
    y = ad.softmax(Tensor(x), -1).data
    assert np.all(y >= 0)
    assert np.allclose(y.sum(-1), 1.0)
