import numpy as np
import pytest

from daunet.functional import (
    ShapeError,
    batchnorm2d,
    concat_channels,
    conv2d,
    conv_transpose2d,
    maxpool2d,
)
from daunet.gradcheck import finite_diff_check, jitter_off_boundaries
from daunet.tensor import Tensor

from oracles import conv2d_loops, maxpool2d_loops


# -- conv2d ------------------------------------------------------------------

def test_conv2d_scalar_product():
    x = Tensor(np.full((1, 1, 1, 1), 5.0))
    w = Tensor(np.full((1, 1, 1, 1), 3.0))
    assert conv2d(x, w).data.item() == 15.0


def test_conv2d_ones_padding_counts_overlap():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = conv2d(x, w, padding=1).data[0, 0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == 4.0 and out[0, 2] == 4.0 and out[2, 0] == 4.0 and out[2, 2] == 4.0
    assert out[0, 1] == 6.0


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1).data
    want = conv2d_loops(x, w, b, stride=1, padding=1)
    assert np.max(np.abs(got - want)) <= 1e-12


@pytest.mark.parametrize("seed,shape,cout,k,stride,padding", [
    (0, (1, 1, 5, 5), 2, 3, 1, 0),
    (1, (2, 4, 9, 9), 3, 3, 2, 1),
    (2, (2, 2, 7, 7), 1, 1, 1, 0),
    (3, (1, 3, 6, 6), 2, 3, 1, 1),
    (4, (2, 4, 8, 8), 4, 2, 2, 0),
])
def test_conv2d_randomized_vs_oracle(seed, shape, cout, k, stride, padding):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=shape)
    w = rng.normal(size=(cout, shape[1], k, k))
    got = conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).data
    want = conv2d_loops(x, w, None, stride=stride, padding=padding)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_conv2d_channel_mismatch_names_dimension():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    w = Tensor(np.zeros((2, 4, 3, 3)))
    with pytest.raises(ShapeError, match="C_in=4"):
        conv2d(x, w, padding=1)


def test_conv2d_too_small_after_padding():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


def test_conv2d_grad_weight_and_bias():
    rng = np.random.default_rng(11)
    x_data = rng.normal(size=(2, 2, 5, 5))
    x = Tensor(x_data, requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    leaves = {"x": x, "w": w, "b": b}
    rep = finite_diff_check(lambda: (conv2d(x, w, b, stride=1, padding=1) ** 2).sum(), leaves)
    assert rep.passed, str(rep)


def test_conv2d_adjointness():
    # <conv(x), y> == <x, conv-backward-input(y)> for model shapes.
    rng = np.random.default_rng(12)
    for k, stride, padding in [(3, 1, 1), (1, 1, 0), (2, 2, 0)]:
        x = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 3, k, k)))
        out = conv2d(x, w, stride=stride, padding=padding)
        y = rng.normal(size=out.shape)
        lhs = float((out.data * y).sum())
        (out * Tensor(y)).sum().backward()
        rhs = float((x.data * x.grad).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


# -- conv_transpose2d ---------------------------------------------------------

def test_conv_transpose_single_tap_stamp():
    x = Tensor(np.full((1, 1, 1, 1), 1.0))
    w = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    out = conv_transpose2d(x, w, stride=2).data
    assert np.array_equal(out[0, 0], [[1.0, 2.0], [3.0, 4.0]])


def test_conv_transpose_zero_input_gives_bias():
    x = Tensor(np.zeros((1, 2, 3, 3)))
    w = Tensor(np.ones((2, 3, 2, 2)))
    b = Tensor(np.array([1.0, 2.0, 3.0]))
    out = conv_transpose2d(x, w, b, stride=2).data
    assert out.shape == (1, 3, 6, 6)
    for c, v in enumerate([1.0, 2.0, 3.0]):
        assert np.all(out[0, c] == v)


def test_conv_transpose_is_adjoint_of_conv():
    # Forward of the transpose equals conv2d's gradient w.r.t. its input.
    rng = np.random.default_rng(13)
    w_data = rng.normal(size=(2, 3, 2, 2))  # conv: 3 -> 2 channels, under stride 2
    y_data = rng.normal(size=(1, 2, 4, 4))

    x = Tensor(rng.normal(size=(1, 3, 8, 8)), requires_grad=True)
    out = conv2d(x, Tensor(w_data), stride=2, padding=0)
    (out * Tensor(y_data)).sum().backward()

    got = conv_transpose2d(Tensor(y_data), Tensor(w_data), stride=2).data
    assert np.max(np.abs(got - x.grad)) <= 1e-12


def test_conv_transpose_grads():
    rng = np.random.default_rng(14)
    x = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3, 2, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    rep = finite_diff_check(lambda: (conv_transpose2d(x, w, b, stride=2) ** 2).sum(),
                            {"x": x, "w": w, "b": b})
    assert rep.passed, str(rep)


def test_conv_transpose_channel_mismatch():
    with pytest.raises(ShapeError, match="C_in"):
        conv_transpose2d(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((2, 4, 2, 2))))


# -- maxpool2d ----------------------------------------------------------------

def test_maxpool_basic():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    assert maxpool2d(x).data.item() == 4.0


def test_maxpool_tie_gradient_goes_to_first_row_major():
    x = Tensor(np.full((1, 1, 2, 2), 7.0), requires_grad=True)
    maxpool2d(x).sum().backward()
    assert np.array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_matches_loop_oracle():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(1, 1, 6, 6))
    got = maxpool2d(Tensor(x)).data
    assert np.array_equal(got, maxpool2d_loops(x))


def test_maxpool_odd_dims_error():
    with pytest.raises(ShapeError, match="even"):
        maxpool2d(Tensor(np.zeros((1, 1, 3, 4))))


def test_maxpool_grad_matches_finite_difference():
    rng = np.random.default_rng(16)
    x = Tensor(jitter_off_boundaries(rng.normal(size=(1, 2, 4, 4)), rng), requires_grad=True)
    rep = finite_diff_check(lambda: (maxpool2d(x) ** 2).sum(), {"x": x})
    assert rep.passed, str(rep)


# -- concat_channels -----------------------------------------------------------

def test_concat_order_and_grad_split():
    a = Tensor(np.array([1.0, 2.0]).reshape(1, 2, 1, 1), requires_grad=True)
    b = Tensor(np.array([3.0]).reshape(1, 1, 1, 1), requires_grad=True)
    out = concat_channels(a, b)
    assert np.array_equal(out.data.ravel(), [1.0, 2.0, 3.0])
    (out * Tensor(np.array([10.0, 20.0, 30.0]).reshape(1, 3, 1, 1))).sum().backward()
    assert np.array_equal(a.grad.ravel(), [10.0, 20.0])
    assert np.array_equal(b.grad.ravel(), [30.0])


def test_concat_spatial_mismatch_error():
    with pytest.raises(ShapeError, match="H mismatch"):
        concat_channels(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2))))


# -- batchnorm2d ----------------------------------------------------------------

def _bn_buffers(c):
    return np.zeros(c), np.ones(c)


def test_batchnorm_constant_channel_gives_beta():
    x = Tensor(np.full((2, 3, 4, 4), 5.0))
    gamma = Tensor(np.ones(3))
    beta = Tensor(np.array([1.0, 2.0, 3.0]))
    rm, rv = _bn_buffers(3)
    out = batchnorm2d(x, gamma, beta, rm, rv, training=True).data
    for c, v in enumerate([1.0, 2.0, 3.0]):
        assert np.allclose(out[:, c], v)


def test_batchnorm_identity_on_standardized_input():
    rng = np.random.default_rng(17)
    x_data = rng.normal(size=(4, 2, 8, 8))
    x_data -= x_data.mean(axis=(0, 2, 3), keepdims=True)
    x_data /= x_data.std(axis=(0, 2, 3), keepdims=True)
    rm, rv = _bn_buffers(2)
    out = batchnorm2d(Tensor(x_data), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                      rm, rv, training=True).data
    assert np.max(np.abs(out - x_data)) <= 1e-4


def test_batchnorm_running_stats_update_and_eval():
    rng = np.random.default_rng(18)
    x_data = rng.normal(loc=2.0, scale=3.0, size=(4, 2, 8, 8))
    rm, rv = _bn_buffers(2)
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    batchnorm2d(Tensor(x_data), gamma, beta, rm, rv, training=True)
    batch_mean = x_data.mean(axis=(0, 2, 3))
    count = x_data[:, 0].size
    batch_var_unbiased = x_data.var(axis=(0, 2, 3)) * count / (count - 1)
    assert np.allclose(rm, 0.1 * batch_mean)
    assert np.allclose(rv, 0.9 * 1.0 + 0.1 * batch_var_unbiased)

    # Eval mode uses the running buffers, not the batch stats.
    y = batchnorm2d(Tensor(x_data), gamma, beta, rm, rv, training=False).data
    want = (x_data - rm.reshape(1, 2, 1, 1)) / np.sqrt(rv.reshape(1, 2, 1, 1) + 1e-5)
    assert np.allclose(y, want)


def test_batchnorm_grad_matches_finite_difference():
    rng = np.random.default_rng(19)
    x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
    beta = Tensor(rng.normal(size=3), requires_grad=True)

    def f():
        rm, rv = _bn_buffers(3)
        return (batchnorm2d(x, gamma, beta, rm, rv, training=True) ** 2).sum()

    rep = finite_diff_check(f, {"x": x, "gamma": gamma, "beta": beta})
    assert rep.passed, str(rep)


def test_batchnorm_gamma_length_mismatch():
    with pytest.raises(ShapeError, match="gamma"):
        rm, rv = _bn_buffers(2)
        batchnorm2d(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                    rm, rv, training=True)


# -- cross-op properties ---------------------------------------------------------

def test_gradient_accumulation_order_independent():
    rng = np.random.default_rng(20)
    x_data = rng.normal(size=(1, 2, 4, 4))
    w_data = rng.normal(size=(2, 2, 3, 3))

    def run(flip):
        x = Tensor(x_data.copy(), requires_grad=True)
        w = Tensor(w_data.copy())
        f = (conv2d(x, w, padding=1) ** 2).sum()
        g = (x * 3.0).sum()
        total = g + f if flip else f + g
        total.backward()
        return x.grad

    assert np.max(np.abs(run(False) - run(True))) <= 1e-12
