import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nettdsr.gradcheck import numeric_grad, rel_error
from nettdsr.tensor import (
    AdamState,
    NonFiniteError,
    ShapeError,
    Tensor,
    adam_update,
    backward,
    concat_channels,
    conv2d,
    conv2d_direct,
    leaky_relu,
    maxpool2d,
    mse_loss,
    scale,
    sum_all,
    sum_squares,
    upsample_nearest2x,
    add,
    inner,
)


def input_grad(op, x, weights=None):
    """Analytic gradient of sum(op(x) * weights) w.r.t. x."""
    xt = Tensor(x, requires_grad=True)
    out = op(xt)
    w = np.ones(out.shape) if weights is None else weights
    backward(inner(out, w))
    return xt.grad


def fd_check(op, x, rng, eps=1e-5):
    probe = rng.normal(size=op(Tensor(x)).shape)
    analytic = input_grad(op, x, probe)
    numeric = numeric_grad(lambda v: float(np.sum(op(Tensor(v)).data * probe)), x, eps)
    return rel_error(analytic, numeric)


# --- conv2d -----------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 4))
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_sum_of_entries():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = conv2d(x, Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 10.0


def test_conv_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 5, 5))
    k = Tensor(rng.normal(size=(3, 2, 3, 3)))
    b = Tensor(rng.normal(size=3))
    assert fd_check(lambda t: conv2d(t, k, b, 1, 1), x, rng) < 1e-6


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_matches_direct_summation(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 3, 7, 6))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    fast = conv2d(Tensor(x), Tensor(k), Tensor(b), stride, pad).data
    ref = conv2d_direct(x, k, b, stride, pad)
    assert fast.shape[2:] == ((7 + 2 * pad - 3) // stride + 1, (6 + 2 * pad - 3) // stride + 1)
    np.testing.assert_allclose(fast, ref, rtol=0, atol=1e-12)


def test_conv_kernel_and_bias_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 2, 4, 4)))
    k0 = rng.normal(size=(3, 2, 3, 3))
    b0 = rng.normal(size=3)
    t = rng.normal(size=(2, 3, 4, 4))

    def loss(kv, bv):
        return float(np.mean((conv2d_direct(x.data, kv, bv, 1, 1) - t) ** 2))

    k, b = Tensor(k0, requires_grad=True), Tensor(b0, requires_grad=True)
    backward(mse_loss(conv2d(x, k, b, 1, 1), Tensor(t)))
    assert rel_error(k.grad, numeric_grad(lambda kv: loss(kv, b0), k0)) < 1e-6
    assert rel_error(b.grad, numeric_grad(lambda bv: loss(k0, bv), b0)) < 1e-6


def test_conv_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))


# --- pointwise / structural ---------------------------------------------------


def test_leaky_relu_values():
    out = leaky_relu(Tensor(np.array([3.0, -1.0])), 0.1).data
    np.testing.assert_allclose(out, [3.0, -0.1])


def test_leaky_relu_gradient_negative_side():
    g = numeric_grad(lambda v: float(leaky_relu(Tensor(v), 0.1).data.sum()), np.array([-2.0]))
    assert g[0] == pytest.approx(0.1, abs=1e-9)
    assert input_grad(lambda t: leaky_relu(t, 0.1), np.array([-2.0]))[0] == 0.1


@pytest.mark.parametrize("slope", [0.0, 1.0, -0.1, 1.5])
def test_leaky_relu_rejects_bad_slope(slope):
    with pytest.raises(ValueError):
        leaky_relu(Tensor(np.ones(2)), slope)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.floats(0.01, 0.99))
def test_leaky_relu_elementwise_coercive(vals, slope):
    v = np.asarray(vals)
    out = leaky_relu(Tensor(v), slope).data
    assert np.all(np.abs(out) >= slope * np.abs(v) * (1 - 1e-12))


def test_maxpool_basic_and_odd_rejection():
    assert maxpool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data.item() == 4.0
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(np.zeros((1, 1, 3, 4))))


def test_maxpool_ties_route_to_top_left():
    x = Tensor(np.full((1, 1, 4, 4), 2.5), requires_grad=True)
    out = maxpool2d(x)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.5))
    backward(sum_all(out))
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_maxpool_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 1, 4, 4))
    assert fd_check(maxpool2d, x, rng) < 1e-8


def test_upsample_replicates_and_sums_back():
    out = upsample_nearest2x(Tensor(np.array([[[[5.0]]]])))
    np.testing.assert_array_equal(out.data[0, 0], [[5.0, 5.0], [5.0, 5.0]])
    g = input_grad(upsample_nearest2x, np.ones((1, 1, 2, 3)))
    np.testing.assert_array_equal(g, np.full((1, 1, 2, 3), 4.0))


def test_upsample_adjoint_identity():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 4, 5))
    y = rng.normal(size=(2, 3, 8, 10))
    lhs = np.sum(upsample_nearest2x(Tensor(x)).data * y)
    rhs = np.sum(x * input_grad(upsample_nearest2x, x, y))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_concat_order_and_slice_back():
    a = np.ones((1, 1, 2, 2))
    b = 2 * np.ones((1, 1, 2, 2))
    out = concat_channels(Tensor(a), Tensor(b)).data
    assert out.shape == (1, 2, 2, 2)
    np.testing.assert_array_equal(out[:, 0], a[:, 0])
    np.testing.assert_array_equal(out[:, 1], b[:, 0])
    x = np.random.default_rng(5).normal(size=(1, 2, 3, 3))
    np.testing.assert_array_equal(concat_channels(Tensor(x), Tensor(np.zeros((1, 1, 3, 3)))).data[:, :2], x)
    with pytest.raises(ShapeError):
        concat_channels(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 4, 4))))


def test_concat_gradcheck():
    rng = np.random.default_rng(6)
    a0 = rng.normal(size=(1, 2, 3, 3))
    b = Tensor(rng.normal(size=(1, 3, 3, 3)))
    assert fd_check(lambda t: concat_channels(t, b), a0, rng) < 1e-8


def test_mse_loss():
    x = np.random.default_rng(7).normal(size=(1, 1, 3, 3))
    assert mse_loss(Tensor(x), Tensor(x)).item() == 0.0
    assert mse_loss(Tensor([2.0]), Tensor([0.0])).item() == 4.0
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_mse_gradient():
    rng = np.random.default_rng(8)
    p0, t = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 1, 3, 3))
    p = Tensor(p0, requires_grad=True)
    backward(mse_loss(p, Tensor(t)))
    num = numeric_grad(lambda v: float(np.mean((v - t) ** 2)), p0)
    assert rel_error(p.grad, num) < 1e-8


# --- backward contract --------------------------------------------------------


def test_backward_of_sum_is_ones():
    x = Tensor(np.zeros((1, 1, 2, 3)), requires_grad=True)
    backward(sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((1, 1, 2, 3)))


def test_backward_rejects_non_scalar():
    x = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(scale(x, 2.0))


def test_backward_reaches_kernel_and_input():
    rng = np.random.default_rng(9)
    x0, k0, t = rng.normal(size=(1, 1, 5, 5)), rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(1, 2, 5, 5))
    b = np.zeros(2)
    x, k = Tensor(x0, requires_grad=True), Tensor(k0, requires_grad=True)
    backward(mse_loss(conv2d(x, k, Tensor(b), 1, 1), Tensor(t)))
    f = lambda xv, kv: float(np.mean((conv2d_direct(xv, kv, b, 1, 1) - t) ** 2))
    assert rel_error(x.grad, numeric_grad(lambda v: f(v, k0), x0)) < 1e-6
    assert rel_error(k.grad, numeric_grad(lambda v: f(x0, v), k0)) < 1e-6


def test_two_backward_calls_double_gradients():
    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2), requires_grad=True)
    loss = sum_squares(x)
    backward(loss)
    first = x.grad.copy()
    backward(loss)
    np.testing.assert_array_equal(x.grad, 2 * first)


def test_fan_out_accumulates_exactly():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    backward(sum_squares(add(x, x)))  # d/dx ||2x||^2 = 8x
    np.testing.assert_array_equal(x.grad, 8 * x.data)


def test_forward_replay_is_bit_identical():
    rng = np.random.default_rng(10)
    x, k, b = rng.normal(size=(2, 2, 8, 8)), rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)

    def run():
        h = leaky_relu(conv2d(Tensor(x), Tensor(k), Tensor(b), 1, 1), 0.1)
        return upsample_nearest2x(maxpool2d(h)).data

    assert np.array_equal(run(), run())


def test_non_finite_output_is_rejected():
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        scale(Tensor(np.array([1e308])), 10.0)


# --- adam -------------------------------------------------------------------


def test_adam_zero_gradient_keeps_weights():
    w = {"w": np.array([0.3, -1.2])}
    adam_update(w, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(w["w"], [0.3, -1.2])


def test_adam_first_step_is_lr_times_sign():
    w = {"w": np.array([0.0])}
    adam_update(w, {"w": np.array([1.0])}, AdamState(), lr=0.1)
    assert w["w"][0] == pytest.approx(-0.1, rel=1e-6)


def _scalar_adam_oracle(w, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_quadratic_descent_matches_scalar_recurrence():
    # with lr=0.01 the oracle lands near 0.0006 after 100 steps; we assert |w| < 0.5
    lr = 0.01
    expected = _scalar_adam_oracle(1.0, 100, lr)
    w = {"w": np.array([1.0])}
    state = AdamState()
    for _ in range(100):
        adam_update(w, {"w": 2 * w["w"]}, state, lr=lr)
    assert abs(w["w"][0]) < 0.5
    assert w["w"][0] == pytest.approx(expected, rel=1e-12, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_conv_input_gradcheck_random_shapes(cin, cout, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, cin, 4, 5))
    k, b = Tensor(rng.normal(size=(cout, cin, 3, 3))), Tensor(rng.normal(size=cout))
    assert fd_check(lambda t: conv2d(t, k, b, 1, 1), x, rng) < 1e-4
