import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdcs import tensor as T
from mdcs.gradcheck import check_stitch
from mdcs.stitch import CrossStitchUnit, init_unit, stitch, stitch_backward, stitch_forward
from mdcs.tensor import ShapeError, Tensor

finite = st.floats(-10, 10, allow_nan=False)


def test_identity_unit_passes_through():
    rng = np.random.default_rng(0)
    x_r, x_d = rng.standard_normal((2, 2, 3, 4, 4))
    o_r, o_d = stitch_forward(x_r, x_d, (1, 0, 0, 1))
    np.testing.assert_array_equal(o_r, x_r)
    np.testing.assert_array_equal(o_d, x_d)


def test_default_init_single_location():
    # independent 2x2 matrix-vector product
    mixed = np.array([[0.9, 0.1], [0.1, 0.9]]) @ np.array([2.0, 0.0])
    o_r, o_d = stitch_forward(np.array([2.0]), np.array([0.0]), init_unit())
    assert o_r[0] == pytest.approx(mixed[0]) == pytest.approx(1.8)
    assert o_d[0] == pytest.approx(mixed[1]) == pytest.approx(0.2)


def test_swap_unit():
    x_r, x_d = np.arange(4.0), -np.arange(4.0)
    o_r, o_d = stitch_forward(x_r, x_d, (0, 1, 1, 0))
    np.testing.assert_array_equal(o_r, x_d)
    np.testing.assert_array_equal(o_d, x_r)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        stitch_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 2, 2)), init_unit())
    with pytest.raises(ShapeError):
        stitch_backward(np.zeros(3), np.zeros(4), np.zeros(3), np.zeros(3), init_unit())


def test_alpha_gradient_single_location():
    _, _, d_alpha = stitch_backward(np.array([0.0]), np.array([0.5]), np.array([2.0]), np.array([0.0]), init_unit())
    rr, rd, dr, dd = d_alpha
    # output D gradient times input R, by hand: 0.5 * 2.0
    assert dr == pytest.approx(1.0)
    assert rr == rd == dd == 0.0


def test_alpha_gradient_cross_term():
    # dL/d(alpha_RD) pairs the R-output gradient with the D input
    _, _, d_alpha = stitch_backward(np.array([0.5]), np.array([0.0]), np.array([0.0]), np.array([2.0]), init_unit())
    assert d_alpha[1] == pytest.approx(1.0)


def test_identity_unit_gradients_pass_through():
    rng = np.random.default_rng(1)
    g_r, g_d, x_r, x_d = rng.standard_normal((4, 1, 2, 4, 4))
    d_r, d_d, _ = stitch_backward(g_r, g_d, x_r, x_d, (1, 0, 0, 1))
    np.testing.assert_array_equal(d_r, g_r)
    np.testing.assert_array_equal(d_d, g_d)


def test_random_maps_match_finite_differences():
    result = check_stitch(np.random.default_rng(2), configs=5, shape=(1, 2, 4, 4))
    assert result.max_rel_error <= 1e-6
    assert result.n_checked == 5 * (32 + 32 + 4)


def test_input_gradient_matrix_is_forward_transpose():
    rng = np.random.default_rng(3)
    for _ in range(10):
        alpha = rng.standard_normal(4)
        e = [(np.array([1.0]), np.array([0.0])), (np.array([0.0]), np.array([1.0]))]
        # column k = response to the k-th unit vector
        forward = np.array([np.concatenate(stitch_forward(*v, alpha)) for v in e]).T
        backward = np.array([np.concatenate(stitch_backward(*v, np.ones(1), np.ones(1), alpha)[:2]) for v in e]).T
        np.testing.assert_array_equal(backward, forward.T)


def test_tape_matches_composed_scalar_ops():
    """The stitch op and the same mix written with scale/add agree bit for bit."""
    rng = np.random.default_rng(4)
    x_r0, x_d0, w_r, w_d = rng.standard_normal((4, 2, 3, 4, 4))
    unit = CrossStitchUnit(*rng.standard_normal(4))

    x_r, x_d = Tensor(x_r0.copy(), requires_grad=True), Tensor(x_d0.copy(), requires_grad=True)
    with T.Tape() as tape:
        o_r, o_d = stitch(x_r, x_d, unit)
        loss = T.add(T.weighted_sum(o_r, w_r), T.weighted_sum(o_d, w_d))
    tape.backward(loss)
    analytic = (x_r.grad, x_d.grad, unit.alpha.grad)

    a = [Tensor(unit.alpha.data[k : k + 1].copy(), requires_grad=True) for k in range(4)]
    y_r, y_d = Tensor(x_r0.copy(), requires_grad=True), Tensor(x_d0.copy(), requires_grad=True)
    with T.Tape() as tape:
        c_r = T.add(T.scale(y_r, a[0]), T.scale(y_d, a[1]))
        c_d = T.add(T.scale(y_r, a[2]), T.scale(y_d, a[3]))
        loss2 = T.add(T.weighted_sum(c_r, w_r), T.weighted_sum(c_d, w_d))
    tape.backward(loss2)
    assert loss.item() == loss2.item()
    np.testing.assert_array_equal(analytic[0], y_r.grad)
    np.testing.assert_array_equal(analytic[1], y_d.grad)
    np.testing.assert_array_equal(analytic[2], np.concatenate([t.grad for t in a]))


def test_init_unit():
    u = init_unit()
    assert (u.alpha_rr, u.alpha_rd, u.alpha_dr, u.alpha_dd) == (0.9, 0.1, 0.1, 0.9)
    np.testing.assert_allclose(u.matrix.sum(axis=1), 1.0, rtol=0, atol=1e-15)
    assert u.alpha.grad is None
    np.testing.assert_array_equal(init_unit().alpha.data, u.alpha.data)
    v = np.full((2, 3), 4.2)
    o_r, o_d = stitch_forward(v, v, u)
    np.testing.assert_allclose(o_r, v, rtol=1e-15)
    np.testing.assert_allclose(o_d, v, rtol=1e-15)


@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=6, max_size=6), finite)
@settings(max_examples=100)
def test_linear_in_inputs_and_alpha(alpha, xs, c):
    alpha = np.array(alpha)
    x_r, x_d = np.array(xs[:3]), np.array(xs[3:])
    base_r, base_d = stitch_forward(x_r, x_d, alpha)
    sr, sd = stitch_forward(c * x_r, c * x_d, alpha)
    np.testing.assert_allclose(sr, c * base_r, atol=1e-9)
    np.testing.assert_allclose(sd, c * base_d, atol=1e-9)
    ar, ad = stitch_forward(x_r, x_d, c * alpha)
    np.testing.assert_allclose(ar, c * base_r, atol=1e-9)
    np.testing.assert_allclose(ad, c * base_d, atol=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3), st.lists(finite, min_size=5, max_size=5))
def test_row_stochastic_alpha_preserves_equal_inputs(rd, dr, values):
    v = np.array(values)
    o_r, o_d = stitch_forward(v, v, (1 - rd, rd, dr, 1 - dr))
    np.testing.assert_allclose(o_r, v, atol=1e-12)
    np.testing.assert_allclose(o_d, v, atol=1e-12)
