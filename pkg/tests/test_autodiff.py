import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chanshuffle.autodiff import (
    Tape,
    Tensor,
    backward,
    conv2d,
    finite_diff_check,
    global_avg_pool,
    linear,
    max_pool2d,
    relu,
    softmax_cross_entropy_masked,
    upsample_nearest,
)
from chanshuffle.errors import EmptyBatch, NotScalar, ShapeMismatch


def f64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def projected(op, out_shape, seed=0):
    """Scalar test loss sum(op(x) * R) with a fixed random R."""
    r = f64(np.random.default_rng(seed).standard_normal(out_shape))
    return lambda t: (op(t) * r).sum()


# -- conv2d -------------------------------------------------------------------

def test_conv2d_sum_of_ones():
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)), 1, 0)
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


def test_conv2d_unit_kernel_is_identity():
    x = np.random.default_rng(0).standard_normal((2, 1, 4, 5)).astype(np.float32)
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_output_size(stride, padding):
    x = Tensor(np.zeros((1, 2, 7, 6)))
    w = Tensor(np.zeros((3, 2, 3, 3)))
    out = conv2d(x, w, None, stride, padding)
    assert out.shape == (1, 3, (7 + 2 * padding - 3) // stride + 1, (6 + 2 * padding - 3) // stride + 1)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((3, 3, 3, 3))))


def test_conv2d_matches_direct_loops():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 2, 5, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = conv2d(f64(x), f64(w), f64(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv2d_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    shape = (1, 3, 5, 5)
    assert finite_diff_check(projected(lambda t: conv2d(t, f64(w), f64(b), 1, 1), shape), x) <= 1e-5
    assert finite_diff_check(projected(lambda t: conv2d(f64(x), t, f64(b), 1, 1), shape), w) <= 1e-5
    assert finite_diff_check(projected(lambda t: conv2d(f64(x), f64(w), t, 1, 1), shape), b) <= 1e-5


# -- relu ---------------------------------------------------------------------

def test_relu_values():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    x = np.array([0.5, 1.0, 3.0])
    np.testing.assert_array_equal(relu(Tensor(x)).data, x.astype(np.float32))


def test_relu_subgradient_zero_at_kink():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    backward(relu(x).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_relu_gradcheck_away_from_kinks():
    x = np.random.default_rng(3).standard_normal((3, 4))
    near = np.abs(x) < 1e-6
    assert finite_diff_check(projected(relu, x.shape), x, exclude=near) <= 1e-5


# -- max pool -----------------------------------------------------------------

def test_max_pool_window():
    out = max_pool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), 2, 2)
    assert out.data.item() == 4.0


def test_max_pool_tie_routes_to_first_element():
    x = Tensor(np.full((1, 1, 4, 4), 2.5), requires_grad=True)
    out = max_pool2d(x, 2, 2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.5))
    backward(out.sum())
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_max_pool_too_small():
    with pytest.raises(ShapeMismatch):
        max_pool2d(Tensor(np.zeros((1, 1, 1, 3))), 2)


def test_max_pool_gradcheck_distinct_values():
    rng = np.random.default_rng(4)
    x = rng.permutation(2 * 3 * 6 * 6).reshape(2, 3, 6, 6).astype(np.float64) / 7.0
    assert finite_diff_check(projected(lambda t: max_pool2d(t, 2, 2), (2, 3, 3, 3)), x) <= 1e-5
    assert finite_diff_check(projected(lambda t: max_pool2d(t, 3, 2), (2, 3, 2, 2)), x) <= 1e-5


# -- upsample / pooling / linear ------------------------------------------------

def test_upsample_identity_and_replication():
    x = np.random.default_rng(5).standard_normal((1, 2, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(upsample_nearest(Tensor(x), 1).data, x)
    out = upsample_nearest(Tensor(np.full((1, 1, 1, 1), 7.0)), 2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 7.0))


@pytest.mark.parametrize("factor", [1, 2, 3])
def test_upsample_grad_counts_replicas(factor):
    x = Tensor(np.zeros((2, 1, 3, 2)), requires_grad=True)
    backward(upsample_nearest(x, factor).sum())
    np.testing.assert_array_equal(x.grad, np.full(x.shape, factor ** 2))


def test_global_avg_pool_values():
    assert global_avg_pool(Tensor(np.full((1, 1, 3, 5), 1.5))).data.item() == 1.5
    assert global_avg_pool(Tensor(np.array([[[[1.0, 3.0], [5.0, 7.0]]]]))).data.item() == 4.0


def test_global_avg_pool_gradcheck():
    x = np.random.default_rng(6).standard_normal((2, 3, 4, 5))
    assert finite_diff_check(projected(global_avg_pool, (2, 3)), x) <= 1e-5


def test_linear_identity_and_bias():
    x = np.random.default_rng(7).standard_normal((4, 3))
    np.testing.assert_allclose(linear(f64(x), f64(np.eye(3)), f64(np.zeros(3))).data, x)
    b = np.array([1.0, -2.0])
    out = linear(f64(x), f64(np.zeros((2, 3))), f64(b)).data
    np.testing.assert_array_equal(out, np.tile(b, (4, 1)))


def test_linear_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_linear_gradcheck():
    rng = np.random.default_rng(8)
    x, w, b = rng.standard_normal((3, 5)), rng.standard_normal((2, 5)), rng.standard_normal(2)
    assert finite_diff_check(projected(lambda t: linear(t, f64(w), f64(b)), (3, 2)), x) <= 1e-5
    assert finite_diff_check(projected(lambda t: linear(f64(x), t, f64(b)), (3, 2)), w) <= 1e-5
    assert finite_diff_check(projected(lambda t: linear(f64(x), f64(w), t), (3, 2)), b) <= 1e-5


# -- cross-entropy --------------------------------------------------------------

def test_cross_entropy_uniform_logits():
    loss = softmax_cross_entropy_masked(f64([[0.0, 0.0]]), [0])
    assert loss.data.item() == pytest.approx(math.log(2), abs=1e-12)


def test_cross_entropy_all_ignored():
    with pytest.raises(EmptyBatch):
        softmax_cross_entropy_masked(f64([[1.0, 2.0], [0.0, 0.0]]), [255, 255], ignore_index=255)


def test_cross_entropy_matches_direct_softmax():
    logits = [2.0, 0.0, 0.0]
    z = [math.exp(v) for v in logits]
    p = [v / sum(z) for v in z]
    expected_loss = -math.log(p[0])
    expected_grad = [p[0] - 1, p[1], p[2]]
    x = Tensor(np.array([logits]), requires_grad=True, dtype=np.float64)
    loss = softmax_cross_entropy_masked(x, [0])
    backward(loss)
    assert loss.data.item() == pytest.approx(expected_loss, abs=1e-6)
    np.testing.assert_allclose(x.grad[0], expected_grad, atol=1e-6)


def test_cross_entropy_ignores_positions_in_mean():
    x = Tensor(np.array([[0.0, 0.0], [5.0, -5.0]]), requires_grad=True, dtype=np.float64)
    loss = softmax_cross_entropy_masked(x, [0, 255])
    backward(loss)
    assert loss.data.item() == pytest.approx(math.log(2))
    np.testing.assert_array_equal(x.grad[1], [0.0, 0.0])


def test_cross_entropy_4d_equals_flattened_2d():
    rng = np.random.default_rng(9)
    z = rng.standard_normal((2, 3, 4, 4))
    t = rng.integers(0, 3, (2, 4, 4))
    t[0, 0, :2] = 255
    loss4 = softmax_cross_entropy_masked(f64(z), t).data.item()
    loss2 = softmax_cross_entropy_masked(f64(np.moveaxis(z, 1, -1).reshape(-1, 3)), t.reshape(-1)).data.item()
    assert loss4 == pytest.approx(loss2, rel=1e-12)
    f = lambda u: softmax_cross_entropy_masked(u, t)
    assert finite_diff_check(f, z) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_cross_entropy_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((4, 5)) * 3
    t = rng.integers(0, 5, 4)
    a = softmax_cross_entropy_masked(f64(z), t).data.item()
    b = softmax_cross_entropy_masked(f64(z + shift), t).data.item()
    assert abs(a - b) <= 1e-6


# -- backward / tape ---------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_fan_out_accumulates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    backward((x + x).sum())
    np.testing.assert_array_equal(x.grad, np.full(4, 2.0))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(NotScalar):
        backward(x * 2.0)


def test_tape_is_topological_and_visits_once():
    x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
    h = relu(x)
    y = (h + h * 2.0).sum()
    tape = Tape.from_output(y)
    ids = [id(n) for n in tape]
    assert len(ids) == len(set(ids))
    pos = {id(n): i for i, n in enumerate(tape)}
    for node in tape:
        for parent in node._parents:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(node)]


def test_gradient_additivity():
    rng = np.random.default_rng(10)
    x0 = rng.standard_normal((1, 2, 4, 4))
    w = f64(rng.standard_normal((2, 2, 3, 3)))
    f = lambda t: (relu(conv2d(t, w, None, 1, 1)) * 1.5).sum()
    g = lambda t: (global_avg_pool(t) * f64([[2.0, -1.0]])).sum()

    def grad(fn):
        t = Tensor(x0, requires_grad=True, dtype=np.float64)
        backward(fn(t))
        return t.grad

    np.testing.assert_allclose(grad(lambda t: f(t) + g(t)), grad(f) + grad(g), rtol=1e-12, atol=1e-12)


def test_forward_bitwise_repeatable():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)

    def run():
        return max_pool2d(relu(conv2d(Tensor(x), Tensor(w), None, 1, 1)), 2).data.tobytes()

    assert run() == run()


# -- finite_diff_check itself ---------------------------------------------------

def test_fd_check_exact_for_linear_function():
    x = np.random.default_rng(12).standard_normal(5)
    assert finite_diff_check(lambda t: t.sum(), x, eps=1e-4) <= 1e-10


def test_fd_check_square():
    x = np.array([1.0, 2.0])
    err, details = finite_diff_check(lambda t: (t * t).sum(), x, eps=1e-4, return_details=True)
    np.testing.assert_array_equal(details["analytic"], [2.0, 4.0])
    np.testing.assert_allclose(details["numeric"], [2.0, 4.0], atol=1e-7)
    assert err <= 1e-7


def test_fd_check_excludes_kink_coordinate():
    x = np.array([0.0, 1.5, -0.7])
    err, details = finite_diff_check(lambda t: relu(relu(t) * 2.0).sum(), x, eps=1e-6, return_details=True)
    assert details["excluded"].tolist() == [True, False, False]
    assert err <= 1e-8


def test_fd_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: t.sum(), np.zeros(2), eps=0.1)


def test_fd_check_detects_wrong_gradient():
    from chanshuffle.autodiff.tensor import Tensor as T

    def broken(t):
        out = T.from_op(t.data * 3.0, (t,), lambda g: (g * 2.0,), "broken")
        return out.sum()

    assert finite_diff_check(broken, np.ones(3)) > 0.1


def test_fd_check_floor_relative_to_tensor_scale():
    from chanshuffle.autodiff.tensor import Tensor as T

    w = np.array([1.0, 1e-7])

    def off_small(t):
        # true gradient is w; the tape reports the tiny component 1% high
        out = T.from_op((t.data * w).sum(), (t,), lambda g: (g * w * np.array([1.0, 1.01]),), "off")
        return out

    x = np.ones(2)
    assert finite_diff_check(off_small, x, eps=1e-4) <= 1e-5
    assert finite_diff_check(off_small, x, eps=1e-4, rel_floor=0.0) > 5e-3

    w[1] = 0.5
    assert finite_diff_check(off_small, x, eps=1e-4) > 5e-3
