import numpy as np
import pytest

from affectnn import ops

from conftest import max_rel_error, numerical_gradient


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_hand_example():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    w = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    out, _ = ops.conv2d(x, w, np.zeros(1))
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 5.0


def test_conv2d_zero_kernel_gives_bias(rng):
    x = rng.normal(size=(2, 7, 9))
    w = np.zeros((3, 2, 3, 3))
    b = np.array([1.5, -2.0, 0.25])
    out, _ = ops.conv2d(x, w, b)
    for o in range(3):
        assert np.all(out[o] == b[o])


def test_conv2d_gradients_match_finite_differences(rng):
    x = rng.normal(size=(2, 6, 6))
    w = rng.normal(size=(3, 2, 5, 5))
    b = rng.normal(size=3)
    up = rng.normal(size=(3, 2, 2))

    def loss():
        out, _ = ops.conv2d(x, w, b)
        return float((out * up).sum())

    out, ctx = ops.conv2d(x, w, b)
    dx, dw, db = ops.conv2d_backward(ctx, up)
    assert max_rel_error(dx, numerical_gradient(loss, x)) < 1e-6
    assert max_rel_error(dw, numerical_gradient(loss, w)) < 1e-6
    assert max_rel_error(db, numerical_gradient(loss, b)) < 1e-6


def test_conv2d_linear_in_input(rng):
    w = rng.normal(size=(2, 1, 3, 3))
    b = np.zeros(2)
    x = rng.normal(size=(1, 6, 6))
    y = rng.normal(size=(1, 6, 6))
    a, c = 1.7, -0.3
    lhs, _ = ops.conv2d(a * x + c * y, w, b)
    rhs = a * ops.conv2d(x, w, b)[0] + c * ops.conv2d(y, w, b)[0]
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_conv2d_shape_errors():
    with pytest.raises(ValueError, match="channel"):
        ops.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 2, 2)), np.zeros(1))
    with pytest.raises(ValueError, match="smaller than kernel"):
        ops.conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError, match="bias"):
        ops.conv2d(np.zeros((1, 4, 4)), np.zeros((2, 1, 3, 3)), np.zeros(3))


# ---------------------------------------------------------------------------
# maxpool2


def test_maxpool2_single_block():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out, ctx = ops.maxpool2(x)
    assert out.tolist() == [[[4.0]]]
    dx = ops.maxpool2_backward(ctx, np.array([[[1.0]]]))
    assert dx.tolist() == [[[0.0, 0.0], [0.0, 1.0]]]


def test_maxpool2_tie_breaks_to_first_in_row_major():
    x = np.full((1, 2, 2), 3.0)
    out, ctx = ops.maxpool2(x)
    assert out[0, 0, 0] == 3.0
    dx = ops.maxpool2_backward(ctx, np.array([[[2.0]]]))
    assert dx.tolist() == [[[2.0, 0.0], [0.0, 0.0]]]


def test_maxpool2_matches_brute_force(rng):
    x = rng.normal(size=(1, 8, 8))
    out, _ = ops.maxpool2(x)
    for y in range(4):
        for z in range(4):
            assert out[0, y, z] == x[0, 2 * y : 2 * y + 2, 2 * z : 2 * z + 2].max()


def test_maxpool2_gradient_check(rng):
    # spread values so no perturbation flips an argmax
    x = rng.permutation(64).astype(np.float64).reshape(1, 8, 8)
    up = rng.normal(size=(1, 4, 4))

    def loss():
        out, _ = ops.maxpool2(x)
        return float((out * up).sum())

    _, ctx = ops.maxpool2(x)
    dx = ops.maxpool2_backward(ctx, up)
    assert max_rel_error(dx, numerical_gradient(loss, x)) < 1e-6


def test_maxpool2_rejects_odd_extents():
    with pytest.raises(ValueError, match="even"):
        ops.maxpool2(np.zeros((1, 3, 4)))


# ---------------------------------------------------------------------------
# quadrant_pool


def test_quadrant_pool_hand_example():
    x = np.arange(1.0, 17.0).reshape(1, 4, 4)
    out, _ = ops.quadrant_pool(x)
    assert out[0].tolist() == [[6.0, 8.0], [14.0, 16.0]]


def test_quadrant_pool_constant_input():
    out, ctx = ops.quadrant_pool(np.full((2, 4, 4), 7.0))
    assert np.all(out == 7.0)
    dx = ops.quadrant_pool_backward(ctx, np.ones((2, 2, 2)))
    # tie rule: gradient lands on each quadrant's (0, 0) corner
    for c in range(2):
        assert dx[c, 0, 0] == 1.0 and dx[c, 0, 2] == 1.0
        assert dx[c, 2, 0] == 1.0 and dx[c, 2, 2] == 1.0
    assert dx.sum() == 8.0


def test_quadrant_pool_odd_extents_brute_force(rng):
    x = rng.normal(size=(4, 17, 17))
    out, _ = ops.quadrant_pool(x)
    for c in range(4):
        assert out[c, 0, 0] == x[c, :8, :8].max()
        assert out[c, 0, 1] == x[c, :8, 8:].max()
        assert out[c, 1, 0] == x[c, 8:, :8].max()
        assert out[c, 1, 1] == x[c, 8:, 8:].max()


def test_quadrant_pool_gradient_check(rng):
    x = rng.permutation(36).astype(np.float64).reshape(1, 6, 6)
    up = rng.normal(size=(1, 2, 2))

    def loss():
        out, _ = ops.quadrant_pool(x)
        return float((out * up).sum())

    _, ctx = ops.quadrant_pool(x)
    dx = ops.quadrant_pool_backward(ctx, up)
    assert max_rel_error(dx, numerical_gradient(loss, x)) < 1e-6


def test_pool_outputs_bounded_by_input_max(rng):
    x = rng.normal(size=(3, 8, 8))
    assert ops.maxpool2(x)[0].max() <= x.max()
    assert ops.quadrant_pool(x)[0].max() <= x.max()


def test_quadrant_pool_rejects_tiny_input():
    with pytest.raises(ValueError):
        ops.quadrant_pool(np.zeros((1, 1, 4)))


# ---------------------------------------------------------------------------
# activations


def test_relu_values():
    out, _ = ops.activation(np.array([-1.0, 0.0, 2.0]), "relu")
    assert out.tolist() == [0.0, 0.0, 2.0]


def test_tanh_at_zero():
    out, ctx = ops.activation(np.array([0.0]), "tanh")
    assert out[0] == 0.0
    assert ops.activation_backward(ctx, np.array([1.0]))[0] == 1.0


def test_relu_derivative_zero_at_kink():
    _, ctx = ops.activation(np.array([0.0]), "relu")
    assert ops.activation_backward(ctx, np.array([1.0]))[0] == 0.0


@pytest.mark.parametrize("kind", ["relu", "tanh"])
def test_activation_gradient_check(kind, rng):
    x = rng.normal(size=20)
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the relu kink
    up = rng.normal(size=20)

    def loss():
        out, _ = ops.activation(x, kind)
        return float((out * up).sum())

    _, ctx = ops.activation(x, kind)
    dx = ops.activation_backward(ctx, up)
    assert max_rel_error(dx, numerical_gradient(loss, x)) < 1e-7


def test_activation_unknown_kind():
    with pytest.raises(ValueError, match="sigmoid"):
        ops.activation(np.zeros(3), "sigmoid")


# ---------------------------------------------------------------------------
# linear


def test_linear_identity():
    out, _ = ops.linear(np.array([3.0, 7.0]), np.eye(2), np.zeros(2))
    assert out.tolist() == [3.0, 7.0]


def test_linear_hand_example():
    out, _ = ops.linear(np.array([3.0, 4.0]), np.array([[1.0, 2.0]]),
                        np.array([1.0]))
    assert out.tolist() == [12.0]


def test_linear_gradient_check(rng):
    x = rng.normal(size=5)
    w = rng.normal(size=(3, 5))
    b = rng.normal(size=3)
    up = rng.normal(size=3)

    def loss():
        out, _ = ops.linear(x, w, b)
        return float((out * up).sum())

    _, ctx = ops.linear(x, w, b)
    dx, dw, db = ops.linear_backward(ctx, up)
    assert max_rel_error(dx, numerical_gradient(loss, x)) < 1e-8
    assert max_rel_error(dw, numerical_gradient(loss, w)) < 1e-8
    assert max_rel_error(db, numerical_gradient(loss, b)) < 1e-8


def test_linear_shape_error():
    with pytest.raises(ValueError, match="dimension mismatch"):
        ops.linear(np.zeros(4), np.zeros((3, 5)), np.zeros(3))


# ---------------------------------------------------------------------------
# dropout


def test_dropout_eval_is_identity(rng):
    x = rng.normal(size=100)
    out, _ = ops.dropout(x, 0.5, "eval")
    assert np.array_equal(out, x)


def test_dropout_p_zero_is_identity(rng):
    x = rng.normal(size=100)
    out, _ = ops.dropout(x, 0.0, "train", rng)
    assert np.array_equal(out, x)


def test_dropout_scaling_and_mean(rng):
    x = np.ones(10_000)
    out, _ = ops.dropout(x, 0.5, "train", rng)
    nonzero = out[out != 0]
    assert np.all(nonzero == 2.0)
    assert 0.97 <= out.mean() <= 1.03


def test_dropout_backward_uses_same_mask(rng):
    x = np.ones(1000)
    out, ctx = ops.dropout(x, 0.3, "train", rng)
    g = ops.dropout_backward(ctx, np.ones(1000))
    assert np.array_equal(g != 0, out != 0)


def test_dropout_rejects_bad_p():
    with pytest.raises(ValueError):
        ops.dropout(np.zeros(3), 1.0, "train", np.random.default_rng(0))
    with pytest.raises(ValueError):
        ops.dropout(np.zeros(3), -0.1, "eval")


# ---------------------------------------------------------------------------
# mse


def test_mse_zero_for_equal(rng):
    x = rng.normal(size=7)
    loss, ctx = ops.mse_loss(x, x.copy())
    assert loss == 0.0
    assert np.all(ops.mse_loss_backward(ctx) == 0.0)


def test_mse_hand_example():
    loss, ctx = ops.mse_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0]))
    assert loss == 5.0
    assert ops.mse_loss_backward(ctx).tolist() == [-1.0, -3.0]


def test_mse_gradient_check(rng):
    pred = rng.normal(size=9)
    target = rng.normal(size=9)

    def loss():
        return ops.mse_loss(pred, target)[0]

    _, ctx = ops.mse_loss(pred, target)
    g = ops.mse_loss_backward(ctx)
    assert max_rel_error(g, numerical_gradient(loss, pred)) < 1e-9


def test_mse_rejects_mismatch():
    with pytest.raises(ValueError):
        ops.mse_loss(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        ops.mse_loss(np.zeros(0), np.zeros(0))


# ---------------------------------------------------------------------------
# determinism


def test_forwards_deterministic(rng):
    x = rng.normal(size=(2, 6, 6))
    w = rng.normal(size=(1, 2, 3, 3))
    b = rng.normal(size=1)
    a1, _ = ops.conv2d(x, w, b)
    a2, _ = ops.conv2d(x, w, b)
    assert np.array_equal(a1, a2)
    d1, _ = ops.dropout(x, 0.4, "train", np.random.default_rng(7))
    d2, _ = ops.dropout(x, 0.4, "train", np.random.default_rng(7))
    assert np.array_equal(d1, d2)
