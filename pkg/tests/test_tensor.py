import numpy as np
import pytest

from radarmesh import tensor as T
from radarmesh.gradcheck import check_gradients, max_rel_err


def arr(data, requires_grad=False):
    return T.Array(np.asarray(data, dtype=np.float32), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    eye = np.eye(2, dtype=np.float32)
    out = T.matmul(arr(eye), arr(eye))
    np.testing.assert_array_equal(out.data, eye)


def test_matmul_hand_case():
    out = T.matmul(arr([[1, 2], [3, 4]]), arr([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_shape_mismatch():
    with pytest.raises(T.ShapeError):
        T.matmul(arr(np.zeros((2, 3))), arr(np.zeros((2, 3))))


def test_matmul_grad_of_sum_is_ones_times_bT():
    rng = np.random.default_rng(0)
    a = arr(rng.standard_normal((5, 7)), requires_grad=True)
    b = arr(rng.standard_normal((7, 3)))
    T.backward(T.sum_all(T.matmul(a, b)))
    expected = np.ones((5, 3), dtype=np.float32) @ b.data.T
    np.testing.assert_allclose(a.grad, expected, rtol=1e-6)

    res = check_gradients(
        lambda leaves: T.sum_all(T.matmul(leaves["a"], T.Array(b.data.astype(leaves["a"].data.dtype)))),
        {"a": a.data}, wrt=["a"])
    assert max_rel_err(res) < 1e-4


# ---------------------------------------------------------------------------
# softmax


def test_softmax_symmetry():
    out = T.softmax(arr([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)


def test_softmax_overflow_stability():
    out = T.softmax(arr([1000.0, 0.0]))
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-6)


def test_softmax_reference_values():
    # exp([1,2,3]) normalized, evaluated at float64
    out = T.softmax(arr([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(out.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-6)


def test_softmax_rows_sum_to_one_large_inputs():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1e4, 1e4, size=(6, 8)).astype(np.float32)
    out = T.softmax(arr(x), axis=-1)
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(6), atol=1e-6)
    assert (out.data >= 0).all() and (out.data <= 1).all()


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_one_by_one_identity():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 4, 4)).astype(np.float32)
    k = np.ones((1, 1, 1, 1), dtype=np.float32)
    out = T.conv2d(arr(x), arr(k))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_all_ones():
    x = np.ones((1, 5, 5), dtype=np.float32)
    k = np.ones((1, 1, 3, 3), dtype=np.float32)
    out = T.conv2d(arr(x), arr(k))
    assert out.shape == (1, 3, 3)
    np.testing.assert_array_equal(out.data, np.full((1, 3, 3), 9.0, dtype=np.float32))


def test_conv2d_stride_padding_shapes():
    x = np.zeros((3, 8, 8), dtype=np.float32)
    k = np.zeros((4, 3, 3, 3), dtype=np.float32)
    out = T.conv2d(arr(x), arr(k), stride=2, padding=1)
    assert out.shape == (4, 4, 4)


def test_conv2d_gradcheck():
    rng = np.random.default_rng(3)
    leaves = {
        "x": rng.standard_normal((3, 8, 8)).astype(np.float32),
        "k": (rng.standard_normal((2, 3, 3, 3)) * 0.5).astype(np.float32),
        "b": rng.standard_normal(2).astype(np.float32),
    }

    def build(l):
        return T.sum_all(T.relu(T.conv2d(l["x"], l["k"], l["b"], stride=2, padding=1)))

    res = check_gradients(build, leaves, entries_per_array=6, seed=0)
    assert max_rel_err(res) < 1e-4


# ---------------------------------------------------------------------------
# segment_max


def test_segment_max_single_row():
    out = T.segment_max(arr([[2.5, -1.0]]), [0], 1)
    np.testing.assert_array_equal(out.data, [[2.5, -1.0]])


def test_segment_max_basic():
    out = T.segment_max(arr([[1.0], [5.0], [3.0]]), [0, 0, 1], 2)
    np.testing.assert_array_equal(out.data, [[5.0], [3.0]])


def test_segment_max_empty_segment_zeros():
    out = T.segment_max(arr([[1.0, 2.0]]), [2], 3)
    np.testing.assert_array_equal(out.data, [[0, 0], [0, 0], [1, 2]])


def test_segment_max_grad_routes_to_first_argmax():
    vals = arr([[1.0], [5.0], [5.0], [3.0]], requires_grad=True)
    out = T.segment_max(vals, [0, 0, 0, 1], 2)
    T.backward(T.sum_all(out))
    np.testing.assert_array_equal(vals.grad, [[0.0], [1.0], [0.0], [1.0]])


def test_segment_max_gradcheck():
    rng = np.random.default_rng(4)
    leaves = {"v": rng.standard_normal((12, 5)).astype(np.float32)}
    ids = rng.integers(0, 4, size=12)

    def build(l):
        return T.sum_all(T.mul(T.segment_max(l["v"], ids, 4), l["v0"]))

    leaves["v0"] = rng.standard_normal((4, 5)).astype(np.float32)
    res = check_gradients(build, leaves, wrt=["v"], seed=1)
    assert max_rel_err(res) < 1e-4


# ---------------------------------------------------------------------------
# layer_norm


def test_layer_norm_constant_row_zeroes():
    g, b = arr(np.ones(4)), arr(np.zeros(4))
    out = T.layer_norm(arr([[7.0, 7.0, 7.0, 7.0]]), g, b)
    np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-6)


def test_layer_norm_two_values():
    g, b = arr(np.ones(2)), arr(np.zeros(2))
    out = T.layer_norm(arr([[1.0, 3.0]]), g, b)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_gradcheck():
    rng = np.random.default_rng(5)
    leaves = {
        "x": rng.standard_normal((4, 8)).astype(np.float32),
        "g": rng.standard_normal(8).astype(np.float32),
        "b": rng.standard_normal(8).astype(np.float32),
    }

    def build(l):
        w = T.Array(np.linspace(0.5, 1.5, 32).reshape(8, 4).astype(l["x"].data.dtype))
        return T.sum_all(T.matmul(T.layer_norm(l["x"], l["g"], l["b"]), w))

    res = check_gradients(build, leaves, seed=2)
    assert max_rel_err(res) < 1e-4


# ---------------------------------------------------------------------------
# backward plumbing


def test_backward_sum_gives_ones():
    x = arr(np.arange(6).reshape(2, 3), requires_grad=True)
    T.backward(T.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3), dtype=np.float32))


def test_backward_elementwise_square():
    x = arr([[1.0, -2.0], [3.0, 0.5]], requires_grad=True)
    T.backward(T.sum_all(T.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-6)


def test_backward_twice_accumulates_exactly_double():
    x = arr([[1.0, -2.0], [3.0, 0.5]], requires_grad=True)
    loss = T.sum_all(T.mul(x, x))
    T.backward(loss)
    once = x.grad.copy()
    T.backward(loss)
    np.testing.assert_array_equal(x.grad, 2 * once)


def test_backward_requires_scalar():
    x = arr([[1.0, 2.0]], requires_grad=True)
    with pytest.raises(T.GraphError):
        T.backward(T.mul(x, x))


def test_shared_subexpression_accumulates():
    x = arr([2.0], requires_grad=True)
    y = T.add(T.mul(x, x), T.mul(x, x))
    T.backward(T.sum_all(y))
    np.testing.assert_allclose(x.grad, [8.0])


@pytest.mark.filterwarnings("ignore:overflow")
def test_nonfinite_raises_with_op_name():
    big = arr(np.full((2, 2), 3e38, dtype=np.float32))
    with pytest.raises(T.GraphError, match="add"):
        T.add(big, big)


# ---------------------------------------------------------------------------
# remaining ops: FD sweep + determinism


def test_misc_ops_gradcheck():
    rng = np.random.default_rng(6)
    leaves = {
        "a": rng.standard_normal((5, 6)).astype(np.float32),
        "b": rng.standard_normal((5, 6)).astype(np.float32),
        "bias": rng.standard_normal(6).astype(np.float32),
    }

    def build(l):
        x = T.add(l["a"], l["bias"])
        x = T.sub(x, l["b"])
        x = T.mul(x, l["a"])
        x = T.concat([x, T.scale(x, -0.5)], axis=0)
        x = T.narrow(x, 2, 8)
        x = T.take(x, [0, 2, 4, 1])
        x = T.softmax(T.scale(x, 0.7), axis=-1)
        x = T.reshape(x, (8, 3))
        x = T.absolute(T.sub(x, T.Array(np.full((8, 3), 0.1, dtype=x.data.dtype))))
        x = T.add(T.sigmoid(x), x)
        return T.mean_all(T.mul(x, x))

    res = check_gradients(build, leaves, seed=3, entries_per_array=8)
    assert max_rel_err(res) < 1e-4


def test_mask_rows_zeroes_and_blocks_grad():
    x = arr(np.ones((4, 3)), requires_grad=True)
    keep = np.array([True, False, True, False])
    out = T.mask_rows(x, keep)
    np.testing.assert_array_equal(out.data[1], np.zeros(3))
    T.backward(T.sum_all(out))
    np.testing.assert_array_equal(x.grad[1], np.zeros(3))
    np.testing.assert_array_equal(x.grad[0], np.ones(3))


def test_mean_axis_and_stop_grad():
    x = arr(np.arange(12, dtype=np.float32).reshape(3, 4), requires_grad=True)
    m = T.mean_axis(x, axis=0)
    np.testing.assert_allclose(m.data, x.data.mean(axis=0))
    frozen = T.stop_grad(x)
    assert not frozen.requires_grad
    T.backward(T.sum_all(m))
    np.testing.assert_allclose(x.grad, np.full((3, 4), 1 / 3, dtype=np.float32))


def test_ops_deterministic_bitwise():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((16, 16)).astype(np.float32)
    b = rng.standard_normal((16, 16)).astype(np.float32)

    def run():
        x = T.matmul(arr(a), arr(b))
        x = T.softmax(x, axis=-1)
        x = T.layer_norm(x, arr(np.ones(16)), arr(np.zeros(16)))
        return T.sum_all(x).data.copy()

    assert run().tobytes() == run().tobytes()


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_grad_keeps_params():
    params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
    state = T.AdamState.init(params)
    T.adam_step(params, {"w": np.zeros(2, dtype=np.float32)}, state, lr=0.1)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    params = {"w": np.zeros(3, dtype=np.float32)}
    state = T.AdamState.init(params)
    g = np.array([0.5, -2.0, 1e-3], dtype=np.float32)
    T.adam_step(params, {"w": g}, state, lr=0.01)
    np.testing.assert_allclose(params["w"], -0.01 * np.sign(g), rtol=1e-4)


def test_adam_quadratic_convergence_matches_scalar_recurrence():
    target = np.array([0.3, -1.2, 2.0], dtype=np.float32)
    params = {"w": np.zeros(3, dtype=np.float32)}
    state = T.AdamState.init(params)
    for _ in range(200):
        g = 2.0 * (params["w"] - target)
        T.adam_step(params, {"w": g.astype(np.float32)}, state, lr=0.05)
    np.testing.assert_allclose(params["w"], target, atol=1e-3)

    # independent scalar recurrence, same precision
    w = np.float32(0.0)
    m = np.float32(0.0)
    v = np.float32(0.0)
    b1, b2, eps, lr = np.float32(0.9), np.float32(0.999), np.float32(1e-8), np.float32(0.05)
    tgt = np.float32(0.3)
    for t in range(1, 201):
        g = np.float32(2.0) * (w - tgt)
        m = b1 * m + (np.float32(1) - b1) * g
        v = b2 * v + (np.float32(1) - b2) * g * g
        mhat = m / np.float32(1.0 - 0.9 ** t)
        vhat = v / np.float32(1.0 - 0.999 ** t)
        w = w - lr * mhat / (np.sqrt(vhat) + eps)
    assert abs(float(params["w"][0]) - float(w)) < 1e-6


def test_adam_shape_mismatch():
    params = {"w": np.zeros(3, dtype=np.float32)}
    state = T.AdamState.init(params)
    with pytest.raises(T.ShapeError):
        T.adam_step(params, {"w": np.zeros(2, dtype=np.float32)}, state, lr=0.1)
