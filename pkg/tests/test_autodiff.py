import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hidenet import autodiff as ad
from hidenet.autodiff import RunningStats, Tensor
from hidenet.optim import Adam, AdamState, adam_step

from fd import check_op, numeric_grad, rel_error

R = np.random.default_rng(1234)


def t64(a, grad=False):
    return Tensor(a, requires_grad=grad, dtype=np.float64)


# ---------------------------------------------------------------------------
# tensor basics


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.zeros(3, np.float64)).dtype == np.float32


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_forward_raises():
    with pytest.raises(FloatingPointError):
        ad.mul(Tensor([1e30]), Tensor([1e30]))


def test_grad_shape_matches_data():
    x = Tensor(R.normal(size=(2, 3)), requires_grad=True)
    ad.backward(ad.tensor_sum(ad.square(x)))
    assert x.grad.shape == x.shape


def test_backward_of_sum_is_ones():
    x = Tensor(R.normal(size=(3, 4)), requires_grad=True)
    ad.backward(ad.tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_disconnected_leaf_gets_zero_grad():
    x = Tensor(R.normal(size=3), requires_grad=True)
    y = Tensor(R.normal(size=3), requires_grad=True)
    ad.backward(ad.tensor_sum(x), [x, y])
    np.testing.assert_array_equal(y.grad, np.zeros(3))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(ad.scale(x, 2.0))


def test_topological_order_and_single_visit():
    x = Tensor(np.ones(2), requires_grad=True)
    a = ad.mul(x, x)
    b = ad.add(a, x)
    c = ad.add(b, a)
    order = ad.topological_order(ad.tensor_sum(c))
    pos = {id(n): i for i, n in enumerate(order)}
    assert len(pos) == len(order)
    for node in order:
        for parent in node._parents:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(node)]


def test_shared_subexpression_accumulates():
    # d/dx sum(x*x + x + x*x) = 4x + 1
    x0 = R.normal(size=5)
    x = t64(x0, True)
    a = ad.mul(x, x)
    ad.backward(ad.tensor_sum(ad.add(ad.add(a, x), a)))
    np.testing.assert_allclose(x.grad, 4 * x0 + 1, rtol=1e-12)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad and y.is_leaf
    assert ad.is_grad_enabled()


# ---------------------------------------------------------------------------
# conv2d


def test_conv_all_ones_overlap_counts():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = ad.conv2d(x, w, Tensor(np.zeros(1)), stride=1, padding=1).data[0, 0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4.0
    assert out[0, 1] == 6.0


def test_conv_1x1_identity():
    x = Tensor(R.normal(size=(2, 1, 5, 4)))
    out = ad.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_matches_direct_correlation():
    x = R.normal(size=(2, 3, 6, 5))
    w = R.normal(size=(4, 3, 3, 2))
    b = R.normal(size=4)
    out = ad.conv2d(t64(x), t64(w), t64(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = (6 + 2 - 3) // 2 + 1, (5 + 2 - 2) // 2 + 1
    ref = np.zeros((2, 4, ho, wo))
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    ref[n, o, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 2] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_gradient_against_finite_differences():
    x = R.normal(size=(1, 2, 5, 5))
    w = R.normal(size=(3, 2, 3, 3))
    b = R.normal(size=3)
    err = check_op(lambda x, w, b: ad.conv2d(x, w, b, stride=1, padding=1), x, w, b)
    assert err < 1e-3


@pytest.mark.parametrize("shape,stride,padding,k", [
    ((2, 3, 7, 6), 1, 0, 3), ((1, 2, 9, 9), 2, 1, 3), ((2, 1, 16, 8), 8, 0, 8), ((1, 4, 4, 4), 1, 1, 1),
])
def test_conv_gradient_shapes(shape, stride, padding, k):
    x = R.normal(size=shape)
    w = R.normal(size=(2, shape[1], k, k))
    assert check_op(lambda x, w: ad.conv2d(x, w, None, stride=stride, padding=padding), x, w) < 1e-3


def test_conv_errors():
    with pytest.raises(ValueError):
        ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        ad.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


# ---------------------------------------------------------------------------
# conv2d_transpose


def test_transpose_single_block_scatter():
    f = R.normal(size=(1, 1, 8, 8))
    out = ad.conv2d_transpose(t64(np.full((1, 1, 1, 1), 2.5)), t64(f), stride=8)
    np.testing.assert_allclose(out.data[0, 0], 2.5 * f[0, 0])


def test_transpose_inverts_orthonormal_bank():
    from hidenet.dct import dct_bank
    w = dct_bank().weight()
    x = Tensor(R.uniform(-1, 1, size=(2, 1, 16, 24)))
    coeffs = ad.conv2d(x, Tensor(w), stride=8)
    back = ad.conv2d_transpose(coeffs, Tensor(w), stride=8)
    assert np.abs(back.data - x.data).max() < 1e-5


def test_transpose_gradient():
    x = R.normal(size=(2, 3, 2, 3))
    w = R.normal(size=(3, 2, 4, 4))
    assert check_op(lambda x, w: ad.conv2d_transpose(x, w, stride=4), x, w) < 1e-3


def test_transpose_rejects_overlap():
    with pytest.raises(ValueError):
        ad.conv2d_transpose(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), stride=2)


# ---------------------------------------------------------------------------
# batchnorm


def _bn_params(c):
    return Tensor(np.ones(c)), Tensor(np.zeros(c))


def test_batchnorm_standardizes():
    x = Tensor(5.0 + 2.0 * R.standard_normal(size=(8, 3, 6, 6)))
    out = ad.batchnorm(x, *_bn_params(3), RunningStats.fresh(3), "train").data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)


def test_batchnorm_constant_channel_gives_shift():
    x = Tensor(np.full((4, 2, 3, 3), 7.0))
    shift = Tensor([0.25, -1.5])
    out = ad.batchnorm(x, Tensor(np.ones(2)), shift, None, "train").data
    np.testing.assert_allclose(out[:, 0], 0.25, atol=1e-6)
    np.testing.assert_allclose(out[:, 1], -1.5, atol=1e-6)


def test_batchnorm_train_gradient():
    x = R.normal(size=(3, 2, 4, 4))
    g = R.uniform(0.5, 1.5, 2)
    b = R.normal(size=2)
    assert check_op(lambda x, g, b: ad.batchnorm(x, g, b, None, "train"), x, g, b) < 1e-3


def test_batchnorm_eval_gradient():
    stats = RunningStats(np.array([0.3, -0.2]), np.array([1.7, 0.4]))
    x = R.normal(size=(2, 2, 3, 3))
    g, b = R.normal(size=2), R.normal(size=2)
    assert check_op(lambda x, g, b: ad.batchnorm(x, g, b, stats, "eval"), x, g, b) < 1e-3


def test_batchnorm_running_stats_update():
    stats = RunningStats.fresh(1, np.float64)
    x = R.normal(loc=3.0, size=(4, 1, 5, 5))
    ad.batchnorm(t64(x), t64(np.ones(1)), t64(np.zeros(1)), stats, "train")
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(), rtol=1e-12)
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(ddof=1), rtol=1e-12)
    assert stats.steps == 1


def test_batchnorm_eval_uses_running_stats_only():
    stats = RunningStats(np.array([1.0]), np.array([4.0]))
    x = Tensor(np.full((2, 1, 2, 2), 5.0))
    out = ad.batchnorm(x, *_bn_params(1), stats, "eval").data
    np.testing.assert_allclose(out, (5.0 - 1.0) / np.sqrt(4.0 + 1e-5), rtol=1e-6)


def test_batchnorm_eval_without_stats_errors():
    with pytest.raises(RuntimeError):
        ad.batchnorm(Tensor(np.ones((1, 1, 2, 2))), *_bn_params(1), None, "eval")


# ---------------------------------------------------------------------------
# pointwise, linear, pooling, softmax


def test_pool_relu_softmax_examples():
    assert ad.global_avg_pool(Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 1, 2, 2))).data[0, 0] == 2.5
    np.testing.assert_array_equal(ad.relu(Tensor([-3.0, 3.0])).data, [0.0, 3.0])
    np.testing.assert_array_equal(ad.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_linear_pool_composite_gradient():
    x = R.normal(size=(3, 4, 5, 5))
    w = R.normal(size=(4, 6))
    b = R.normal(size=6)
    assert check_op(lambda x, w, b: ad.linear(ad.global_avg_pool(x), w, b), x, w, b) < 1e-3


@pytest.mark.parametrize("name,fn,shapes", [
    ("add", ad.add, [(2, 3), (2, 3)]),
    ("add_broadcast", ad.add, [(2, 3, 4, 4), (1, 3, 1, 1)]),
    ("sub", ad.sub, [(3, 2), (3, 2)]),
    ("mul", ad.mul, [(2, 2, 3, 3), (2, 1, 3, 3)]),
    ("square", ad.square, [(4, 5)]),
    ("mean", ad.mean, [(3, 4, 2)]),
    ("sum", ad.tensor_sum, [(3, 4)]),
    ("scale", lambda x: ad.scale(x, -2.5), [(3,)]),
    ("softmax", ad.softmax, [(5, 2)]),
    ("log_softmax", ad.log_softmax, [(4, 2)]),
    ("reshape", lambda x: ad.reshape(x, (6, -1)), [(2, 3, 4)]),
    ("concat", lambda a, b: ad.concat([a, b], axis=1), [(2, 3, 4, 4), (2, 1, 4, 4)]),
    ("pad", lambda x: ad.pad(x, (1, 2), (3, 0)), [(2, 1, 4, 5)]),
    ("pad_edge", lambda x: ad.pad(x, (2, 2), mode="edge"), [(1, 2, 3, 4)]),
    ("crop", lambda x: ad.crop(x, 1, 2, 3, 2), [(2, 2, 5, 6)]),
    ("crop_windows", lambda x: ad.crop_windows(x, [(0, 1), (2, 0)], 3, 3), [(2, 1, 5, 4)]),
    ("broadcast", lambda v: ad.broadcast_channels(v, (3, 2)), [(2, 4)]),
    ("pool", ad.global_avg_pool, [(2, 3, 4, 5)]),
    ("linear", ad.linear, [(3, 4), (4, 2), (2,)]),
])
def test_op_gradients(name, fn, shapes):
    inputs = [R.normal(size=s) for s in shapes]
    assert check_op(fn, *inputs) < 1e-3, name


def test_relu_gradient_away_from_kink():
    x = R.normal(size=(4, 6))
    x[np.abs(x) < 0.05] = 0.5
    assert check_op(ad.relu, x) < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.integers(1, 5))
def test_softmax_rows_sum_to_one(row, n):
    p = ad.softmax(Tensor(np.tile(row, (n, 1)))).data
    assert np.all(p > 0) and np.all(p < 1) or np.allclose(np.sort(p, axis=1), [[0, 1]] * n, atol=1e-6)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 7), st.integers(3, 7), st.integers(0, 2 ** 31 - 1))
def test_conv_forward_is_bitwise_deterministic(n, c, h, w, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(n, c, h, w)))
    k = Tensor(rng.normal(size=(2, c, 3, 3)))
    a = ad.conv2d(x, k, padding=1).data
    b = ad.conv2d(x, k, padding=1).data
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_is_lr_sign():
    p = Tensor(np.zeros(4), requires_grad=True, dtype=np.float64)
    p.grad = np.array([3.0, -0.5, 100.0, -1e-2])
    adam_step({"p": p}, AdamState())
    np.testing.assert_allclose(p.data, -1e-3 * np.sign(p.grad), rtol=1e-5)


def test_adam_zero_grad_keeps_params():
    p = Tensor(R.normal(size=3), requires_grad=True)
    before = p.data.copy()
    p.grad = np.zeros(3, np.float32)
    state = adam_step({"p": p}, AdamState())
    np.testing.assert_array_equal(p.data, before)
    assert state.t == 1 and np.all(state.v["p"] >= 0)


def test_adam_rejects_nan():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([np.nan, 0.0], np.float32)
    with pytest.raises(FloatingPointError):
        adam_step({"p": p}, AdamState())
    np.testing.assert_array_equal(p.data, 0.0)


def test_adam_matches_reference_formula():
    g_seq = [np.array([0.3, -1.2]), np.array([-0.1, 0.4]), np.array([2.0, 0.0])]
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True, dtype=np.float64)
    state = AdamState(lr=0.01)
    w, m, v = p.data.copy(), np.zeros(2), np.zeros(2)
    for t, g in enumerate(g_seq, 1):
        p.grad = g
        adam_step({"p": p}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, w, rtol=1e-12)


def test_adam_converges_on_quadratic():
    w = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
    opt = Adam({"w": w}, lr=1e-2)
    for _ in range(2000):
        opt.zero_grad()
        ad.backward(ad.tensor_sum(ad.square(ad.sub(w, 3.0))))
        opt.step()
    assert abs(w.item() - 3.0) < 1e-2


def test_numeric_grad_oracle_sanity():
    # the oracle itself, on a function with a known derivative
    x0 = R.normal(size=4)
    g = numeric_grad(lambda x: float(np.sum(np.sin(x))), x0)
    assert rel_error(g, np.cos(x0)) < 1e-6
