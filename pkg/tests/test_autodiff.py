"""Unit tests for the autodiff engine: forward oracles, backward checks,
engine invariants, and the optimizer."""

import numpy as np
import pytest
from gradcheck import check_gradients
from scipy.signal import correlate2d

from sense_siamese import autodiff as ad
from sense_siamese.errors import ConfigError, InvalidInput, NumericsError, ShapeError


def t64(arr, grad=True):
    return ad.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def rand64(rng, *shape):
    return ad.Tensor(rng.standard_normal(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# engine behavior
# ---------------------------------------------------------------------------


def test_backward_simple_chain():
    x = t64([2.0])
    y = t64([5.0])
    out = ad.tsum(ad.mul(x, y))
    out.backward()
    assert np.allclose(x.grad, [5.0])
    assert np.allclose(y.grad, [2.0])


def test_grad_accumulates_on_reuse():
    x = t64([3.0])
    out = ad.tsum(ad.add(ad.mul(x, x), x))  # x^2 + x -> 2x + 1
    out.backward()
    assert np.allclose(x.grad, [7.0])


def test_backward_requires_scalar_root():
    x = t64([1.0, 2.0])
    y = ad.mul(x, x)
    with pytest.raises(InvalidInput):
        y.backward()


def test_backward_twice_rejected():
    x = t64([1.0])
    out = ad.tsum(ad.mul(x, x))
    out.backward()
    with pytest.raises(InvalidInput):
        out.backward()


def test_constant_branches_fold_away():
    a = ad.Tensor(np.ones(3))
    b = ad.Tensor(np.ones(3))
    out = ad.add(a, b)
    assert out._parents == ()
    assert not out.requires_grad


def test_dtype_preserved_float32_and_float64():
    for dt in (np.float32, np.float64):
        x = ad.Tensor(np.ones((4, 3), dtype=dt), requires_grad=True)
        y = ad.tmean(ad.relu(ad.mul(x, 2.0)))
        assert y.dtype == dt
        y.backward()
        assert x.grad.dtype == dt


def test_int_input_coerced_to_float32():
    x = ad.Tensor(np.arange(4))
    assert x.dtype == np.float32


# ---------------------------------------------------------------------------
# primitive gradients
# ---------------------------------------------------------------------------


def test_arithmetic_gradients_with_broadcasting():
    rng = np.random.default_rng(0)
    a = rand64(rng, 4, 5)
    b = rand64(rng, 5)  # broadcast along rows
    r = ad.Tensor(rng.standard_normal((4, 5)))
    check_gradients(
        lambda: ad.tsum(ad.mul(ad.add(ad.mul(a, b), ad.sub(a, b)), r)),
        {"a": a, "b": b},
    )


def test_matmul_gradients():
    rng = np.random.default_rng(1)
    a = rand64(rng, 3, 4)
    b = rand64(rng, 4, 2)
    r = ad.Tensor(rng.standard_normal((3, 2)))
    check_gradients(lambda: ad.tsum(ad.mul(ad.matmul(a, b), r)), {"a": a, "b": b})


def test_matmul_shape_errors():
    rng = np.random.default_rng(2)
    with pytest.raises(ShapeError):
        ad.matmul(rand64(rng, 3, 4), rand64(rng, 3, 2))
    with pytest.raises(ShapeError):
        ad.matmul(rand64(rng, 3), rand64(rng, 3, 2))


def test_relu_gradients_away_from_kink():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((6, 6))
    data[np.abs(data) < 0.1] = 0.5  # keep clear of the nondifferentiable point
    x = t64(data)
    r = ad.Tensor(rng.standard_normal((6, 6)))
    check_gradients(lambda: ad.tsum(ad.mul(ad.relu(x), r)), {"x": x})


def test_relu_zero_gets_zero_grad():
    x = t64([0.0, -1.0, 2.0])
    out = ad.tsum(ad.relu(x))
    out.backward()
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


def test_sum_mean_gradients_with_axes():
    rng = np.random.default_rng(4)
    x = rand64(rng, 3, 4, 5)
    r0 = ad.Tensor(rng.standard_normal((4, 5)))
    check_gradients(lambda: ad.tsum(ad.mul(ad.tsum(x, axis=0), r0)), {"x": x})
    r1 = ad.Tensor(rng.standard_normal((3, 5)))
    check_gradients(lambda: ad.tsum(ad.mul(ad.tmean(x, axis=1), r1)), {"x": x})
    check_gradients(lambda: ad.tmean(x), {"x": x})


def test_sum_uses_float64_accumulation():
    x = ad.Tensor(np.full(10_000_000, 1e-4, dtype=np.float32))
    naive = np.float32(0)
    for chunk in np.split(x.data, 100):
        naive += chunk.sum(dtype=np.float32)
    accurate = ad.tsum(x).item()
    assert abs(accurate - 1000.0) < 1e-3
    # the pure float32 running sum drifts far more than our reduction
    assert abs(float(naive) - 1000.0) > abs(accurate - 1000.0)


def test_reshape_slice_concat_gradients():
    rng = np.random.default_rng(5)
    x = rand64(rng, 4, 6)
    r = ad.Tensor(rng.standard_normal((2, 12)))
    check_gradients(lambda: ad.tsum(ad.mul(ad.reshape(x, (2, 12)), r)), {"x": x})

    r2 = ad.Tensor(rng.standard_normal((2, 6)))
    check_gradients(lambda: ad.tsum(ad.mul(ad.slice_axis(x, 0, 1, 3), r2)), {"x": x})

    y = rand64(rng, 4, 3)
    r3 = ad.Tensor(rng.standard_normal((4, 9)))
    check_gradients(
        lambda: ad.tsum(ad.mul(ad.concat([x, y], axis=1), r3)), {"x": x, "y": y}
    )


def test_slice_axis_bounds():
    x = t64(np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        ad.slice_axis(x, 0, 2, 5)
    with pytest.raises(ShapeError):
        ad.slice_axis(x, 1, 2, 2)


def test_row_split_reconstructs_batches():
    """Stack-two-halves then slice is how the twin towers share weights."""
    rng = np.random.default_rng(6)
    x1 = rng.standard_normal((3, 4))
    x2 = rng.standard_normal((3, 4))
    both = ad.Tensor(np.concatenate([x1, x2], axis=0), requires_grad=True)
    top = ad.slice_axis(both, 0, 0, 3)
    bot = ad.slice_axis(both, 0, 3, 6)
    assert np.array_equal(top.data, x1)
    assert np.array_equal(bot.data, x2)
    out = ad.tsum(ad.sub(top, bot))
    out.backward()
    assert np.allclose(both.grad[:3], 1.0)
    assert np.allclose(both.grad[3:], -1.0)


# ---------------------------------------------------------------------------
# conv / pool
# ---------------------------------------------------------------------------


def test_conv2d_forward_matches_scipy():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
    assert out.shape == (2, 4, 6, 5)
    for n in range(2):
        for f in range(4):
            acc = np.zeros((6, 5))
            for c in range(3):
                acc += correlate2d(x[n, c], w[f, c], mode="same")
            assert np.allclose(out[n, f], acc + b[f], atol=1e-10)


def test_conv2d_5x5_forward_matches_scipy():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 1, 9, 8))
    w = rng.standard_normal((2, 1, 5, 5))
    b = np.zeros(2)
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
    for f in range(2):
        ref = correlate2d(x[0, 0], w[f, 0], mode="same")
        assert np.allclose(out[0, f], ref, atol=1e-10)


def test_conv2d_gradients():
    rng = np.random.default_rng(9)
    x = rand64(rng, 2, 3, 6, 5)
    w = rand64(rng, 4, 3, 3, 3)
    b = rand64(rng, 4)
    r = ad.Tensor(rng.standard_normal((2, 4, 6, 5)))
    check_gradients(
        lambda: ad.tsum(ad.mul(ad.conv2d(x, w, b), r)),
        {"x": x, "w": w, "b": b},
    )


def test_conv2d_shape_errors():
    rng = np.random.default_rng(10)
    with pytest.raises(ShapeError):
        ad.conv2d(rand64(rng, 2, 3, 6, 5), rand64(rng, 4, 2, 3, 3), rand64(rng, 4))
    with pytest.raises(ShapeError):  # even kernel
        ad.conv2d(rand64(rng, 2, 3, 6, 5), rand64(rng, 4, 3, 2, 2), rand64(rng, 4))
    with pytest.raises(ShapeError):  # bad bias
        ad.conv2d(rand64(rng, 2, 3, 6, 5), rand64(rng, 4, 3, 3, 3), rand64(rng, 3))


def test_maxpool_forward_naive_and_floor():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 3, 5, 7))  # odd dims: floor to 2 x 3
    out = ad.maxpool2d(ad.Tensor(x)).data
    assert out.shape == (2, 3, 2, 3)
    for n in range(2):
        for c in range(3):
            for i in range(2):
                for j in range(3):
                    block = x[n, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                    assert out[n, c, i, j] == block.max()


def test_maxpool_tie_routes_to_first():
    x = ad.Tensor(np.ones((1, 1, 2, 2), dtype=np.float64), requires_grad=True)
    out = ad.tsum(ad.maxpool2d(x))
    out.backward()
    expected = np.zeros((1, 1, 2, 2))
    expected[0, 0, 0, 0] = 1.0  # row-major first among equals
    assert np.array_equal(x.grad, expected)


def test_maxpool_gradients():
    rng = np.random.default_rng(12)
    x = rand64(rng, 2, 2, 6, 6)
    r = ad.Tensor(rng.standard_normal((2, 2, 3, 3)))
    check_gradients(lambda: ad.tsum(ad.mul(ad.maxpool2d(x), r)), {"x": x})


def test_maxpool_cropped_region_gets_no_grad():
    rng = np.random.default_rng(13)
    data = rng.standard_normal((1, 1, 5, 5))
    data[0, 0, 4, :] = 100.0  # huge values in the cropped row must not matter
    data[0, 0, :, 4] = 100.0
    x = t64(data)
    out = ad.tsum(ad.maxpool2d(x))
    out.backward()
    assert np.all(x.grad[0, 0, 4, :] == 0)
    assert np.all(x.grad[0, 0, :, 4] == 0)


# ---------------------------------------------------------------------------
# batchnorm
# ---------------------------------------------------------------------------


def test_batchnorm_train_forward_oracle():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((8, 3, 4, 5))
    gamma = rng.standard_normal(3)
    beta = rng.standard_normal(3)
    state = ad.BatchNormState.create(3)
    out = ad.batchnorm(ad.Tensor(x), ad.Tensor(gamma), ad.Tensor(beta), state, "train").data
    for c in range(3):
        sl = x[:, c]
        mu, var = sl.mean(), sl.var()  # biased
        ref = gamma[c] * (sl - mu) / np.sqrt(var + 1e-5) + beta[c]
        assert np.allclose(out[:, c], ref, atol=1e-5)
        assert abs(state.running_mean[c] - 0.1 * mu) < 1e-6
        assert abs(state.running_var[c] - (0.9 * 1.0 + 0.1 * var)) < 1e-6


def test_batchnorm_running_stats_blend():
    state = ad.BatchNormState.create(2)
    x = np.zeros((4, 2)) + np.array([2.0, -1.0])
    ad.batchnorm(ad.Tensor(x), ad.Tensor(np.ones(2)), ad.Tensor(np.zeros(2)), state, "train")
    assert np.allclose(state.running_mean, [0.2, -0.1], atol=1e-7)
    # constant batch: variance 0 -> running var shrinks toward 0
    assert np.allclose(state.running_var, [0.9, 0.9], atol=1e-7)


def test_batchnorm_infer_uses_running_stats():
    state = ad.BatchNormState.create(2)
    state.running_mean = np.array([1.0, -1.0], dtype=np.float32)
    state.running_var = np.array([4.0, 0.25], dtype=np.float32)
    x = np.array([[3.0, 0.0]])
    out = ad.batchnorm(
        ad.Tensor(x), ad.Tensor(np.ones(2)), ad.Tensor(np.zeros(2)), state, "infer"
    ).data
    assert np.allclose(out, [[2.0 / np.sqrt(4.0 + 1e-5), 1.0 / np.sqrt(0.25 + 1e-5)]], atol=1e-5)


def test_batchnorm_train_needs_batch():
    state = ad.BatchNormState.create(2)
    with pytest.raises(InvalidInput):
        ad.batchnorm(
            ad.Tensor(np.zeros((1, 2))), ad.Tensor(np.ones(2)), ad.Tensor(np.zeros(2)),
            state, "train",
        )


def test_batchnorm_gradients_train_4d():
    rng = np.random.default_rng(15)
    x = rand64(rng, 4, 3, 3, 2)
    gamma = t64(rng.uniform(0.5, 1.5, 3))
    beta = rand64(rng, 3)
    r = ad.Tensor(rng.standard_normal((4, 3, 3, 2)))

    def build():
        state = ad.BatchNormState.create(3)  # fresh so side effects can't leak
        return ad.tsum(ad.mul(ad.batchnorm(x, gamma, beta, state, "train"), r))

    check_gradients(build, {"x": x, "gamma": gamma, "beta": beta})


def test_batchnorm_gradients_sequence_axis():
    rng = np.random.default_rng(16)
    x = rand64(rng, 3, 5, 4)  # (batch, time, features)
    gamma = t64(rng.uniform(0.5, 1.5, 4))
    beta = rand64(rng, 4)
    r = ad.Tensor(rng.standard_normal((3, 5, 4)))

    def build():
        state = ad.BatchNormState.create(4)
        return ad.tsum(ad.mul(ad.batchnorm(x, gamma, beta, state, "train", channel_axis=2), r))

    check_gradients(build, {"x": x, "gamma": gamma, "beta": beta})


def test_batchnorm_gradients_infer_mode():
    rng = np.random.default_rng(17)
    x = rand64(rng, 4, 3)
    gamma = t64(rng.uniform(0.5, 1.5, 3))
    beta = rand64(rng, 3)
    state = ad.BatchNormState.create(3)
    state.running_mean = rng.standard_normal(3).astype(np.float32)
    state.running_var = rng.uniform(0.5, 2.0, 3).astype(np.float32)
    r = ad.Tensor(rng.standard_normal((4, 3)))
    check_gradients(
        lambda: ad.tsum(ad.mul(ad.batchnorm(x, gamma, beta, state, "infer"), r)),
        {"x": x, "gamma": gamma, "beta": beta},
    )


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------


def test_dropout_infer_is_identity():
    x = t64(np.ones((3, 3)))
    out = ad.dropout(x, 0.5, "infer", np.random.default_rng(0))
    assert out is x


def test_dropout_train_scales_survivors():
    rng = np.random.default_rng(18)
    x = ad.Tensor(np.ones((200, 200)), requires_grad=True)
    out = ad.dropout(x, 0.25, "train", rng)
    vals = np.unique(out.data)
    assert set(np.round(vals, 6)) <= {0.0, np.round(1 / 0.75, 6)}
    # inverted scaling keeps the expectation near the input
    assert abs(out.data.mean() - 1.0) < 0.01


def test_dropout_rate_validation():
    x = t64(np.ones(3))
    with pytest.raises(ConfigError):
        ad.dropout(x, 1.0, "train", np.random.default_rng(0))
    with pytest.raises(ConfigError):
        ad.dropout(x, -0.1, "train", np.random.default_rng(0))


def test_dropout_gradients_fixed_mask():
    rng = np.random.default_rng(19)
    x = rand64(rng, 5, 4)
    r = ad.Tensor(rng.standard_normal((5, 4)))

    def build():
        g = np.random.default_rng(99)  # same mask on every rebuild
        return ad.tsum(ad.mul(ad.dropout(x, 0.4, "train", g), r))

    check_gradients(build, {"x": x})


# ---------------------------------------------------------------------------
# lstm
# ---------------------------------------------------------------------------


def naive_lstm(x, wx, wh, b):
    B, T, D = x.shape
    H = wx.shape[1] // 4
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    outs = []
    for t in range(T):
        z = x[:, t] @ wx + h @ wh + b
        i, f, g, o = z[:, :H], z[:, H : 2 * H], z[:, 2 * H : 3 * H], z[:, 3 * H :]
        i, f, g, o = sig(i), sig(f), np.tanh(g), sig(o)
        c = f * c + i * g
        h = o * np.tanh(c)
        outs.append(h)
    return np.stack(outs, axis=1)


def test_lstm_forward_matches_naive():
    rng = np.random.default_rng(20)
    x = rng.standard_normal((3, 6, 4))
    wx = rng.standard_normal((4, 20)) * 0.5
    wh = rng.standard_normal((5, 20)) * 0.5
    b = rng.standard_normal(20) * 0.1
    out = ad.lstm_layer(ad.Tensor(x), ad.Tensor(wx), ad.Tensor(wh), ad.Tensor(b)).data
    assert out.shape == (3, 6, 5)
    assert np.allclose(out, naive_lstm(x, wx, wh, b), atol=1e-6)


def test_lstm_gradients():
    rng = np.random.default_rng(21)
    x = rand64(rng, 2, 4, 3)
    wx = t64(rng.standard_normal((3, 20)) * 0.5)
    wh = t64(rng.standard_normal((5, 20)) * 0.5)
    b = t64(rng.standard_normal(20) * 0.1)
    r = ad.Tensor(rng.standard_normal((2, 4, 5)))
    check_gradients(
        lambda: ad.tsum(ad.mul(ad.lstm_layer(x, wx, wh, b), r)),
        {"x": x, "wx": wx, "wh": wh, "b": b},
    )


def test_lstm_shape_errors():
    rng = np.random.default_rng(22)
    with pytest.raises(ShapeError):
        ad.lstm_layer(rand64(rng, 2, 4), rand64(rng, 4, 20), rand64(rng, 5, 20), rand64(rng, 20))
    with pytest.raises(ShapeError):
        ad.lstm_layer(
            rand64(rng, 2, 4, 3), rand64(rng, 3, 21), rand64(rng, 5, 20), rand64(rng, 20)
        )
    with pytest.raises(ShapeError):
        ad.lstm_layer(
            rand64(rng, 2, 4, 3), rand64(rng, 3, 20), rand64(rng, 4, 20), rand64(rng, 20)
        )


# ---------------------------------------------------------------------------
# metric head
# ---------------------------------------------------------------------------


def test_euclidean_forward_oracle():
    rng = np.random.default_rng(23)
    a = rng.standard_normal((7, 5))
    b = rng.standard_normal((7, 5))
    d = ad.euclidean_distance(ad.Tensor(a), ad.Tensor(b)).data
    assert np.allclose(d, np.linalg.norm(a - b, axis=1), atol=1e-7)


def test_euclidean_zero_distance_subgradient():
    a = t64(np.ones((2, 3)))
    b = t64(np.ones((2, 3)))
    d = ad.euclidean_distance(a, b)
    assert np.array_equal(d.data, [0.0, 0.0])
    ad.tsum(d).backward()
    assert np.all(a.grad == 0)
    assert np.all(b.grad == 0)


def test_euclidean_gradients():
    rng = np.random.default_rng(24)
    a = rand64(rng, 4, 6)
    b = rand64(rng, 4, 6)
    r = ad.Tensor(rng.standard_normal(4))
    check_gradients(
        lambda: ad.tsum(ad.mul(ad.euclidean_distance(a, b), r)), {"a": a, "b": b}
    )


def test_contrastive_frozen_values():
    d = ad.Tensor(np.array([0.3, 0.3, 2.0, 0.0], dtype=np.float64))
    ind = np.array([1, 0, 0, 1])
    # per-pair: 0.09, 0.49, 0.0 (past margin), 0.0 (coincident) -> mean 0.145
    loss = ad.contrastive_loss(d, ind, margin=1.0)
    assert abs(loss.item() - 0.145) < 1e-12


def test_contrastive_exact_zeros():
    d = ad.Tensor(np.array([0.0, 1.0, 3.7], dtype=np.float64))
    loss = ad.contrastive_loss(d, np.array([1, 0, 0]), margin=1.0)
    assert loss.item() == 0.0


def test_contrastive_gradient_closed_form():
    rng = np.random.default_rng(25)
    d = ad.Tensor(rng.uniform(0.05, 1.8, 12), requires_grad=True)
    ind = rng.integers(0, 2, 12)
    m = 1.0
    loss = ad.contrastive_loss(d, ind, margin=m)
    loss.backward()
    expected = (2 * ind * d.data - 2 * (1 - ind) * np.maximum(0.0, m - d.data)) / 12
    assert np.allclose(d.grad, expected, atol=1e-12)


def test_contrastive_validation():
    d = ad.Tensor(np.array([0.5]))
    with pytest.raises(ConfigError):
        ad.contrastive_loss(d, np.array([1]), margin=0.0)
    with pytest.raises(InvalidInput):
        ad.contrastive_loss(d, np.array([2]))
    with pytest.raises(ShapeError):
        ad.contrastive_loss(d, np.array([1, 0]))
    with pytest.raises(InvalidInput):
        ad.contrastive_loss(ad.Tensor(np.array([-0.5])), np.array([1]))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_adam_matches_reference_trajectory():
    rng = np.random.default_rng(26)
    w0 = rng.standard_normal((3, 2)).astype(np.float32)
    p = ad.Tensor(w0.copy(), requires_grad=True)
    opt = ad.Adam({"w": p}, lr=0.01)

    ref = w0.astype(np.float64).copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    for t in range(1, 6):
        g = rng.standard_normal((3, 2)).astype(np.float32)
        p.grad = g.copy()
        opt.step()
        g64 = g.astype(np.float64)
        m = 0.9 * m + 0.1 * g64
        v = 0.999 * v + 0.001 * g64 * g64
        m_hat = m / (1 - 0.9**t)
        v_hat = v / (1 - 0.999**t)
        ref = ref - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert np.allclose(p.data, ref, atol=1e-6)


def test_adam_first_step_size_is_lr():
    p = ad.Tensor(np.array([10.0], dtype=np.float64), requires_grad=True)
    opt = ad.Adam({"p": p}, lr=0.05)
    p.grad = np.array([3.7])
    opt.step()
    # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps) ~ lr
    assert abs((10.0 - p.data[0]) - 0.05) < 1e-6


def test_adam_minimizes_quadratic():
    p = ad.Tensor(np.array([4.0], dtype=np.float64), requires_grad=True)
    opt = ad.Adam({"p": p}, lr=0.1)
    for _ in range(400):
        opt.zero_grad()
        loss = ad.tsum(ad.mul(ad.sub(p, 3.0), ad.sub(p, 3.0)))
        loss.backward()
        opt.step()
    assert abs(p.data[0] - 3.0) < 1e-3


def test_adam_rejects_bad_inputs():
    p = ad.Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ConfigError):
        ad.Adam({"p": p}, lr=-1.0)
    with pytest.raises(ConfigError):
        ad.Adam({"p": p}, beta1=1.0)
    opt = ad.Adam({"p": p})
    p.grad = np.zeros(4, dtype=np.float32)
    with pytest.raises(ShapeError):
        opt.step()
    p.grad = np.array([np.nan, 0, 0], dtype=np.float32)
    with pytest.raises(NumericsError):
        opt.step()


def test_adam_skips_params_without_grad():
    p = ad.Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    q = ad.Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    opt = ad.Adam({"p": p, "q": q}, lr=0.1)
    p.grad = np.ones(2, dtype=np.float32)
    opt.step()
    assert not np.array_equal(p.data, np.ones(2))
    assert np.array_equal(q.data, np.ones(2))
