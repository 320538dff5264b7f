"""Forward semantics of every op against direct oracles.

The conv oracle is a three-loop float64 cross-correlation; the library path
(im2col + matmul in float64, one rounding to float32) must match it to the
last bit after that same single rounding.
"""

import numpy as np
import pytest

from psanet.errors import ConfigError, DataError, LengthError, ShapeError
from psanet import ops
from psanet.tensor import Tensor, backward, proj_sum


def naive_conv1d(x, w, b, stride, padding, groups):
    n, cin, l = x.shape
    cout, cpg, k = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (padding, padding)))
    lout = (l + 2 * padding - k) // stride + 1
    coutg = cout // groups
    y = np.zeros((n, cout, lout))
    for o in range(cout):
        g = o // coutg
        for t in range(lout):
            seg = xp[:, g * cpg:(g + 1) * cpg, t * stride:t * stride + k]
            y[:, o, t] = (seg * w[o].astype(np.float64)).sum(axis=(1, 2))
    if b is not None:
        y += b.astype(np.float64)[None, :, None]
    return y.astype(np.float32)


@pytest.mark.parametrize("n,cin,cout,l,k,stride,padding,groups", [
    (2, 3, 4, 11, 3, 1, 0, 1),
    (1, 4, 6, 20, 5, 2, 2, 2),
    (3, 8, 8, 17, 3, 1, 1, 8),
    (2, 1, 2, 64, 7, 3, 3, 1),
    (1, 6, 9, 10, 1, 1, 0, 3),
])
def test_conv1d_matches_naive(n, cin, cout, l, k, stride, padding, groups, rng):
    x = rng.standard_normal((n, cin, l)).astype(np.float32)
    w = rng.standard_normal((cout, cin // groups, k)).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    got = ops.conv1d(Tensor(x), Tensor(w), Tensor(b), stride, padding, groups)
    np.testing.assert_array_equal(got.data, naive_conv1d(x, w, b, stride, padding, groups))


def test_conv1d_shape_errors(rng):
    x = Tensor(rng.standard_normal((1, 4, 10)).astype(np.float32))
    w_ok = Tensor(rng.standard_normal((2, 4, 3)).astype(np.float32))
    with pytest.raises(ShapeError):
        ops.conv1d(Tensor(np.zeros((4, 10), np.float32)), w_ok)
    with pytest.raises(ShapeError):
        ops.conv1d(x, Tensor(np.zeros((2, 3, 3), np.float32)))  # wrong Cin/groups
    with pytest.raises(ShapeError):
        ops.conv1d(x, w_ok, groups=3)  # 4 % 3 != 0
    with pytest.raises(ConfigError):
        ops.conv1d(x, w_ok, stride=0)
    with pytest.raises(LengthError):
        ops.conv1d(x, Tensor(np.zeros((2, 4, 11), np.float32)))


def test_batch_norm_train_normalizes(rng):
    x = rng.standard_normal((4, 3, 50)).astype(np.float32) * 5 + 2
    st = ops.BNState.for_channels(3)
    out = ops.batch_norm1d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), st, "train")
    assert np.abs(out.data.mean(axis=(0, 2))).max() < 1e-5
    assert np.abs(out.data.std(axis=(0, 2)) - 1).max() < 1e-3
    assert st.initialized


def test_batch_norm_eval_uses_running_stats(rng):
    x = rng.standard_normal((2, 3, 40)).astype(np.float32)
    st = ops.BNState.for_channels(3)
    st.running_mean[:] = 1.0
    st.running_var[:] = 4.0
    st.initialized = True
    out = ops.batch_norm1d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), st, "eval")
    np.testing.assert_allclose(out.data, (x - 1.0) / np.sqrt(4.0 + 1e-5), rtol=1e-5)


def test_batch_norm_eval_before_train_warns(rng):
    x = rng.standard_normal((1, 2, 8)).astype(np.float32)
    st = ops.BNState.for_channels(2)
    out = ops.batch_norm1d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), st, "eval")
    assert st.eval_warned
    # (0,1) fallback: output is x itself up to eps
    np.testing.assert_allclose(out.data, x / np.sqrt(1 + 1e-5), rtol=1e-6)


def test_batch_norm_running_update_rule(rng):
    x = rng.standard_normal((2, 1, 100)).astype(np.float32)
    st = ops.BNState.for_channels(1)
    ops.batch_norm1d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), st, "train", momentum=0.1)
    want_mean = 0.9 * 0.0 + 0.1 * x.mean()
    want_var = 0.9 * 1.0 + 0.1 * x.var()
    assert abs(st.running_mean[0] - want_mean) < 1e-6
    assert abs(st.running_var[0] - want_var) < 1e-6


def test_activation_trivia():
    assert float(ops.sigmoid(Tensor(0.0)).data) == 0.5
    np.testing.assert_array_equal(
        ops.relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0.0, 0.0, 2.0])
    sm = ops.softmax_lastdim(Tensor(np.array([[3.0, 3.0, 3.0]])))
    np.testing.assert_allclose(sm.data, [[1 / 3, 1 / 3, 1 / 3]], rtol=1e-6)
    with pytest.raises(ConfigError):
        ops.activation(Tensor(np.zeros(2)), "tanh")


def test_pool_trivia():
    x = Tensor(np.array([[[1.0, 5.0, 3.0]]]))
    np.testing.assert_array_equal(ops.global_max_pool(x).data, [[[5.0]]])
    np.testing.assert_array_equal(ops.global_avg_pool(x).data, [[[3.0]]])
    w = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    np.testing.assert_array_equal(ops.max_pool1d(w, 2, 2).data, [[[2.0, 4.0]]])
    with pytest.raises(LengthError):
        ops.max_pool1d(Tensor(np.zeros((1, 1, 2), np.float32)), 3, 1)


def test_max_pool_gradient_to_first_argmax_on_tie():
    x = Tensor(np.array([[[2.0, 2.0, 1.0]]]), requires_grad=True)
    y = ops.global_max_pool(x)
    backward(proj_sum(y, np.ones((1, 1, 1))))
    np.testing.assert_array_equal(x.grad, [[[1.0, 0.0, 0.0]]])


def test_windowed_pool_matches_window_scan(rng):
    x = rng.standard_normal((2, 3, 21)).astype(np.float32)
    k, s = 3, 2
    got = ops.max_pool1d(Tensor(x), k, s).data
    lout = (21 - k) // s + 1
    want = np.stack([x[:, :, t * s:t * s + k].max(axis=2) for t in range(lout)], axis=2)
    np.testing.assert_array_equal(got, want)


def test_pool_dispatch():
    x = Tensor(np.array([[[1.0, 5.0, 3.0]]]))
    assert ops.pool(x, "global_max").data[0, 0, 0] == 5.0
    assert ops.pool(x, "global_avg").data[0, 0, 0] == 3.0
    np.testing.assert_array_equal(ops.pool(x, "max_window", k=1, stride=2).data, [[[1.0, 3.0]]])
    with pytest.raises(ConfigError):
        ops.pool(x, "median")


def test_linear_matches_matmul(rng):
    x = rng.standard_normal((4, 7)).astype(np.float32)
    w = rng.standard_normal((3, 7)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    got = ops.linear(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got, x @ w.T + b, rtol=1e-6)
    with pytest.raises(ShapeError):
        ops.linear(Tensor(x), Tensor(np.zeros((3, 8), np.float32)))


def test_spatial_dropout_semantics(rng):
    x = Tensor(np.ones((8, 16, 5), np.float32))
    # eval: identity regardless of rate
    np.testing.assert_array_equal(ops.spatial_dropout(x, 0.5, "eval").data, x.data)
    # rate 0: identity without an rng
    np.testing.assert_array_equal(ops.spatial_dropout(x, 0.0, "train").data, x.data)
    out = ops.spatial_dropout(x, 0.5, "train", rng=rng).data
    # whole channels: within one (n, c) the time axis is constant
    assert np.all((out == 0) | (out == 2.0))
    assert np.all(out.min(axis=2) == out.max(axis=2))
    with pytest.raises(ConfigError):
        ops.spatial_dropout(x, 0.5, "train")  # rng required
    with pytest.raises(ConfigError):
        ops.spatial_dropout(x, 1.0, "train", rng=rng)


def test_merge_modes(rng):
    a = Tensor(rng.standard_normal((2, 3, 4)).astype(np.float32))
    b = Tensor(rng.standard_normal((2, 3, 4)).astype(np.float32))
    np.testing.assert_array_equal(ops.merge([a, b], "sum").data, a.data + b.data)
    c = Tensor(rng.standard_normal((2, 5, 4)).astype(np.float32))
    cat = ops.merge([a, c], "concat_channels")
    assert cat.data.shape == (2, 8, 4)
    with pytest.raises(ShapeError):
        ops.merge([a, c], "sum")
    with pytest.raises(ShapeError):
        ops.merge([], "sum")
    with pytest.raises(ConfigError):
        ops.merge([a, b], "mean")


def test_channel_scale(rng):
    x = rng.standard_normal((2, 3, 6)).astype(np.float32)
    g = rng.uniform(0, 1, (2, 3, 1)).astype(np.float32)
    np.testing.assert_array_equal(ops.channel_scale(Tensor(x), Tensor(g)).data, x * g)
    with pytest.raises(ShapeError):
        ops.channel_scale(Tensor(x), Tensor(np.zeros((2, 3), np.float32)))


def test_bce_loss_values_and_clamp():
    s = Tensor(np.array([0.9, 0.1], np.float32))
    y = Tensor(np.array([1.0, 0.0], np.float32))
    want = -np.log(np.float32(0.9))  # symmetric pair, same term twice
    assert abs(float(ops.bce_loss(s, y).data) - want) < 1e-6
    # clamp keeps extreme scores finite
    ext = ops.bce_loss(Tensor(np.array([0.0, 1.0], np.float32)), y)
    assert np.isfinite(float(ext.data))
    assert ext.data.shape == ()
    with pytest.raises(DataError):
        ops.bce_loss(Tensor(np.array([0.5], np.float32)), Tensor(np.array([0.5], np.float32)))
    with pytest.raises(ShapeError):
        ops.bce_loss(Tensor(np.zeros(3, np.float32)), Tensor(np.zeros(4, np.float32)))


def test_bce_gradient_masked_outside_clamp():
    s = Tensor(np.array([0.0, 0.5], np.float32), requires_grad=True)
    y = Tensor(np.array([1.0, 1.0], np.float32))
    backward(ops.bce_loss(s, y))
    assert s.grad[0] == 0.0  # below the clamp window: no gradient
    assert s.grad[1] != 0.0
