"""Central finite-difference verification of every differentiable op.

grad_check(opname, shape, seed) builds a small random case, runs backward
through a random scalar projection, and compares each input element's
analytic gradient against (f(x+eps) - f(x-eps)) / 2 eps with eps = 1e-3.

Inputs are drawn with |values| <= 1 and, for kinked ops (relu, max pools),
nudged away from the non-smooth set: a finite difference straddling a kink
measures nothing. The projection objective is accumulated in float64 so the
difference quotient only carries the ops' own float32 rounding.
"""

import numpy as np

from .errors import UsageError
from . import ops
from .tensor import Tensor, backward, proj_sum


def _uniform(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape).astype(np.float32)


def _away_from_zero(rng, shape, floor=0.05):
    mag = rng.uniform(floor, 1.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return (mag * sign).astype(np.float32)


def _distinct_grid(rng, shape):
    """Per-row permutations of an even grid: window maxima sit far apart."""
    n, c, l = shape
    base = np.linspace(-1.0, 1.0, l, dtype=np.float32)
    rows = np.stack([rng.permutation(base) for _ in range(n * c)])
    return rows.reshape(n, c, l)


def _case_conv1d(shape, rng):
    n, c, l = shape
    x = Tensor(_uniform(rng, (n, c, l)), requires_grad=True)
    w = Tensor(_uniform(rng, (c + 1, c, 3)), requires_grad=True)
    b = Tensor(_uniform(rng, (c + 1,)), requires_grad=True)
    return [x, w, b], lambda: ops.conv1d(x, w, b)


def _case_conv1d_strided(shape, rng):
    n, c, l = shape
    x = Tensor(_uniform(rng, (n, c, l)), requires_grad=True)
    w = Tensor(_uniform(rng, (2, c, 4)), requires_grad=True)
    b = Tensor(_uniform(rng, (2,)), requires_grad=True)
    return [x, w, b], lambda: ops.conv1d(x, w, b, stride=2, padding=2)


def _case_conv1d_grouped(shape, rng):
    n, c, l = shape
    c = max(2, c - (c % 2))
    x = Tensor(_uniform(rng, (n, c, l)), requires_grad=True)
    w = Tensor(_uniform(rng, (4, c // 2, 3)), requires_grad=True)
    return [x, w], lambda: ops.conv1d(x, w, None, stride=1, padding=1, groups=2)


def _case_batch_norm(shape, rng, mode):
    n, c, l = shape
    x = Tensor(_uniform(rng, (n, c, l)), requires_grad=True)
    gamma = Tensor(1.0 + 0.3 * _uniform(rng, (c,)), requires_grad=True)
    beta = Tensor(0.3 * _uniform(rng, (c,)), requires_grad=True)
    state = ops.BNState.for_channels(c)
    if mode == "eval":
        state.running_mean = 0.3 * _uniform(rng, (c,))
        state.running_var = rng.uniform(0.5, 1.5, size=c).astype(np.float32)
        state.initialized = True
    return [x, gamma, beta], lambda: ops.batch_norm1d(x, gamma, beta, state, mode=mode)


def _case_activation(shape, rng, kind):
    data = _away_from_zero(rng, shape) if kind == "relu" else _uniform(rng, shape)
    x = Tensor(data, requires_grad=True)
    return [x], lambda: ops.activation(x, kind)


def _case_max_window(shape, rng):
    x = Tensor(_distinct_grid(rng, shape), requires_grad=True)
    return [x], lambda: ops.max_pool1d(x, k=3, stride=2)


def _case_global_max(shape, rng):
    x = Tensor(_distinct_grid(rng, shape), requires_grad=True)
    return [x], lambda: ops.global_max_pool(x)


def _case_global_avg(shape, rng):
    x = Tensor(_uniform(rng, shape), requires_grad=True)
    return [x], lambda: ops.global_avg_pool(x)


def _case_linear(shape, rng):
    n, f = shape[0], int(np.prod(shape[1:]))
    x = Tensor(_uniform(rng, (n, f)), requires_grad=True)
    w = Tensor(_uniform(rng, (3, f)), requires_grad=True)
    b = Tensor(_uniform(rng, (3,)), requires_grad=True)
    return [x, w, b], lambda: ops.linear(x, w, b)


def _case_spatial_dropout(shape, rng, mode):
    x = Tensor(_uniform(rng, shape), requires_grad=True)
    mask_seed = int(rng.integers(2**31))
    return [x], lambda: ops.spatial_dropout(
        x, 0.4, mode=mode, rng=np.random.default_rng(mask_seed) if mode == "train" else None)


def _case_merge_sum(shape, rng):
    ts = [Tensor(_uniform(rng, shape), requires_grad=True) for _ in range(3)]
    return ts, lambda: ops.merge(ts, "sum")


def _case_merge_concat(shape, rng):
    n, c, l = shape
    a = Tensor(_uniform(rng, (n, c, l)), requires_grad=True)
    b = Tensor(_uniform(rng, (n, c + 1, l)), requires_grad=True)
    return [a, b], lambda: ops.merge([a, b], "concat_channels")


def _case_channel_scale(shape, rng):
    n, c, l = shape
    x = Tensor(_uniform(rng, (n, c, l)), requires_grad=True)
    g = Tensor(rng.uniform(0.1, 0.9, size=(n, c, 1)).astype(np.float32), requires_grad=True)
    return [x, g], lambda: ops.channel_scale(x, g)


def _case_bce(shape, rng):
    n = int(np.prod(shape))
    s = Tensor(rng.uniform(0.2, 0.8, size=n).astype(np.float32), requires_grad=True)
    y = Tensor(rng.integers(0, 2, size=n).astype(np.float32))
    return [s], lambda: ops.bce_loss(s, y)


def _case_softmax(shape, rng):
    x = Tensor(_uniform(rng, shape), requires_grad=True)
    return [x], lambda: ops.softmax_lastdim(x)


def _case_reshape(shape, rng):
    x = Tensor(_uniform(rng, shape), requires_grad=True)
    flat = int(np.prod(shape[1:]))
    return [x], lambda: x.reshape(shape[0], flat)


_REGISTRY = {
    "conv1d": _case_conv1d,
    "conv1d_strided": _case_conv1d_strided,
    "conv1d_grouped": _case_conv1d_grouped,
    "batch_norm1d": lambda s, r: _case_batch_norm(s, r, "train"),
    "batch_norm1d_eval": lambda s, r: _case_batch_norm(s, r, "eval"),
    "relu": lambda s, r: _case_activation(s, r, "relu"),
    "sigmoid": lambda s, r: _case_activation(s, r, "sigmoid"),
    "softmax_lastdim": _case_softmax,
    "max_window": _case_max_window,
    "global_max": _case_global_max,
    "global_avg": _case_global_avg,
    "linear": _case_linear,
    "spatial_dropout": lambda s, r: _case_spatial_dropout(s, r, "train"),
    "spatial_dropout_eval": lambda s, r: _case_spatial_dropout(s, r, "eval"),
    "merge_sum": _case_merge_sum,
    "merge_concat": _case_merge_concat,
    "channel_scale": _case_channel_scale,
    "bce_loss": _case_bce,
    "reshape": _case_reshape,
}

DIFFERENTIABLE_OPS = tuple(_REGISTRY)


def _objective(forward, proj) -> float:
    out = forward()
    return float(np.dot(out.data.ravel().astype(np.float64), proj.ravel().astype(np.float64)))


def grad_check(opname: str, shape, seed: int = 0, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if opname not in _REGISTRY:
        raise UsageError(f"unknown op {opname!r}; known: {', '.join(DIFFERENTIABLE_OPS)}")
    rng = np.random.default_rng([seed, list(_REGISTRY).index(opname)])
    leaves, forward = _REGISTRY[opname](tuple(shape), rng)

    out = forward()
    proj = rng.uniform(-1.0, 1.0, size=out.data.shape).astype(np.float32)
    backward(proj_sum(out, proj))

    worst = 0.0
    for leaf in leaves:
        if not leaf.requires_grad:
            continue
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = leaf.data.ravel()
        aflat = analytic.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + np.float32(eps)
            fp = _objective(forward, proj)
            flat[i] = orig - np.float32(eps)
            fm = _objective(forward, proj)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * eps)
            a = float(aflat[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1.0)
            worst = max(worst, err)
    return worst
