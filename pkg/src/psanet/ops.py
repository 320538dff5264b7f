"""The operation set of the network: convolution, normalization, activations,
pooling, dropout, merge, linear, and the binary cross-entropy loss.

All ops take and return Tensor, record backward closures, and keep float32
storage. conv1d accumulates its contraction in float64 and rounds once to
float32, which makes the forward result independent of summation order (a
naive direct-convolution loop reproduces it bit for bit). Backward passes
stay in float32; the col2im scatter order is pinned by the kernel backend.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from .errors import ConfigError, DataError, LengthError, ShapeError
from .tensor import Tensor, _finish, _node

BCE_CLAMP = 1e-7


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation (no kernel flip) with zero padding.

    x: [N, Cin, L], w: [Cout, Cin/groups, K], b: [Cout] or None.
    Lout = floor((L + 2*padding - K)/stride) + 1.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"conv1d input must be [N,Cin,L], got {x.data.shape}")
    if w.data.ndim != 3:
        raise ShapeError(f"conv1d weight must be [Cout,Cin/groups,K], got {w.data.shape}")
    n, cin, l = x.data.shape
    cout, cpg, k = w.data.shape
    if stride < 1 or padding < 0 or groups < 1:
        raise ConfigError(f"bad conv1d hyperparameters stride={stride} padding={padding} groups={groups}")
    if cin % groups != 0:
        raise ShapeError(f"input channel axis ({cin}) not divisible by groups={groups}")
    if cout % groups != 0:
        raise ShapeError(f"output channel axis ({cout}) not divisible by groups={groups}")
    if cpg != cin // groups:
        raise ShapeError(f"weight channel axis is {cpg}, expected Cin/groups = {cin // groups}")
    if b is not None and b.data.shape != (cout,):
        raise ShapeError(f"bias axis is {b.data.shape}, expected ({cout},)")
    lout = (l + 2 * padding - k) // stride + 1
    if k > l + 2 * padding or lout < 1:
        raise LengthError(f"kernel {k} over padded length {l + 2 * padding} leaves no output")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    lp = xp.shape[2]
    coutg = cout // groups

    cols64 = kernels.im2col(xp, k, stride, np.float64).reshape(n, groups, cpg * k, lout)
    wm64 = w.data.astype(np.float64).reshape(groups, coutg, cpg * k)
    y64 = np.matmul(wm64[None], cols64)
    if b is not None:
        y64 += b.data.astype(np.float64).reshape(1, groups, coutg, 1)
    out = _node(y64.reshape(n, cout, lout).astype(np.float32), (x, w) if b is None else (x, w, b))

    def bwd():
        dy = out.grad.reshape(n, groups, coutg, lout)
        if w.requires_grad:
            cols32 = kernels.im2col(xp, k, stride, np.float32).reshape(n, groups, cpg * k, lout)
            dw = np.matmul(dy, cols32.transpose(0, 1, 3, 2)).sum(axis=0)
            w._accum(dw.reshape(cout, cpg, k))
        if b is not None and b.requires_grad:
            b._accum(out.grad.sum(axis=(0, 2)))
        if x.requires_grad:
            wm32 = w.data.reshape(groups, coutg, cpg * k)
            dcols = np.matmul(wm32.transpose(0, 2, 1)[None], dy)
            dxp = kernels.col2im(np.ascontiguousarray(dcols).reshape(n, cin, k, lout), stride, lp)
            x._accum(dxp[:, :, padding:padding + l] if padding else dxp)

    return _finish(out, bwd)


@dataclass
class BNState:
    """Running statistics for one batch_norm1d site."""
    running_mean: np.ndarray
    running_var: np.ndarray
    initialized: bool = False
    eval_warned: bool = False

    @classmethod
    def for_channels(cls, c: int) -> "BNState":
        return cls(np.zeros(c, np.float32), np.ones(c, np.float32))


def batch_norm1d(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState,
                 mode: str = "train", momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over the (N, L) axes.

    Train mode uses batch statistics (population variance) and updates the
    running stats; eval mode uses running stats. Eval before any train step
    falls back to (0, 1) and sets state.eval_warned.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"batch_norm1d input must be [N,C,L], got {x.data.shape}")
    n, c, l = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"gamma/beta must be ({c},), got {gamma.data.shape}/{beta.data.shape}")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be train or eval, not {mode!r}")

    if mode == "train":
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        state.running_mean[...] = (1.0 - momentum) * state.running_mean + momentum * mu
        state.running_var[...] = (1.0 - momentum) * state.running_var + momentum * var
        state.initialized = True
    else:
        if not state.initialized:
            state.eval_warned = True
        mu = state.running_mean
        var = state.running_var

    inv_std = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    xhat = (x.data - mu.reshape(1, c, 1)) * inv_std.reshape(1, c, 1)
    out = _node(gamma.data.reshape(1, c, 1) * xhat + beta.data.reshape(1, c, 1), (x, gamma, beta))

    def bwd():
        dy = out.grad
        if gamma.requires_grad:
            gamma._accum((dy * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta._accum(dy.sum(axis=(0, 2)))
        if x.requires_grad:
            g = gamma.data.reshape(1, c, 1)
            if mode == "train":
                m = n * l
                dxhat = dy * g
                sum_dxhat = dxhat.sum(axis=(0, 2), keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
                dx = (inv_std.reshape(1, c, 1) / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
                x._accum(dx.astype(np.float32))
            else:
                x._accum(dy * g * inv_std.reshape(1, c, 1))

    return _finish(out, bwd)


def relu(x: Tensor) -> Tensor:
    out = _node(np.maximum(x.data, 0.0), (x,))

    def bwd():
        x._accum(out.grad * (x.data > 0.0))

    return _finish(out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x.data))
    out = _node(y, (x,))

    def bwd():
        x._accum(out.grad * out.data * (1.0 - out.data))

    return _finish(out, bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.data.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    out = _node(y, (x,))

    def bwd():
        dy = out.grad
        x._accum(out.data * (dy - (dy * out.data).sum(axis=-1, keepdims=True)))

    return _finish(out, bwd)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "softmax_lastdim": softmax_lastdim}


def activation(x: Tensor, kind: str) -> Tensor:
    if kind not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {kind!r}, expected one of {sorted(_ACTIVATIONS)}")
    return _ACTIVATIONS[kind](x)


def max_pool1d(x: Tensor, k: int, stride: int) -> Tensor:
    """Windowed max; backward routes to the first argmax on ties."""
    if x.data.ndim != 3:
        raise ShapeError(f"pool input must be [N,C,L], got {x.data.shape}")
    n, c, l = x.data.shape
    if k < 1 or stride < 1:
        raise ConfigError(f"bad pool window k={k} stride={stride}")
    lout = (l - k) // stride + 1
    if k > l or lout < 1:
        raise LengthError(f"pool window {k} over length {l} leaves no output")
    s0, s1, s2 = x.data.strides
    win = np.lib.stride_tricks.as_strided(x.data, (n, c, lout, k), (s0, s1, s2 * stride, s2))
    idx = win.argmax(axis=3)
    y = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    out = _node(y, (x,))

    def bwd():
        dx = np.zeros_like(x.data)
        nn, cc, tt = np.indices(idx.shape, sparse=True)
        np.add.at(dx, (nn, cc, tt * stride + idx), out.grad)
        x._accum(dx)

    return _finish(out, bwd)


def global_max_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError(f"pool input must be [N,C,L], got {x.data.shape}")
    idx = x.data.argmax(axis=2)
    out = _node(np.take_along_axis(x.data, idx[..., None], axis=2), (x,))

    def bwd():
        dx = np.zeros_like(x.data)
        nn, cc = np.indices(idx.shape, sparse=True)
        np.add.at(dx, (nn, cc, idx), out.grad[..., 0])
        x._accum(dx)

    return _finish(out, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError(f"pool input must be [N,C,L], got {x.data.shape}")
    l = x.data.shape[2]
    out = _node(x.data.mean(axis=2, keepdims=True), (x,))

    def bwd():
        x._accum(np.broadcast_to(out.grad / l, x.data.shape))

    return _finish(out, bwd)


def pool(x: Tensor, kind: str, k: int | None = None, stride: int | None = None) -> Tensor:
    if kind == "max_window":
        if k is None or stride is None:
            raise ConfigError("max_window pooling needs k and stride")
        return max_pool1d(x, k, stride)
    if kind == "global_max":
        return global_max_pool(x)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ConfigError(f"unknown pool kind {kind!r}")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ W.T + b with x: [N, F], w: [O, F], b: [O]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"linear needs [N,F] x [O,F], got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"inner axis mismatch: input F={x.data.shape[1]}, weight F={w.data.shape[1]}")
    if b is not None and b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"bias axis is {b.data.shape}, expected ({w.data.shape[0]},)")
    y = x.data @ w.data.T
    if b is not None:
        y += b.data
    out = _node(y, (x, w) if b is None else (x, w, b))

    def bwd():
        if w.requires_grad:
            w._accum(out.grad.T @ x.data)
        if b is not None and b.requires_grad:
            b._accum(out.grad.sum(axis=0))
        if x.requires_grad:
            x._accum(out.grad @ w.data)

    return _finish(out, bwd)


def spatial_dropout(x: Tensor, rate: float, mode: str = "train",
                    rng: np.random.Generator | None = None) -> Tensor:
    """Zero whole channels; survivors scale by 1/(1-rate). Eval mode is identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0,1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be train or eval, not {mode!r}")
    if x.data.ndim != 3:
        raise ShapeError(f"spatial_dropout input must be [N,C,L], got {x.data.shape}")
    if mode == "eval" or rate == 0.0:
        out = _node(x.data, (x,))

        def bwd_id():
            x._accum(out.grad)

        return _finish(out, bwd_id)

    if rng is None:
        raise ConfigError("train-mode spatial_dropout needs an rng")
    n, c, _ = x.data.shape
    keep = (rng.random((n, c)) >= rate)
    scale = (keep / (1.0 - rate)).astype(np.float32)[:, :, None]
    out = _node(x.data * scale, (x,))

    def bwd():
        x._accum(out.grad * scale)

    return _finish(out, bwd)


def merge(inputs, mode: str = "sum") -> Tensor:
    """Aggregate branch outputs: elementwise sum or channel concatenation."""
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("merge needs at least one input")
    if mode == "sum":
        shape = inputs[0].data.shape
        for i, t in enumerate(inputs[1:], start=1):
            if t.data.shape != shape:
                raise ShapeError(f"merge(sum) input {i} has shape {t.data.shape}, expected {shape}")
        acc = inputs[0].data.copy()
        for t in inputs[1:]:
            acc += t.data
        out = _node(acc, tuple(inputs))

        def bwd_sum():
            for t in inputs:
                t._accum(out.grad)

        return _finish(out, bwd_sum)

    if mode == "concat_channels":
        first = inputs[0].data.shape
        for i, t in enumerate(inputs[1:], start=1):
            s = t.data.shape
            if len(s) != len(first) or s[0] != first[0] or s[2:] != first[2:]:
                raise ShapeError(f"merge(concat) input {i} has shape {s}, differs beyond channel axis from {first}")
        out = _node(np.concatenate([t.data for t in inputs], axis=1), tuple(inputs))

        def bwd_cat():
            at = 0
            for t in inputs:
                c = t.data.shape[1]
                t._accum(out.grad[:, at:at + c])
                at += c

        return _finish(out, bwd_cat)

    raise ConfigError(f"unknown merge mode {mode!r}")


def channel_scale(x: Tensor, gate: Tensor) -> Tensor:
    """Per-channel gating: x [N,C,L] scaled by gate [N,C,1]."""
    if x.data.ndim != 3 or gate.data.shape != (x.data.shape[0], x.data.shape[1], 1):
        raise ShapeError(f"channel_scale needs x [N,C,L] and gate [N,C,1], got {x.data.shape} and {gate.data.shape}")
    out = _node(x.data * gate.data, (x, gate))

    def bwd():
        if x.requires_grad:
            x._accum(out.grad * gate.data)
        if gate.requires_grad:
            gate._accum((out.grad * x.data).sum(axis=2, keepdims=True))

    return _finish(out, bwd)


def bce_loss(scores: Tensor, labels: Tensor) -> Tensor:
    """Mean binary cross-entropy; scores clamped to [1e-7, 1-1e-7].

    Gradient passes through only where the score was inside the clamp window.
    """
    if scores.data.shape != labels.data.shape or scores.data.ndim != 1:
        raise ShapeError(f"scores and labels must both be [N], got {scores.data.shape} and {labels.data.shape}")
    y = labels.data
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("labels must be exactly 0 or 1")
    lo = np.float32(BCE_CLAMP)
    hi = np.float32(1.0 - BCE_CLAMP)
    c = np.clip(scores.data, lo, hi)
    n = scores.data.shape[0]
    val = -(y * np.log(c) + (1.0 - y) * np.log(1.0 - c)).mean()
    out = _node(np.asarray(val, dtype=np.float32), (scores, labels))

    def bwd():
        if scores.requires_grad:
            inside = (scores.data >= lo) & (scores.data <= hi)
            ds = inside * (c - y) / (c * (1.0 - c)) / n
            scores._accum(out.grad * ds.astype(np.float32))

    return _finish(out, bwd)
