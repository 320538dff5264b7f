"""Dense float32 tensors with reverse-mode autodiff.

The graph is recorded implicitly: every op node keeps a backward closure and
a monotonically increasing id, so visiting nodes by descending id replays the
tape in exact reverse recording order. Gradients accumulate with += into
lazily created buffers. A graph is consumed by its backward pass; reusing any
part of it raises UsageError.
"""

import itertools

import numpy as np

from .errors import ShapeError, UsageError

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_id", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # ascontiguousarray would promote 0-d to 1-d
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple = ()
        self._id = next(_ids)
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def reshape(self, *shape: int) -> "Tensor":
        if int(np.prod(shape)) != self.data.size:
            raise ShapeError(f"cannot reshape {self.data.shape} to {shape}")
        src_shape = self.data.shape
        out = _node(self.data.reshape(shape), (self,))

        def bwd():
            self._accum(out.grad.reshape(src_shape))

        return _finish(out, bwd)

    def backward(self) -> None:
        backward(self)


def _node(data: np.ndarray, prev: tuple) -> Tensor:
    """Create an op output; requires_grad propagates from the inputs."""
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in prev)
    if out.requires_grad:
        out._prev = prev
    return out


def _finish(out: Tensor, bwd) -> Tensor:
    if out.requires_grad:
        out._backward = bwd
    return out


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Gradients += into every requires_grad ancestor. The visited graph is
    consumed: a second backward through any of its nodes raises UsageError.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._consumed:
        raise UsageError("graph already consumed by a previous backward pass")
    if loss._backward is None:
        raise UsageError("loss is not connected to a recorded graph")

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._consumed:
            raise UsageError("graph already consumed by a previous backward pass")
        if t._backward is not None:
            nodes.append(t)
            stack.extend(t._prev)

    nodes.sort(key=lambda t: t._id, reverse=True)
    loss._accum(np.ones_like(loss.data))
    for t in nodes:
        t._backward()
        t._consumed = True
        t._backward = None
        t._prev = ()


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def proj_sum(t: Tensor, proj: np.ndarray) -> Tensor:
    """Scalar projection sum(t * proj) with proj constant; used by grad checks."""
    proj = np.asarray(proj, dtype=np.float32)
    if proj.shape != t.data.shape:
        raise ShapeError(f"projection shape {proj.shape} != tensor shape {t.data.shape}")
    val = np.dot(t.data.ravel().astype(np.float64), proj.ravel().astype(np.float64))
    out = _node(np.asarray(val, dtype=np.float32), (t,))

    def bwd():
        t._accum(out.grad * proj)

    return _finish(out, bwd)


def kaiming_init(weight: Tensor, fan_in: int, rng: np.random.Generator) -> Tensor:
    """Fill with normal(0, sqrt(2/fan_in)) draws; deterministic under the rng seed."""
    if fan_in < 1:
        raise ShapeError(f"fan_in must be >= 1, got {fan_in}")
    std = float(np.sqrt(2.0 / fan_in))
    weight.data[...] = rng.normal(0.0, std, size=weight.data.shape).astype(np.float32)
    return weight
