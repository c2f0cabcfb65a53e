"""Dense float64 tensors with reverse-mode differentiation.

Everything downstream (graph encoder, pruner, transformer backbone, losses)
is built from the operations in this module.  Shapes are checked eagerly and
mismatches raise :class:`ShapeError`; the only broadcasting allowed is a
1-D bias added over the trailing axis.  Gradient correctness is verified
against central finite differences via :func:`grad_check`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "no_grad",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "relu",
    "log",
    "exp",
    "softmax",
    "log_softmax",
    "tsum",
    "tmean",
    "concat",
    "stack",
    "pad_rows",
    "gather_rows",
    "gather_last",
    "embedding",
    "reshape",
    "transpose",
    "layer_norm",
    "dropout",
    "backward",
    "grad_check",
]


class NumericError(ValueError):
    """Non-finite values or other numeric contract violations."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes: tuple) -> None:
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Immutable dense float64 array plus an optional autodiff record."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    def __init__(self, data, requires_grad: bool = False, _children: tuple = (), _op: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._backward: Callable[[], None] | None = None
        self._prev = _children if self.requires_grad else ()
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # small operator sugar; the module-level functions are the real API
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, children: Sequence[Tensor], op: str) -> Tensor:
    req = _GRAD_ENABLED and any(c.requires_grad for c in children)
    out = Tensor(data, requires_grad=req, _children=tuple(children) if req else (), _op=op)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also allows a 1-D bias broadcast over leading axes."""
    bias_add = a.shape != b.shape
    if bias_add:
        if not (b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]):
            raise ShapeError("add", a.shape, b.shape)
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accum(a, out.grad)
            if b.requires_grad:
                if bias_add:
                    _accum(b, out.grad.reshape(-1, b.shape[0]).sum(axis=0))
                else:
                    _accum(b, out.grad)
        out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accum(a, out.grad)
            if b.requires_grad:
                _accum(b, -out.grad)
        out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accum(a, out.grad * b.data)
            if b.requires_grad:
                _accum(b, out.grad * a.data)
        out._backward = _bw
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = _make(a.data * s, (a,), "scale")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * s)
        out._backward = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the trailing two axes.

    Either both operands share identical leading (batch) axes, or one of the
    operands is 2-D and is applied to every batch element of the other.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.ndim != 2 and b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                if a.ndim == 2 and ga.ndim > 2:
                    ga = ga.sum(axis=tuple(range(ga.ndim - 2)))
                _accum(a, ga)
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                if b.ndim == 2 and gb.ndim > 2:
                    gb = gb.sum(axis=tuple(range(gb.ndim - 2)))
                _accum(b, gb)
        out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * (a.data > 0.0))
        out._backward = _bw
    return out


def log(a: Tensor) -> Tensor:
    out = _make(np.log(a.data), (a,), "log")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad / a.data)
        out._backward = _bw
    return out


def exp(a: Tensor) -> Tensor:
    out = _make(np.exp(a.data), (a,), "exp")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * out.data)
        out._backward = _bw
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _make(p, (a,), "softmax")
    if out.requires_grad:
        def _bw():
            g = out.grad
            dot = (g * p).sum(axis=axis, keepdims=True)
            _accum(a, p * (g - dot))
        out._backward = _bw
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    ls = z - lse
    out = _make(ls, (a,), "log_softmax")
    if out.requires_grad:
        def _bw():
            g = out.grad
            p = np.exp(ls)
            _accum(a, g - p * g.sum(axis=axis, keepdims=True))
        out._backward = _bw
    return out


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out = _make(a.data.sum(axis=axis), (a,), "sum")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is None:
                _accum(a, np.full_like(a.data, g))
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())
        out._backward = _bw
    return out


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("mean", a.shape)
    out = _make(a.data.mean(axis=axis), (a,), "mean")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is None:
                _accum(a, np.full_like(a.data, g / n))
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape) / n)
        out._backward = _bw
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat", ())
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base):
            raise ShapeError("concat", tensors[0].shape, t.shape)
        for ax, (x, y) in enumerate(zip(base, other)):
            if ax != (axis % len(base)) and x != y:
                raise ShapeError("concat", tensors[0].shape, t.shape)
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        def _bw():
            pieces = np.split(out.grad, np.cumsum(sizes)[:-1], axis=axis)
            for t, g in zip(tensors, pieces):
                if t.requires_grad:
                    _accum(t, g)
        out._backward = _bw
    return out


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack", ())
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError("stack", tensors[0].shape, t.shape)
    out = _make(np.stack([t.data for t in tensors]), tensors, "stack")
    if out.requires_grad:
        def _bw():
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    _accum(t, out.grad[i])
        out._backward = _bw
    return out


def pad_rows(a: Tensor, total_rows: int) -> Tensor:
    """Append zero rows along the first axis up to ``total_rows``."""
    if a.ndim < 1 or total_rows < a.shape[0]:
        raise ShapeError("pad_rows", a.shape, (total_rows,))
    extra = total_rows - a.shape[0]
    if extra == 0:
        return a
    padded = np.concatenate([a.data, np.zeros((extra,) + a.shape[1:])], axis=0)
    out = _make(padded, (a,), "pad_rows")
    if out.requires_grad:
        n = a.shape[0]
        def _bw():
            _accum(a, out.grad[:n])
        out._backward = _bw
    return out


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows along the first axis; gradient scatter-adds back."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows", idx.shape)
    if a.ndim < 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
        raise ShapeError("gather_rows", a.shape, idx.shape)
    out = _make(a.data[idx], (a,), "gather_rows")
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accum(a, g)
        out._backward = _bw
    return out


def gather_last(a: Tensor, indices) -> Tensor:
    """out[...] = a[..., indices[...]]; indices shaped like a without the last axis."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != a.shape[:-1]:
        raise ShapeError("gather_last", a.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[-1]):
        raise ShapeError("gather_last", a.shape, idx.shape)
    picked = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]
    out = _make(picked, (a,), "gather_last")
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(a.data)
            np.put_along_axis(g, idx[..., None], out.grad[..., None], axis=-1)
            _accum(a, g)
        out._backward = _bw
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Lookup ``table[ids]`` where ids may be any integer array shape."""
    idx = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError("embedding", table.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("embedding", table.shape, idx.shape)
    out = _make(table.data[idx], (table,), "embedding")
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(table.data)
            np.add.at(g, idx.reshape(-1), out.grad.reshape(-1, table.shape[1]))
            _accum(table, g)
        out._backward = _bw
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size and -1 not in shape:
        raise ShapeError("reshape", a.shape, shape)
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad.reshape(a.shape))
        out._backward = _bw
    return out


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    out = _make(a.data.transpose(axes), (a,), "transpose")
    if out.requires_grad:
        inv = tuple(np.argsort(axes))
        def _bw():
            _accum(a, out.grad.transpose(inv))
        out._backward = _bw
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the trailing axis, then apply elementwise gain and bias."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", a.shape, gain.shape, bias.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make(xhat * gain.data + bias.data, (a, gain, bias), "layer_norm")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if bias.requires_grad:
                _accum(bias, g.reshape(-1, d).sum(axis=0))
            if gain.requires_grad:
                _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
            if a.requires_grad:
                gx = g * gain.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                _accum(a, inv * (gx - m1 - xhat * m2))
        out._backward = _bw
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with an explicit mask drawn from ``rng``.

    The mask is drawn per call, so runs are reproducible under a fixed seed.
    """
    if not 0.0 <= p < 1.0:
        raise NumericError(f"dropout rate out of range: {p}")
    if p == 0.0:
        return a
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    out = _make(a.data * mask, (a,), "dropout")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad * mask)
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Returns a map from ``id(leaf)`` to gradient for every reachable tracked
    leaf; if ``leaves`` is given, unreachable entries get zero gradients of
    the leaf's shape.  Each leaf's ``.grad`` attribute is also populated.
    """
    if loss.data.shape != ():
        raise ShapeError("backward", loss.data.shape)

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._prev:
            if id(child) not in visited:
                stack.append((child, False))

    for node in topo:
        node.grad = None
    loss.grad = np.asarray(1.0)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()

    grads: dict[int, np.ndarray] = {}
    for node in topo:
        if node.requires_grad and node._backward is None:
            grads[id(node)] = node.grad if node.grad is not None else np.zeros_like(node.data)
    if leaves is not None:
        for leaf in leaves:
            if id(leaf) not in grads:
                grads[id(leaf)] = np.zeros_like(leaf.data)
                leaf.grad = grads[id(leaf)]
    return grads


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is |analytic - numeric| / max(1e-8,
    |analytic| + |numeric|).
    """
    x = np.asarray(x, dtype=np.float64)
    leaf = Tensor(x, requires_grad=True)
    loss = f(leaf)
    backward(loss, leaves=[leaf])
    analytic = leaf.grad
    if analytic is None or not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite analytic gradient")

    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        with no_grad():
            hi = f(Tensor(x)).item()
        flat[i] = orig - eps
        with no_grad():
            lo = f(Tensor(x)).item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("non-finite numeric gradient")

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max()) if rel.size else 0.0
