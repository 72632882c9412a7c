"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation stores a backward closure on its output, so a computation
builds an implicit graph that ``Tensor.backward()`` walks in reverse
topological order. There is no global tape or session state, which makes
independent graphs safe to build and differentiate concurrently.

Elementwise ops broadcast like numpy and gradients are summed back down to
the operand shapes; ``matmul`` follows numpy's stacked-matrix rules. Only
what the detector needs is implemented.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class MaskError(ValueError):
    """An attention mask leaves a query row with nothing to attend to."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.shape}")
        self.grad = np.ones_like(self.data)
        for node in reversed(_toposort(self)):
            if node._backward is not None:
                node._backward()

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else _axis_size(self.shape, axis)
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def T(self):
        if self.ndim != 2:
            raise ShapeError(".T is for 2-d tensors; use swapaxes")
        return swapaxes(self, 0, 1)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _axis_size(shape, axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    return int(np.prod([shape[a] for a in axis]))


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[Tensor], None]) -> Tensor:
    """Build an op node from precomputed forward data and a backward closure.

    ``backward`` receives the output tensor and is responsible for calling
    ``accumulate_grad`` on whichever parents require gradients.
    """
    parents = tuple(parents)
    out = Tensor(data, any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = lambda: backward(out)
    return out


# Public alias used by fused ops in other modules.
accumulate_grad = _accum


# primitive ops --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.shape))

    return custom_op(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * a.data, b.shape))

    return custom_op(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    return custom_op(a.data / b.data, (a, b), backward)


def power(a, p: float) -> Tensor:
    """Elementwise a**p for a scalar exponent; grad is 0 at a == 0."""
    a = as_tensor(a)
    p = float(p)

    def backward(out):
        if a.requires_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(a.data != 0.0, p * a.data ** (p - 1.0), 0.0)
            _accum(a, out.grad * d)

    return custom_op(a.data**p, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def backward(out):
        g = out.grad
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return custom_op(a.data @ b.data, (a, b), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def backward(out):
        if a.requires_grad:
            _accum(a, out.grad * (a.data > 0))

    return custom_op(np.maximum(a.data, 0.0), (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(out):
        if a.requires_grad:
            _accum(a, out.grad * y * (1.0 - y))

    return custom_op(y, (a,), backward)


def log(a) -> Tensor:
    """Natural log; inputs must be positive (clamp first)."""
    a = as_tensor(a)

    def backward(out):
        if a.requires_grad:
            _accum(a, out.grad / a.data)

    return custom_op(np.log(a.data), (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def backward(out):
        if a.requires_grad:
            _accum(a, out.grad * np.sign(a.data))

    return custom_op(np.abs(a.data), (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through strictly inside the range."""
    a = as_tensor(a)

    def backward(out):
        if a.requires_grad:
            _accum(a, out.grad * ((a.data > lo) & (a.data < hi)))

    return custom_op(np.clip(a.data, lo, hi), (a,), backward)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * take_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * ~take_a, b.shape))

    return custom_op(np.where(take_a, a.data, b.data), (a, b), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data

    def backward(out):
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * take_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * ~take_a, b.shape))

    return custom_op(np.where(take_a, a.data, b.data), (a, b), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(out):
        if not a.requires_grad:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return custom_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(out):
        if a.requires_grad:
            _accum(a, out.grad.reshape(a.shape))

    return custom_op(a.data.reshape(shape), (a,), backward)


def swapaxes(a, ax0: int, ax1: int) -> Tensor:
    a = as_tensor(a)

    def backward(out):
        if a.requires_grad:
            _accum(a, np.swapaxes(out.grad, ax0, ax1))

    return custom_op(np.swapaxes(a.data, ax0, ax1), (a,), backward)


def take(a, key) -> Tensor:
    """Index/slice a tensor; the backward pass scatter-adds into place."""
    a = as_tensor(a)

    def backward(out):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, key, out.grad)
            _accum(a, buf)

    return custom_op(a.data[key], (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(out):
        pieces = np.split(out.grad, splits, axis=axis)
        for t, g in zip(ts, pieces):
            if t.requires_grad:
                _accum(t, g)

    return custom_op(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def backward(out):
        for i, t in enumerate(ts):
            if t.requires_grad:
                _accum(t, np.take(out.grad, i, axis=axis))

    return custom_op(np.stack([t.data for t in ts], axis=axis), ts, backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along one axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(out):
        if a.requires_grad:
            g = out.grad
            _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return custom_op(y, (a,), backward)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with affine parameters."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    xn = (a.data - mu) / s
    y = xn * gamma.data + beta.data

    def backward(out):
        g = out.grad
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * xn, gamma.shape))
        if beta.requires_grad:
            _accum(beta, _unbroadcast(g, beta.shape))
        if a.requires_grad:
            gxn = g * gamma.data
            _accum(a, (gxn - gxn.mean(axis=-1, keepdims=True) - xn * (gxn * xn).mean(axis=-1, keepdims=True)) / s)

    return custom_op(y, (a, gamma, beta), backward)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention.

    Without a mask, operands may carry leading batch axes: ``q (..., n, d)``,
    ``k (..., m, d)``, ``v (..., m, dv)``. With a boolean mask of shape
    ``(n, m)`` (True = may attend), operands must be 2-d; masked keys are
    excluded from the reduction outright, so they get exactly zero weight no
    matter how large their logits are. A row with no allowed key raises
    MaskError, signalling a malformed isolation mask.
    """
    scale = 1.0 / math.sqrt(q.shape[-1])
    if mask is None:
        logits = matmul(q, swapaxes(k, -1, -2)) * scale
        return matmul(softmax(logits, axis=-1), v)

    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("masked attention expects 2-d q, k, v")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (q.shape[0], k.shape[0]):
        raise ShapeError(f"mask shape {mask.shape} does not match ({q.shape[0]}, {k.shape[0]})")
    empty = ~mask.any(axis=1)
    if empty.any():
        raise MaskError(f"query rows {np.flatnonzero(empty).tolist()} have no unmasked key")

    groups: dict[bytes, list[int]] = {}
    for i, row in enumerate(mask):
        groups.setdefault(row.tobytes(), []).append(i)

    row_order: list[np.ndarray] = []
    blocks: list[Tensor] = []
    for key, rows in groups.items():
        cols = np.flatnonzero(np.frombuffer(key, dtype=bool))
        rows = np.asarray(rows)
        qs, ks, vs = take(q, rows), take(k, cols), take(v, cols)
        blocks.append(matmul(softmax(matmul(qs, ks.T) * scale, axis=-1), vs))
        row_order.append(rows)
    perm = np.argsort(np.concatenate(row_order))
    return take(concat(blocks, axis=0), perm)


def grad_check(
    f: Callable[[], Tensor],
    wrt: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor; it must be a
    pure, deterministic function of the tensors in ``wrt`` (it is re-invoked
    with perturbed data for every probed coordinate). Returns the max over
    probed coordinates of ``|ad - fd| / max(1, |fd|)``. By default every
    coordinate is probed; ``max_coords_per_tensor`` limits the probes per
    tensor to a random subset, for large parameter sets.
    """
    tensors = [wrt] if isinstance(wrt, Tensor) else list(wrt)
    for t in tensors:
        t.grad = None
    out = f()
    out.backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    for t in tensors:
        t.grad = None

    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords_per_tensor is not None and flat.size > max_coords_per_tensor:
            idxs = (rng or np.random.default_rng(0)).choice(flat.size, size=max_coords_per_tensor, replace=False)
        for i in idxs:
            old = flat[i]
            flat[i] = old + eps
            f_plus = float(f().data)
            flat[i] = old - eps
            f_minus = float(f().data)
            flat[i] = old
            fd = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, abs(gflat[i] - fd) / max(1.0, abs(fd)))
    return worst
