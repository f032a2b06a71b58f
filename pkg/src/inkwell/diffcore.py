"""Minimal reverse-mode differentiation over float64 NumPy arrays.

A :class:`Tape` records every tensor in creation order, which is already a
topological order of the computation graph, so backpropagation is a single
reverse sweep.  The operation set is deliberately small: exactly what the
encoder, sampler, and loss terms need.  Anything fancier (general
broadcasting, views, in-place ops) is out of scope on purpose.

All values are stored as ``float64``; gradients accumulate additively, so a
tensor consumed by several downstream nodes receives the sum of its
contributions.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    """A node in the computation graph.

    Attributes:
        values: forward value, always float64.
        grad: accumulated gradient, allocated lazily during backward.
        requires_grad: whether gradients should flow into this node.
    """

    __slots__ = ("values", "grad", "requires_grad", "tape", "_parents", "_backward")

    def __init__(self, values: Array, tape: "Tape", requires_grad: bool,
                 parents: tuple = (), backward: Optional[Callable[[Array], None]] = None):
        self.values = values
        self.grad: Optional[Array] = None
        self.requires_grad = requires_grad
        self.tape = tape
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])


class Tape:
    """Ordered record of tensors; creation order doubles as topological order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def _make(self, values: Array, requires_grad: bool, parents: tuple = (),
              backward: Optional[Callable] = None) -> Tensor:
        t = Tensor(np.asarray(values, dtype=np.float64), self, requires_grad, parents, backward)
        self.nodes.append(t)
        return t

    def leaf(self, values: Array, requires_grad: bool = True) -> Tensor:
        return self._make(np.array(values, dtype=np.float64), requires_grad)

    def constant(self, values: Array) -> Tensor:
        return self._make(np.asarray(values, dtype=np.float64), False)


def _accum(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum ``g`` down to ``shape`` (inverse of NumPy broadcast)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _same_tape(*ts: Tensor) -> Tape:
    tape = ts[0].tape
    if any(t.tape is not tape for t in ts):
        raise ValueError("operands belong to different tapes")
    return tape


def _binary(a: Tensor, b: Tensor, values: Array,
            da: Callable[[Array], Array], db: Callable[[Array], Array]) -> Tensor:
    tape = _same_tape(a, b)
    rg = a.requires_grad or b.requires_grad

    def bw(g: Array) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(da(g), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(db(g), b.shape))

    return tape._make(values, rg, (a, b), bw if rg else None)


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.values + b.values, lambda g: g, lambda g: g)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.values - b.values, lambda g: g, lambda g: -g)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.values * b.values,
                   lambda g: g * b.values, lambda g: g * a.values)


def divide(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.values / b.values,
                   lambda g: g / b.values,
                   lambda g: -g * a.values / (b.values * b.values))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    rg = a.requires_grad or b.requires_grad

    def bw(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g @ b.values.T)
        if b.requires_grad:
            _accum(b, a.values.T @ g)

    return tape._make(a.values @ b.values, rg, (a, b), bw if rg else None)


def gather(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Row lookup, e.g. token ids into an embedding table."""
    idx = np.asarray(indices, dtype=np.int64)
    rg = table.requires_grad

    def bw(g: Array) -> None:
        acc = np.zeros_like(table.values)
        np.add.at(acc, idx, g)
        _accum(table, acc)

    return table.tape._make(table.values[idx], rg, (table,), bw if rg else None)


# ------------------------------------------------------------ nonlinearities

def relu(a: Tensor) -> Tensor:
    mask = a.values > 0.0

    def bw(g: Array) -> None:
        _accum(a, g * mask)

    return a.tape._make(a.values * mask, a.requires_grad, (a,),
                        bw if a.requires_grad else None)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.values)

    def bw(g: Array) -> None:
        _accum(a, g * sign)

    return a.tape._make(np.abs(a.values), a.requires_grad, (a,),
                        bw if a.requires_grad else None)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; exact ties split the gradient evenly."""
    av, bv = a.values, b.values
    wa = np.where(av > bv, 1.0, np.where(av == bv, 0.5, 0.0))
    return _binary(a, b, np.maximum(av, bv),
                   lambda g: g * wa, lambda g: g * (1.0 - wa))


def dropout(a: Tensor, p: float, rng: Optional[np.random.Generator] = None,
            train: bool = True) -> Tensor:
    """Inverted dropout: scales kept activations by 1/(1-p) during training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        def bw_id(g: Array) -> None:
            _accum(a, g)
        return a.tape._make(a.values.copy(), a.requires_grad, (a,),
                            bw_id if a.requires_grad else None)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(a.values.shape) >= p) / (1.0 - p)

    def bw(g: Array) -> None:
        _accum(a, g * keep)

    return a.tape._make(a.values * keep, a.requires_grad, (a,),
                        bw if a.requires_grad else None)


# ---------------------------------------------------------------- reductions

def tensor_sum(a: Tensor) -> Tensor:
    def bw(g: Array) -> None:
        _accum(a, np.full_like(a.values, float(g)))

    return a.tape._make(np.asarray(a.values.sum()), a.requires_grad, (a,),
                        bw if a.requires_grad else None)


def mean(a: Tensor) -> Tensor:
    n = a.values.size

    def bw(g: Array) -> None:
        _accum(a, np.full_like(a.values, float(g) / n))

    return a.tape._make(np.asarray(a.values.mean()), a.requires_grad, (a,),
                        bw if a.requires_grad else None)


# ------------------------------------------------------- softmax and friends

def _rows(x: Array) -> Array:
    return x if x.ndim == 2 else x.reshape(1, -1)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax (1-D input is treated as a single row)."""
    x = _rows(a.values)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = (e / e.sum(axis=1, keepdims=True)).reshape(a.values.shape)

    def bw(g: Array) -> None:
        sr, gr = _rows(s), _rows(g)
        gx = sr * (gr - (gr * sr).sum(axis=1, keepdims=True))
        _accum(a, gx.reshape(a.values.shape))

    return a.tape._make(s, a.requires_grad, (a,), bw if a.requires_grad else None)


def log_softmax(a: Tensor) -> Tensor:
    x = _rows(a.values)
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = (z - lse).reshape(a.values.shape)
    soft = np.exp(z - lse)

    def bw(g: Array) -> None:
        gr = _rows(g)
        gx = gr - soft * gr.sum(axis=1, keepdims=True)
        _accum(a, gx.reshape(a.values.shape))

    return a.tape._make(out, a.requires_grad, (a,), bw if a.requires_grad else None)


# --------------------------------------------------------------- structure

def sort_ascending(a: Tensor) -> tuple[Tensor, Array]:
    """Sort a 1-D tensor ascending; returns (sorted tensor, permutation).

    ``perm`` maps output slots to input positions.  The backward pass routes
    each output gradient to the input position it came from, so the chain is
    exact even with repeated values (stable ordering breaks ties).
    """
    if a.values.ndim != 1:
        raise ValueError("sort_ascending expects a 1-D tensor")
    perm = np.argsort(a.values, kind="stable")

    def bw(g: Array) -> None:
        acc = np.zeros_like(a.values)
        acc[perm] = g
        _accum(a, acc)

    out = a.tape._make(a.values[perm], a.requires_grad, (a,),
                       bw if a.requires_grad else None)
    return out, perm


def concatenate(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    tape = _same_tape(*parts)
    sizes = [p.values.shape[axis] for p in parts]
    rg = any(p.requires_grad for p in parts)

    def bw(g: Array) -> None:
        offset = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            _accum(p, g[tuple(sl)])
            offset += size

    return tape._make(np.concatenate([p.values for p in parts], axis=axis),
                      rg, tuple(parts), bw if rg else None)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def bw(g: Array) -> None:
        _accum(a, g.reshape(a.values.shape))

    return a.tape._make(a.values.reshape(shape), a.requires_grad, (a,),
                        bw if a.requires_grad else None)


def conv1d_depthwise(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-D convolution with zero padding.

    ``x`` is (n, d), ``kernel`` is (w, d) with odd ``w``; output is (n, d)
    where out[i, c] = sum_o kernel[o, c] * x[i + o - w//2, c].
    """
    tape = _same_tape(x, kernel)
    n, d = x.values.shape
    w, dk = kernel.values.shape
    if dk != d:
        raise ValueError(f"kernel channels {dk} != input channels {d}")
    if w % 2 != 1:
        raise ValueError(f"kernel width must be odd, got {w}")
    r = w // 2
    xpad = np.zeros((n + 2 * r, d))
    xpad[r:r + n] = x.values
    out = np.zeros((n, d))
    for o in range(w):
        out += kernel.values[o] * xpad[o:o + n]
    rg = x.requires_grad or kernel.requires_grad

    def bw(g: Array) -> None:
        if x.requires_grad:
            gpad = np.zeros_like(xpad)
            for o in range(w):
                gpad[o:o + n] += kernel.values[o] * g
            _accum(x, gpad[r:r + n])
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.values)
            for o in range(w):
                gk[o] = (g * xpad[o:o + n]).sum(axis=0)
            _accum(kernel, gk)

    return tape._make(out, rg, (x, kernel), bw if rg else None)


# ----------------------------------------------------------------- backward

def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every contributing node."""
    if loss.tape is not tape:
        raise ValueError("loss does not belong to this tape")
    if loss.values.size != 1:
        raise ValueError("backward expects a scalar loss")
    loss.grad = np.ones_like(loss.values)
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


def grad_check(f: Callable[[Tensor], Tensor], x: Array, eps: float = 1e-5) -> float:
    """Compare tape gradients of ``f`` against central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    ``f`` must build its computation on the tape of the tensor it receives
    and return a scalar tensor.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    leaf = tape.leaf(x.copy())
    out = f(leaf)
    if out.values.size != 1:
        raise ValueError("grad_check needs a scalar-valued f")
    backward(tape, out)
    analytic = (leaf.grad if leaf.grad is not None else np.zeros_like(x)).reshape(-1)

    def value_at(v: Array) -> float:
        t = Tape()
        return f(t.leaf(v)).item()

    numeric = np.zeros(x.size)
    flat = x.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros(x.size)
        bump[i] = eps
        hi = value_at((flat + bump).reshape(x.shape))
        lo = value_at((flat - bump).reshape(x.shape))
        numeric[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0
