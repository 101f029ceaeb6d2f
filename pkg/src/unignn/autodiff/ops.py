"""Dense differentiable ops.

Broadcasting is limited to row vectors ``(1, m)``, column vectors ``(n, 1)``
and scalars ``(1, 1)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import EmptyMask, InvalidProbability, LabelOutOfRange, ShapeMismatch
from .tensor import Tensor, as_tensor, make

ATTENTION_SLOPE = 0.2


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeMismatch(f"{op}: cannot broadcast {a} with {b}")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(k for k in range(2) if shape[k] == 1 and g.shape[k] != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape(a.shape, b.shape, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape(a.shape, b.shape, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product with row/column/scalar broadcasting."""
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape(a.shape, b.shape, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make(a.data * b.data, (a, b), backward, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make(x.data * c, (x,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return make(a.data @ b.data, (a, b), backward, "matmul")


def concat_cols(xs: Sequence[Tensor]) -> Tensor:
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def backward(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(xs)))

    return make(np.concatenate([x.data for x in xs], axis=1), tuple(xs), backward, "concat_cols")


def row_slice(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]``; repeated indices accumulate on backward."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    if index.size and (index.min() < -n or index.max() >= n):
        raise ShapeMismatch(f"row_slice: index outside [0, {n})")
    return make(x.data[index], (x,), backward, "row_slice")


def sum_all(x: Tensor) -> Tensor:
    return make(x.data.sum(keepdims=True).reshape(1, 1), (x,),
                lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum_all")


def col_sum(x: Tensor) -> Tensor:
    return make(x.data.sum(axis=0, keepdims=True), (x,),
                lambda g: (np.broadcast_to(g, x.shape).copy(),), "col_sum")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = ATTENTION_SLOPE) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise InvalidProbability(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def row_l2_normalize(x: Tensor) -> Tensor:
    """Divide every row by its L2 norm; all-zero rows stay zero."""
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    inv = np.divide(1.0, norm, out=np.zeros_like(norm), where=norm > 0)
    y = x.data * inv

    def backward(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) * inv,)

    return make(y, (x,), backward, "row_l2_normalize")


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over the masked rows.

    ``mask`` may be a boolean row mask or an index array; ``None`` uses all
    rows.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if mask is None:
        rows = np.arange(n)
    else:
        mask = np.asarray(mask)
        rows = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if rows.size == 0:
        raise EmptyMask("cross-entropy mask selects no rows")
    y = labels[rows]
    if y.min() < 0 or y.max() >= c:
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    logp = log_softmax_rows(logits.data[rows])
    k = rows.size
    loss = -logp[np.arange(k), y].sum() / k

    def backward(g):
        d = np.exp(logp)
        d[np.arange(k), y] -= 1.0
        out = np.zeros_like(logits.data)
        np.add.at(out, rows, d * (g.item() / k))
        return (out,)

    return make(np.array([[loss]], dtype=logits.dtype), (logits,), backward, "softmax_cross_entropy")
