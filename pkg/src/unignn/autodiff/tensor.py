"""Dense 2-D tensor with reverse-mode gradient recording.

Every op output keeps references to its parents plus a closure mapping the
output gradient to parent gradients. :meth:`Tensor.backward` linearizes
that record into topological order (the tape) and replays it in reverse.
"""

from __future__ import annotations

import json
import os
from typing import Callable, Sequence

import numpy as np

from ..errors import NonFiniteError, NonScalarLoss

_debug_sink = None


def set_debug(path: str | None) -> None:
    """Enable per-op JSON-lines tracing (forward/backward norms, NaN checks)."""
    global _debug_sink
    if _debug_sink is not None:
        _debug_sink.close()
    _debug_sink = open(path, "a") if path else None


if os.environ.get("UNIGNN_DEBUG"):
    set_debug(os.environ["UNIGNN_DEBUG"])


def debug_enabled() -> bool:
    return _debug_sink is not None


def _trace(phase: str, op: str, value: np.ndarray) -> None:
    finite = bool(np.all(np.isfinite(value)))
    _debug_sink.write(json.dumps({"phase": phase, "op": op, "shape": list(value.shape),
                                  "norm": float(np.linalg.norm(value)) if finite else None,
                                  "finite": finite}) + "\n")
    _debug_sink.flush()
    if not finite:
        raise NonFiniteError(f"non-finite values in {phase} of {op}")


class Tensor:
    """2-D real array with an optional gradient slot.

    Parameters
    ----------
    data : array_like
        Converted to a 2-D floating array; scalars become ``(1, 1)``.
    requires_grad : bool
        Leaves with ``requires_grad`` accumulate into ``grad`` on backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Callable | None = None, op: str = "leaf"):
        a = np.asarray(data, dtype=dtype)
        if not np.issubdtype(a.dtype, np.floating):
            a = a.astype(np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim != 2:
            raise ValueError(f"Tensor must be 2-D, got shape {a.shape}")
        self.data = a
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(a) if requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward
        self.op = op
        if _debug_sink is not None:
            _trace("forward", op, a)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every ``requires_grad`` leaf."""
        if seed is None:
            if self.shape != (1, 1):
                raise NonScalarLoss(f"backward needs a (1, 1) loss, got {self.shape}")
            seed = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(seed, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad += g
                continue
            if _debug_sink is not None:
                _trace("backward", node.op, g)
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Create an op output, recording parents only when a gradient can flow."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, op=op)


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()
