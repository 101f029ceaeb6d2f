"""Segment (ragged group) reductions over CSR index maps.

A :class:`SegmentMap` groups rows of a source matrix into ``m`` targets:
group ``g`` gathers ``indices[offsets[g]:offsets[g+1]]``. Sum and mean are
executed as CSR sparse-dense products, which reduce every group
sequentially in index order, so results are bit-reproducible.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..errors import EmptyGroup, IndexOutOfRange, ShapeMismatch
from .tensor import Tensor, make


class SegmentMap:
    """Ragged grouping of ``num_sources`` rows into ``num_groups`` targets."""

    def __init__(self, offsets, indices, num_sources: int):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.num_sources = int(num_sources)
        if self.offsets.ndim != 1 or self.offsets.size == 0 or self.offsets[0] != 0:
            raise IndexOutOfRange("offsets must be a 1-D array starting at 0")
        if np.any(np.diff(self.offsets) < 0) or self.offsets[-1] != self.indices.size:
            raise IndexOutOfRange("offsets must be non-decreasing and end at len(indices)")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.num_sources):
            raise IndexOutOfRange(f"segment index outside [0, {self.num_sources})")

    @classmethod
    def from_groups(cls, groups, num_sources: int) -> "SegmentMap":
        sizes = [len(g) for g in groups]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        flat = np.concatenate([np.asarray(g, dtype=np.int64) for g in groups]) if sum(sizes) else []
        return cls(offsets, flat, num_sources)

    @property
    def num_groups(self) -> int:
        return self.offsets.size - 1

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def group_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_groups, dtype=np.int64), self.sizes)

    def matrix(self, kind: str, dtype, transpose: bool = False) -> sp.csr_matrix:
        """Cached CSR operator (``kind`` is ``"sum"`` or ``"mean"``) in ``dtype``."""
        key = (kind, np.dtype(dtype).str, transpose)
        cache = self.__dict__.setdefault("_matrices", {})
        if key not in cache:
            if kind == "sum":
                w = np.ones(self.indices.size)
            else:
                inv = np.divide(1.0, self.sizes, out=np.zeros(self.num_groups), where=self.sizes > 0)
                w = inv[self.group_ids]
            m = sp.csr_matrix((w.astype(dtype), self.indices, self.offsets),
                              shape=(self.num_groups, self.num_sources))
            cache[key] = m.T.tocsr() if transpose else m
        return cache[key]

    def require_nonempty(self, op: str) -> None:
        if self.num_groups and self.sizes.min() == 0:
            g = int(np.flatnonzero(self.sizes == 0)[0])
            raise EmptyGroup(f"{op}: group {g} is empty")


def _spmm(smap: SegmentMap, kind: str, x: np.ndarray, transpose: bool = False) -> np.ndarray:
    out = smap.matrix(kind, x.dtype, transpose) @ x
    return np.ascontiguousarray(out, dtype=x.dtype)


def _check_rows(x: Tensor, smap: SegmentMap, op: str) -> None:
    if x.shape[0] != smap.num_sources:
        raise ShapeMismatch(f"{op}: map expects {smap.num_sources} source rows, got {x.shape[0]}")


def segment_sum(x: Tensor, smap: SegmentMap) -> Tensor:
    """Row ``g`` = sum of gathered source rows; empty groups give zero rows."""
    _check_rows(x, smap, "segment_sum")
    return make(_spmm(smap, "sum", x.data), (x,),
                lambda g: (_spmm(smap, "sum", g, True),), "segment_sum")


def segment_mean(x: Tensor, smap: SegmentMap) -> Tensor:
    """Row ``g`` = mean of gathered source rows; every group must be non-empty."""
    _check_rows(x, smap, "segment_mean")
    smap.require_nonempty("segment_mean")
    return make(_spmm(smap, "mean", x.data), (x,),
                lambda g: (_spmm(smap, "mean", g, True),), "segment_mean")


def segment_softmax(scores: Tensor, smap: SegmentMap) -> Tensor:
    """Softmax of score rows within each group, column by column.

    The map must partition the score rows (every row in exactly one group).
    The group maximum is subtracted before exponentiation.
    """
    _check_rows(scores, smap, "segment_softmax")
    smap.require_nonempty("segment_softmax")
    if smap.indices.size != scores.shape[0] or np.bincount(
            smap.indices, minlength=scores.shape[0]).max(initial=1) != 1:
        raise IndexOutOfRange("segment_softmax: map must partition the score rows")
    idx, seg, starts = smap.indices, smap.group_ids, smap.offsets[:-1]
    s = scores.data[idx]
    if s.shape[0] == 0:
        return make(scores.data.copy(), (scores,), lambda g: (g,), "segment_softmax")
    gmax = np.maximum.reduceat(s, starts, axis=0)
    e = np.exp(s - gmax[seg])
    denom = np.add.reduceat(e, starts, axis=0)
    y_sorted = e / denom[seg]
    y = np.empty_like(scores.data)
    y[idx] = y_sorted

    def backward(g):
        gs = g[idx]
        dot = np.add.reduceat(gs * y_sorted, starts, axis=0)
        out = np.empty_like(g)
        out[idx] = y_sorted * (gs - dot[seg])
        return (out,)

    return make(y, (scores,), backward, "segment_softmax")
