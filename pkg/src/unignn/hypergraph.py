"""Hypergraph storage: a dual CSR incidence structure and its constructions.

An :class:`IncidenceStructure` keeps two ragged relations side by side, the
composition relation (edge -> sorted member vertices) and the incidence
relation (vertex -> sorted incident edges). Both are stored as
``offsets``/``indices`` pairs so the segment kernels can consume them
without conversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyEdge,
    EmptyVisibleSet,
    NoVertices,
    NotABijection,
    VertexIdOutOfRange,
)


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def _ragged(lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    sizes = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    offsets = np.zeros(len(lists) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    if offsets[-1]:
        indices = np.concatenate([np.asarray(x, dtype=np.int64) for x in lists if len(x)])
    else:
        indices = np.zeros(0, dtype=np.int64)
    return offsets, indices


def _transpose(offsets: np.ndarray, indices: np.ndarray, num_targets: int):
    """Transpose a CSR relation; rows of the result are sorted ascending."""
    rows = np.repeat(np.arange(len(offsets) - 1, dtype=np.int64), np.diff(offsets))
    order = np.argsort(indices, kind="stable")
    t_indices = rows[order]
    counts = np.bincount(indices, minlength=num_targets)
    t_offsets = np.zeros(num_targets + 1, dtype=np.int64)
    np.cumsum(counts, out=t_offsets[1:])
    return t_offsets, t_indices


@dataclass(frozen=True, eq=False)
class IncidenceStructure:
    """Hypergraph ``H = (V, E)`` with both incidence relations materialized.

    Attributes
    ----------
    num_vertices : int
    edge_offsets, edge_indices : ndarray
        CSR form of ``edge_members``.
    vertex_offsets, vertex_indices : ndarray
        CSR form of ``vertex_incident``.
    symmetric : bool
        True when ``vertex_incident`` is the exact transpose of
        ``edge_members``. The graph-reduction construction is asymmetric.
    """

    num_vertices: int
    edge_offsets: np.ndarray
    edge_indices: np.ndarray
    vertex_offsets: np.ndarray
    vertex_indices: np.ndarray
    symmetric: bool = True

    @property
    def num_edges(self) -> int:
        return len(self.edge_offsets) - 1

    @property
    def num_pairs(self) -> int:
        return len(self.edge_indices)

    @property
    def edge_sizes(self) -> np.ndarray:
        return np.diff(self.edge_offsets)

    @property
    def vertex_counts(self) -> np.ndarray:
        return np.diff(self.vertex_offsets)

    def members(self, e: int) -> np.ndarray:
        return self.edge_indices[self.edge_offsets[e]:self.edge_offsets[e + 1]]

    def incident(self, i: int) -> np.ndarray:
        return self.vertex_indices[self.vertex_offsets[i]:self.vertex_offsets[i + 1]]

    @property
    def edge_members(self) -> list[list[int]]:
        return [self.members(e).tolist() for e in range(self.num_edges)]

    @property
    def vertex_incident(self) -> list[list[int]]:
        return [self.incident(i).tolist() for i in range(self.num_vertices)]

    def edges(self) -> list[tuple[int, ...]]:
        return [tuple(m) for m in self.edge_members]

    def same_structure(self, other: "IncidenceStructure") -> bool:
        return (
            self.num_vertices == other.num_vertices
            and self.symmetric == other.symmetric
            and np.array_equal(self.edge_offsets, other.edge_offsets)
            and np.array_equal(self.edge_indices, other.edge_indices)
            and np.array_equal(self.vertex_offsets, other.vertex_offsets)
            and np.array_equal(self.vertex_indices, other.vertex_indices)
        )

    def to_dict(self) -> dict:
        return {"num_vertices": self.num_vertices, "hyperedges": self.edge_members}

    def __repr__(self) -> str:
        return (f"IncidenceStructure(num_vertices={self.num_vertices}, "
                f"num_edges={self.num_edges}, symmetric={self.symmetric})")


@dataclass(frozen=True)
class DegreeInfo:
    d_vertex: np.ndarray
    d_edge: np.ndarray


@dataclass(frozen=True)
class BipartiteIncidenceGraph:
    """Incidence graph: left side vertices, right side hyperedges."""

    num_left: int
    num_right: int
    pairs: np.ndarray  # (P, 2) rows of (vertex, hyperedge)

    def pair_set(self) -> set[tuple[int, int]]:
        return {(int(v), int(e)) for v, e in self.pairs}


def build(num_vertices: int, edges: Iterable[Iterable[int]]) -> IncidenceStructure:
    """Build a symmetric incidence structure.

    Each edge is treated as a set (sorted, deduplicated). Duplicate edges are
    kept as distinct hyperedges; edge ids follow input order.
    """
    if num_vertices <= 0:
        raise NoVertices(f"hypergraph needs at least one vertex, got {num_vertices}")
    members = []
    for k, edge in enumerate(edges):
        ids = np.unique(np.asarray(list(edge), dtype=np.int64))
        if ids.size == 0:
            raise EmptyEdge(f"hyperedge {k} is empty")
        if ids[0] < 0 or ids[-1] >= num_vertices:
            bad = ids[(ids < 0) | (ids >= num_vertices)][0]
            raise VertexIdOutOfRange(
                f"hyperedge {k}: vertex id {bad} outside [0, {num_vertices})")
        members.append(ids)
    e_off, e_idx = _ragged(members)
    v_off, v_idx = _transpose(e_off, e_idx, num_vertices)
    return IncidenceStructure(num_vertices, _frozen(e_off), _frozen(e_idx),
                              _frozen(v_off), _frozen(v_idx), True)


def add_self_loops(H: IncidenceStructure) -> IncidenceStructure:
    """Append a singleton edge ``{i}`` for every vertex that lacks one."""
    has_loop = np.zeros(H.num_vertices, dtype=bool)
    singles = np.flatnonzero(H.edge_sizes == 1)
    has_loop[H.edge_indices[H.edge_offsets[singles]]] = True
    missing = np.flatnonzero(~has_loop)
    if missing.size == 0:
        return H
    return build(H.num_vertices, H.edge_members + [[int(i)] for i in missing])


def degrees(H: IncidenceStructure) -> DegreeInfo:
    """Vertex degree = number of incident edges; edge degree = mean member degree."""
    d_vertex = H.vertex_counts.astype(np.float64)
    sizes = H.edge_sizes
    sums = np.zeros(H.num_edges)
    nonempty = sizes > 0
    if H.num_pairs:
        sums[nonempty] = np.add.reduceat(d_vertex[H.edge_indices], H.edge_offsets[:-1][nonempty])
    d_edge = np.divide(sums, sizes, out=np.zeros_like(sums), where=nonempty)
    return DegreeInfo(d_vertex, d_edge)


def incidence_graph(H: IncidenceStructure) -> BipartiteIncidenceGraph:
    edge_ids = np.repeat(np.arange(H.num_edges, dtype=np.int64), H.edge_sizes)
    pairs = np.stack([H.edge_indices, edge_ids], axis=1) if H.num_pairs else np.zeros((0, 2), np.int64)
    return BipartiteIncidenceGraph(H.num_vertices, H.num_edges, pairs)


def induce(H: IncidenceStructure, visible) -> tuple[IncidenceStructure, np.ndarray]:
    """Sub-hypergraph on ``visible`` vertices.

    Edges are intersected with the visible set; edges that become empty are
    dropped, singletons are kept. Returns the new structure and an array
    mapping old vertex ids to new ones (-1 for removed vertices).
    """
    keep = np.unique(np.asarray(list(visible), dtype=np.int64))
    if keep.size == 0:
        raise EmptyVisibleSet("visible vertex set is empty")
    if keep[0] < 0 or keep[-1] >= H.num_vertices:
        raise VertexIdOutOfRange(f"visible ids must lie in [0, {H.num_vertices})")
    old_to_new = np.full(H.num_vertices, -1, dtype=np.int64)
    old_to_new[keep] = np.arange(keep.size)
    edges = []
    for e in range(H.num_edges):
        m = old_to_new[H.members(e)]
        m = m[m >= 0]
        if m.size:
            edges.append(m)
    return build(int(keep.size), edges), old_to_new


def reduction_from_graph(adjacency: Sequence[Iterable[int]], with_self: bool = True) -> IncidenceStructure:
    """Asymmetric structure reproducing a graph neighbourhood.

    Edge ``e_j`` is the singleton ``{j}``; vertex ``i`` is declared incident
    to ``e_j`` for every neighbour ``j`` (and to ``e_i`` when ``with_self``).
    """
    n = len(adjacency)
    if n == 0:
        raise NoVertices("adjacency is empty")
    incident = []
    for i, nbrs in enumerate(adjacency):
        s = set(int(j) for j in nbrs)
        if with_self:
            s.add(i)
        for j in s:
            if j < 0 or j >= n:
                raise VertexIdOutOfRange(f"vertex {i}: neighbour {j} outside [0, {n})")
        incident.append(sorted(s))
    e_off = np.arange(n + 1, dtype=np.int64)
    e_idx = np.arange(n, dtype=np.int64)
    v_off, v_idx = _ragged(incident)
    return IncidenceStructure(n, _frozen(e_off), _frozen(e_idx), _frozen(v_off), _frozen(v_idx), False)


def permute(H: IncidenceStructure, sigma) -> IncidenceStructure:
    """Relabel vertex ``v`` as ``sigma[v]``; edge order is preserved."""
    sigma = np.asarray(sigma, dtype=np.int64)
    n = H.num_vertices
    if sigma.shape != (n,) or not np.array_equal(np.sort(sigma), np.arange(n)):
        raise NotABijection(f"sigma is not a permutation of range({n})")
    return build(n, [sigma[H.members(e)] for e in range(H.num_edges)])


def random_hypergraph(rng: np.random.Generator, num_vertices: int, num_edges: int,
                      max_edge_size: int | None = None) -> IncidenceStructure:
    """Uniformly sized random edges; used by property suites and fixtures."""
    max_edge_size = max_edge_size or num_vertices
    edges = []
    for _ in range(num_edges):
        k = int(rng.integers(1, min(max_edge_size, num_vertices) + 1))
        edges.append(rng.choice(num_vertices, size=k, replace=False))
    return build(num_vertices, edges)
