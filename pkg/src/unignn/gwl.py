"""1-dimensional generalized Weisfeiler-Leman color refinement for hypergraphs.

One refinement step recolors every hyperedge by the multiset of its member
colors, then every vertex by the multiset of ``(own color, edge color)``
pairs over its incident edges. Nested multiset labels are compressed to
integers through a :class:`ColorDictionary`; sharing one dictionary between
two hypergraphs makes their colors comparable.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import TooLargeForBruteForce
from .hypergraph import IncidenceStructure

_INIT, _EDGE, _VERTEX = 0, 1, 2
BRUTE_FORCE_LIMIT = 8


class ColorDictionary:
    """Injective map from serialized multiset signatures to dense integer codes.

    Signatures are flat integer tuples: a kind tag, then (for vertices) the
    vertex's own color, then a length prefix and the sorted multiset. Code 0
    is reserved for the initial color shared by all vertices.
    """

    def __init__(self):
        self._codes: dict[tuple, int] = {(_INIT,): 0}
        self._signatures: list[tuple] = [(_INIT,)]

    def __len__(self) -> int:
        return len(self._signatures)

    def code(self, signature: tuple) -> int:
        c = self._codes.get(signature)
        if c is None:
            c = len(self._signatures)
            self._codes[signature] = c
            self._signatures.append(signature)
        return c

    def signature(self, code: int) -> tuple:
        return self._signatures[code]

    def edge_code(self, member_colors) -> int:
        ms = sorted(member_colors)
        return self.code((_EDGE, len(ms), *ms))

    def vertex_code(self, own: int, edge_colors) -> int:
        ms = sorted(edge_colors)
        return self.code((_VERTEX, own, len(ms), *ms))


@dataclass
class ColorAssignment:
    vertex_colors: np.ndarray
    edge_colors: np.ndarray | None
    iteration: int
    dictionary: ColorDictionary

    def histogram(self) -> tuple[tuple[int, int], ...]:
        return histogram(self.vertex_colors)


@dataclass
class RefinementTrace:
    histograms: list = field(default_factory=list)
    stable_iteration: int | None = None
    final: ColorAssignment | None = None

    @property
    def num_classes(self) -> list[int]:
        return [len(h) for h in self.histograms]


@dataclass(frozen=True)
class Verdict:
    verdict: str  # "distinguishable" | "not_distinguished"
    iteration: int

    @property
    def distinguishable(self) -> bool:
        return self.verdict == "distinguishable"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "iteration": self.iteration}


def histogram(colors) -> tuple[tuple[int, int], ...]:
    return tuple(sorted(Counter(np.asarray(colors).tolist()).items()))


def partition(colors) -> np.ndarray:
    """Canonical block labels: color classes renumbered by first occurrence."""
    _, first, inverse = np.unique(np.asarray(colors), return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inverse]


def initial_colors(H: IncidenceStructure, dictionary: ColorDictionary | None = None) -> ColorAssignment:
    return ColorAssignment(np.zeros(H.num_vertices, dtype=np.int64), None, 0,
                           dictionary if dictionary is not None else ColorDictionary())


def refine_step(H: IncidenceStructure, colors: ColorAssignment) -> ColorAssignment:
    d = colors.dictionary
    vc = colors.vertex_colors
    edge_colors = np.array([d.edge_code(vc[H.members(e)].tolist()) for e in range(H.num_edges)],
                           dtype=np.int64)
    new = np.array([d.vertex_code(int(vc[i]), edge_colors[H.incident(i)].tolist())
                    for i in range(H.num_vertices)], dtype=np.int64)
    return ColorAssignment(new, edge_colors, colors.iteration + 1, d)


def _cap(H: IncidenceStructure) -> int:
    return H.num_vertices * max(1, H.num_edges)


def refine_to_stability(H: IncidenceStructure, max_iters: int | None = None,
                        dictionary: ColorDictionary | None = None) -> RefinementTrace:
    """Refine until the vertex partition stops changing (or ``max_iters``)."""
    max_iters = _cap(H) if max_iters is None else max_iters
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    cur = initial_colors(H, dictionary)
    trace = RefinementTrace(histograms=[cur.histogram()])
    for _ in range(max_iters):
        nxt = refine_step(H, cur)
        trace.histograms.append(nxt.histogram())
        stable = np.array_equal(partition(nxt.vertex_colors), partition(cur.vertex_colors))
        cur = nxt
        if stable:
            trace.stable_iteration = cur.iteration
            break
    trace.final = cur
    return trace


def distinguish(H1: IncidenceStructure, H2: IncidenceStructure, max_iters: int | None = None) -> Verdict:
    """Run both refinements in lockstep under one dictionary.

    Returns ``distinguishable`` at the first iteration whose vertex-color
    histograms differ. Once both partitions are stable with equal histograms,
    no later iteration can separate them (colors encode the previous color),
    so the answer is ``not_distinguished``.
    """
    d = ColorDictionary()
    a, b = initial_colors(H1, d), initial_colors(H2, d)
    if a.histogram() != b.histogram():
        return Verdict("distinguishable", 0)
    max_iters = max(_cap(H1), _cap(H2)) if max_iters is None else max_iters
    for _ in range(max_iters):
        na, nb = refine_step(H1, a), refine_step(H2, b)
        if na.histogram() != nb.histogram():
            return Verdict("distinguishable", na.iteration)
        stable = (np.array_equal(partition(na.vertex_colors), partition(a.vertex_colors))
                  and np.array_equal(partition(nb.vertex_colors), partition(b.vertex_colors)))
        a, b = na, nb
        if stable:
            break
    return Verdict("not_distinguished", a.iteration)


def local_color(H: IncidenceStructure, vertex: int, k: int,
                dictionary: ColorDictionary | None = None) -> int:
    """Color of ``vertex`` after ``k`` steps; pass a shared dictionary to compare across hypergraphs."""
    if k < 0:
        raise ValueError("k must be >= 0")
    cur = initial_colors(H, dictionary)
    for _ in range(k):
        cur = refine_step(H, cur)
    return int(cur.vertex_colors[vertex])


def _vertex_invariant(H: IncidenceStructure, i: int) -> tuple:
    sizes = H.edge_sizes
    return (len(H.incident(i)), tuple(sorted(sizes[H.incident(i)].tolist())))


def brute_force_isomorphic(H1: IncidenceStructure, H2: IncidenceStructure) -> bool:
    """Exhaustive search for a vertex bijection mapping edge multisets onto each other.

    Only bijections that preserve vertex degree and incident edge sizes are
    enumerated; any isomorphism must preserve both.
    """
    n = H1.num_vertices
    if max(n, H2.num_vertices) > BRUTE_FORCE_LIMIT:
        raise TooLargeForBruteForce(f"brute force supports at most {BRUTE_FORCE_LIMIT} vertices")
    if n != H2.num_vertices or H1.num_edges != H2.num_edges:
        return False
    target = Counter(H2.edges())
    if Counter(H1.edge_sizes.tolist()) != Counter(H2.edge_sizes.tolist()):
        return False
    inv1 = [_vertex_invariant(H1, i) for i in range(n)]
    inv2 = [_vertex_invariant(H2, i) for i in range(n)]
    if Counter(inv1) != Counter(inv2):
        return False
    classes = sorted(set(inv1))
    src = [[i for i in range(n) if inv1[i] == c] for c in classes]
    dst = [[i for i in range(n) if inv2[i] == c] for c in classes]
    edges1 = H1.edges()
    for choice in itertools.product(*(itertools.permutations(d) for d in dst)):
        f = [0] * n
        for s_block, d_block in zip(src, choice):
            for s, t in zip(s_block, d_block):
                f[s] = t
        if Counter(tuple(sorted(f[v] for v in e)) for e in edges1) == target:
            return True
    return False
