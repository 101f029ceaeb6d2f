"""Dataset bundles, the canonical JSON format, split generation and fixtures.

Canonical dataset file (UTF-8 JSON)::

    {"name": str,
     "num_vertices": int,
     "hyperedges": [[int, ...], ...],
     "features": {"dense": [[float, ...], ...]}
               | {"sparse": {"dim": int, "rows": [[[idx, val], ...], ...]}},
     "labels": [int, ...],
     "num_classes": int,
     "splits": {"<split_id>": {"train": [int], "val": [int], "test": [int]}}}

``features``, ``labels``, ``num_classes`` and ``splits`` are optional for
hypergraph-only files (as consumed by the ``gwl`` command).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvariantViolation, SchemaError
from .hypergraph import IncidenceStructure, build

# |V|, |E|, mean edge size, feature dim, classes, label rate
DATASET_STATS = {
    "dblp": dict(n=43413, edges=22535, dim=1425, classes=6, label_rate=0.040),
    "pubmed": dict(n=19717, edges=7963, dim=500, classes=3, label_rate=0.008),
    "citeseer": dict(n=3312, edges=1079, dim=3703, classes=6, label_rate=0.042),
    "cora-coauthorship": dict(n=2708, edges=1072, dim=1433, classes=7, label_rate=0.052),
    "cora-cocitation": dict(n=2708, edges=1579, dim=1433, classes=7, label_rate=0.052),
}

_ALIASES = {
    "dblp-coauthorship": "dblp", "pubmed-cocitation": "pubmed", "citeseer-cocitation": "citeseer",
    "cora": "cora-cocitation", "cora-cocite": "cora-cocitation", "cora-coauthor": "cora-coauthorship",
}


def canonical_name(name: str) -> str:
    key = name.lower().strip()
    return _ALIASES.get(key, key)


@dataclass
class DatasetBundle:
    name: str
    hypergraph: IncidenceStructure
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    splits: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return self.hypergraph.num_vertices

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def label_rate(self) -> float | None:
        if not self.splits:
            return None
        first = next(iter(self.splits.values()))
        return len(first["train"]) / self.num_vertices

    def metadata(self) -> dict:
        return {"name": self.name, "n": self.num_vertices, "edges": self.hypergraph.num_edges,
                "d": self.feature_dim, "C": self.num_classes, "label_rate": self.label_rate}

    def split(self, split_id) -> dict[str, np.ndarray]:
        key = str(split_id)
        if key not in self.splits:
            raise InvariantViolation(f"dataset {self.name!r} has no split {key!r}; "
                                     f"available: {sorted(self.splits)}")
        return self.splits[key]

    def validate(self) -> None:
        n = self.num_vertices
        if self.features.shape[0] != n:
            raise InvariantViolation(f"features have {self.features.shape[0]} rows, expected {n}")
        if self.labels.shape != (n,):
            raise InvariantViolation(f"labels have shape {self.labels.shape}, expected ({n},)")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvariantViolation(f"labels must lie in [0, {self.num_classes})")
        for sid, parts in self.splits.items():
            for part, idx in parts.items():
                if idx.size and (idx.min() < 0 or idx.max() >= n):
                    raise InvariantViolation(f"split {sid}/{part}: index outside [0, {n})")
            tr, te = set(parts.get("train", []).tolist()), set(parts.get("test", []).tolist())
            if tr & te:
                raise InvariantViolation(f"split {sid}: train and test overlap")

    def to_dict(self, sparse: bool = False) -> dict:
        if sparse:
            rows = [[[int(j), float(r[j])] for j in np.flatnonzero(r)] for r in self.features]
            feats = {"sparse": {"dim": self.feature_dim, "rows": rows}}
        else:
            feats = {"dense": self.features.tolist()}
        return {
            "name": self.name,
            "num_vertices": self.num_vertices,
            "hyperedges": self.hypergraph.edge_members,
            "features": feats,
            "labels": self.labels.tolist(),
            "num_classes": self.num_classes,
            "splits": {k: {p: v.tolist() for p, v in s.items()} for k, s in self.splits.items()},
        }


# --------------------------------------------------------------------------
# loading


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected integer, got {type(value).__name__}")
    return value


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        raise SchemaError(path, f"expected array, got {type(value).__name__}")
    return value


def _hypergraph(doc: dict) -> IncidenceStructure:
    if not isinstance(doc, dict):
        raise SchemaError("$", "top level must be an object")
    for key in ("num_vertices", "hyperedges"):
        if key not in doc:
            raise SchemaError("$", f"missing required field {key!r}")
    n = _int(doc["num_vertices"], "$.num_vertices")
    if n <= 0:
        raise SchemaError("$.num_vertices", "must be positive")
    edges = []
    for k, e in enumerate(_list(doc["hyperedges"], "$.hyperedges")):
        e = _list(e, f"$.hyperedges[{k}]")
        if not e:
            raise SchemaError(f"$.hyperedges[{k}]", "hyperedge is empty")
        for j, v in enumerate(e):
            v = _int(v, f"$.hyperedges[{k}][{j}]")
            if not 0 <= v < n:
                raise SchemaError(f"$.hyperedges[{k}][{j}]", f"vertex id {v} outside [0, {n})")
        edges.append(e)
    return build(n, edges)


def _features(doc, n: int) -> np.ndarray:
    if not isinstance(doc, dict) or len(doc) != 1 or next(iter(doc)) not in ("dense", "sparse"):
        raise SchemaError("$.features", "expected {'dense': ...} or {'sparse': ...}")
    if "dense" in doc:
        rows = _list(doc["dense"], "$.features.dense")
        if len(rows) != n:
            raise SchemaError("$.features.dense", f"expected {n} rows, got {len(rows)}")
        try:
            x = np.asarray(rows, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise SchemaError("$.features.dense", f"rows must be equal-length numeric arrays ({exc})")
        if x.ndim != 2:
            raise SchemaError("$.features.dense", "rows must be equal-length numeric arrays")
        return x
    sp = doc["sparse"]
    if not isinstance(sp, dict) or "dim" not in sp or "rows" not in sp:
        raise SchemaError("$.features.sparse", "expected {'dim': int, 'rows': [...]}")
    dim = _int(sp["dim"], "$.features.sparse.dim")
    rows = _list(sp["rows"], "$.features.sparse.rows")
    if len(rows) != n:
        raise SchemaError("$.features.sparse.rows", f"expected {n} rows, got {len(rows)}")
    x = np.zeros((n, dim))
    for i, row in enumerate(rows):
        for j, entry in enumerate(_list(row, f"$.features.sparse.rows[{i}]")):
            p = f"$.features.sparse.rows[{i}][{j}]"
            if not isinstance(entry, list) or len(entry) != 2:
                raise SchemaError(p, "expected [index, value]")
            col = _int(entry[0], p + "[0]")
            if not 0 <= col < dim:
                raise SchemaError(p + "[0]", f"column {col} outside [0, {dim})")
            x[i, col] = float(entry[1])
    return x


def bundle_from_dict(doc: dict) -> DatasetBundle:
    H = _hypergraph(doc)
    n = H.num_vertices
    for key in ("features", "labels", "num_classes"):
        if key not in doc:
            raise SchemaError("$", f"missing required field {key!r}")
    x = _features(doc["features"], n)
    c = _int(doc["num_classes"], "$.num_classes")
    labels = _list(doc["labels"], "$.labels")
    if len(labels) != n:
        raise SchemaError("$.labels", f"expected {n} labels, got {len(labels)}")
    for i, y in enumerate(labels):
        y = _int(y, f"$.labels[{i}]")
        if not 0 <= y < c:
            raise SchemaError(f"$.labels[{i}]", f"label {y} outside [0, {c})")
    splits = {}
    raw = doc.get("splits") or {}
    if not isinstance(raw, dict):
        raise SchemaError("$.splits", "expected object")
    for sid, parts in raw.items():
        if not isinstance(parts, dict):
            raise SchemaError(f"$.splits.{sid}", "expected object")
        splits[str(sid)] = {}
        for part, idx in parts.items():
            p = f"$.splits.{sid}.{part}"
            idx = [_int(v, f"{p}[{k}]") for k, v in enumerate(_list(idx, p))]
            splits[str(sid)][part] = np.asarray(idx, dtype=np.int64)
    bundle = DatasetBundle(str(doc.get("name", "unnamed")), H, x, np.asarray(labels, dtype=np.int64),
                           c, splits)
    bundle.validate()
    return bundle


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def load_dataset(path) -> DatasetBundle:
    return bundle_from_dict(_read_json(path))


def load_hypergraph(path) -> IncidenceStructure:
    """Read only the hypergraph part of a canonical file."""
    return _hypergraph(_read_json(path))


def save_dataset(bundle: DatasetBundle, path, sparse: bool = False) -> None:
    Path(path).write_text(json.dumps(bundle.to_dict(sparse=sparse)), encoding="utf-8")


def save_hypergraph(H: IncidenceStructure, path) -> None:
    Path(path).write_text(json.dumps(H.to_dict()), encoding="utf-8")


# --------------------------------------------------------------------------
# splits


def stratified_split(labels: np.ndarray, label_rate: float, rng: np.random.Generator,
                     num_classes: int | None = None) -> dict[str, np.ndarray]:
    """Class-stratified train sample at ``label_rate``; everything else is test."""
    labels = np.asarray(labels)
    n = labels.size
    num_classes = num_classes or int(labels.max()) + 1
    target = max(num_classes, int(round(label_rate * n)))
    train = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        k = max(1, int(round(target * members.size / n)))
        train.append(rng.choice(members, size=min(k, members.size), replace=False))
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(n), train)
    return {"train": train, "val": np.zeros(0, dtype=np.int64), "test": test}


def ensure_splits(bundle: DatasetBundle, num_splits: int = 10, seed: int = 0,
                  label_rate: float | None = None) -> DatasetBundle:
    """Generate seeded stratified splits when the bundle ships without any."""
    if bundle.splits:
        return bundle
    if label_rate is None:
        stats = DATASET_STATS.get(canonical_name(bundle.name))
        label_rate = stats["label_rate"] if stats else 0.05
    for k in range(num_splits):
        rng = np.random.default_rng([seed, k])
        bundle.splits[str(k)] = stratified_split(bundle.labels, label_rate, rng, bundle.num_classes)
    return bundle


def carve_validation(split: dict[str, np.ndarray], fraction: float,
                     rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Move ``fraction`` of the test indices into a validation set."""
    test = rng.permutation(split["test"])
    k = int(round(fraction * test.size))
    return {"train": split["train"], "val": np.sort(test[:k]), "test": np.sort(test[k:])}


# --------------------------------------------------------------------------
# fixtures


def toy_fixtures() -> dict[str, IncidenceStructure]:
    """Small hand-checkable hypergraphs used throughout the tests and docs."""
    return {
        "single-edge": build(3, [[0, 1, 2]]),
        "triangle": build(3, [[0, 1], [1, 2], [0, 2]]),
        "path": build(3, [[0, 1], [1, 2]]),
        "toy-hypergraph": build(7, [[0, 1, 2], [1, 3, 4], [2, 4, 5, 6]]),
        "toy-graph": build(7, [[0, 1], [0, 2], [1, 2], [1, 3], [1, 4], [3, 4],
                               [2, 4], [2, 5], [2, 6], [4, 5], [4, 6], [5, 6]]),
    }


def planted_partition(n: int = 300, num_classes: int = 3, num_edges: int = 240,
                      edge_size: tuple[int, int] = (2, 6), homophily: float = 0.85,
                      dim: int = 32, signal: float = 0.6, isolated_fraction: float = 0.0,
                      label_rate: float = 0.05, num_splits: int = 4, seed: int = 0,
                      name: str = "planted") -> DatasetBundle:
    """Synthetic co-citation-like dataset with class-homophilous hyperedges.

    Each hyperedge draws a dominant class and picks members from it with
    probability ``homophily``. Features are noisy class prototypes. A
    fraction of vertices can be left outside every hyperedge.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    covered = np.ones(n, dtype=bool)
    if isolated_fraction:
        covered[rng.choice(n, size=int(isolated_fraction * n), replace=False)] = False
    pools = [np.flatnonzero((labels == c) & covered) for c in range(num_classes)]
    everyone = np.flatnonzero(covered)
    edges = []
    for _ in range(num_edges):
        c = int(rng.integers(num_classes))
        k = int(rng.integers(edge_size[0], edge_size[1] + 1))
        members = [int(rng.choice(pools[c])) if rng.random() < homophily else int(rng.choice(everyone))
                   for _ in range(k)]
        edges.append(members)
    protos = rng.normal(size=(num_classes, dim))
    x = signal * protos[labels] + rng.normal(size=(n, dim))
    x = (x > 0.5).astype(np.float64)  # binary bag-of-words-like features
    bundle = DatasetBundle(name, build(n, edges), x, labels.astype(np.int64), num_classes)
    return ensure_splits(bundle, num_splits=num_splits, seed=seed, label_rate=label_rate)
