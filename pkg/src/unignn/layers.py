"""Two-stage hypergraph message-passing layers and network assembly.

Every layer first pools member-vertex features into hyperedges (mean), then
pools incident-hyperedge messages back into vertices. The variants differ in
the second stage: degree-normalized sum (UniGCN), attention (UniGAT), plain
sum with a self term (UniGIN / UniSAGE) and the initial-residual /
identity-mapping update (UniGCNII).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .autodiff import (
    SegmentMap,
    Tensor,
    col_sum,
    concat_cols,
    dropout,
    leaky_relu,
    relu,
    row_l2_normalize,
    row_slice,
    scale,
    segment_mean,
    segment_softmax,
    segment_sum,
)
from .errors import DimensionMismatch, InputError, InvalidProbability, ShapeMismatch
from .hypergraph import DegreeInfo, IncidenceStructure, add_self_loops, degrees

#: inter-layer nonlinearity shared by every variant
ACTIVATION = relu


class Variant(str, Enum):
    UNIGCN = "unigcn"
    UNIGAT = "unigat"
    UNIGIN = "unigin"
    UNISAGE = "unisage"
    UNIGCNII = "unigcnii"
    UNIGCN_STAR = "unigcnstar"

    @classmethod
    def parse(cls, name: "str | Variant") -> "Variant":
        if isinstance(name, Variant):
            return name
        key = str(name).lower().replace("*", "star").replace("-", "").replace("_", "")
        for v in cls:
            if v.value == key:
                return v
        raise InputError(f"unknown model variant {name!r}; choose from {[v.value for v in cls]}")

    @property
    def self_looped(self) -> bool:
        return self not in (Variant.UNIGIN, Variant.UNISAGE)


# --------------------------------------------------------------------------
# context


@dataclass
class LayerContext:
    """Segment maps and degree normalizers for one (preprocessed) hypergraph."""

    hypergraph: IncidenceStructure
    edge_map: SegmentMap      # edge <- member vertices
    vertex_map: SegmentMap    # vertex <- incident edges
    pair_map: SegmentMap      # vertex <- its (vertex, edge) incidence pairs
    softmax_map: SegmentMap   # pair_map without empty groups
    pair_vertex: np.ndarray
    pair_edge: np.ndarray
    degrees: DegreeInfo
    inv_sqrt_dv: np.ndarray   # (n, 1)
    inv_sqrt_de: np.ndarray   # (|E|, 1)

    @property
    def num_vertices(self) -> int:
        return self.hypergraph.num_vertices

    def const(self, name: str, dtype) -> Tensor:
        return Tensor(getattr(self, name).astype(dtype, copy=False))


def _inv_sqrt(d: np.ndarray) -> np.ndarray:
    # zero degree only occurs without self-loops, where the aggregate is empty anyway
    return np.divide(1.0, np.sqrt(d), out=np.ones_like(d), where=d > 0).reshape(-1, 1)


def build_context(H: IncidenceStructure) -> LayerContext:
    n, m = H.num_vertices, H.num_edges
    deg = degrees(H)
    pair_vertex = np.repeat(np.arange(n, dtype=np.int64), H.vertex_counts)
    num_pairs = H.vertex_indices.size
    counts = H.vertex_counts[H.vertex_counts > 0]
    return LayerContext(
        hypergraph=H,
        edge_map=SegmentMap(H.edge_offsets, H.edge_indices, n),
        vertex_map=SegmentMap(H.vertex_offsets, H.vertex_indices, m),
        pair_map=SegmentMap(H.vertex_offsets, np.arange(num_pairs), num_pairs),
        softmax_map=SegmentMap(np.concatenate([[0], np.cumsum(counts)]), np.arange(num_pairs), num_pairs),
        pair_vertex=pair_vertex,
        pair_edge=np.asarray(H.vertex_indices),
        degrees=deg,
        inv_sqrt_dv=_inv_sqrt(deg.d_vertex),
        inv_sqrt_de=_inv_sqrt(deg.d_edge),
    )


def prepare(H: IncidenceStructure, variant, self_loops: bool | None = None) -> LayerContext:
    """Apply the variant's preprocessing (self-loops or not) and build the context."""
    variant = Variant.parse(variant)
    if self_loops is None:
        self_loops = variant.self_looped
    if self_loops and H.symmetric:
        H = add_self_loops(H)
    return build_context(H)


# --------------------------------------------------------------------------
# layers


def stage1_mean(x: Tensor, ctx: LayerContext) -> Tensor:
    return segment_mean(x, ctx.edge_map)


def gcn_propagate(x: Tensor, ctx: LayerContext) -> Tensor:
    """``d_i^{-1/2} * sum_{e in E_i} d_e^{-1/2} * mean_{j in e} x_j``."""
    he = stage1_mean(x, ctx) * ctx.const("inv_sqrt_de", x.dtype)
    return segment_sum(he, ctx.vertex_map) * ctx.const("inv_sqrt_dv", x.dtype)


def unigcn_layer(x: Tensor, ctx: LayerContext, W: Tensor) -> Tensor:
    # W commutes with both (linear) stages; applying it first is cheaper when |E| > n
    if x.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"unigcn: features {x.shape} vs weight {W.shape}")
    return gcn_propagate(x @ W, ctx)


def unigcn_star_layer(x: Tensor, ctx: LayerContext, W: Tensor, normalize: bool) -> Tensor:
    agg = gcn_propagate(x, ctx)
    if normalize:
        agg = row_l2_normalize(agg)
    return agg @ W


def unigat_head(x: Tensor, ctx: LayerContext, W: Tensor, a: Tensor, attn_dropout: float = 0.0,
                training: bool = False, rng=None, return_attention: bool = False):
    """Single attention head; ``a`` has shape ``(2 * d_out, 1)``."""
    d_out = W.shape[1]
    if a.shape != (2 * d_out, 1):
        raise ShapeMismatch(f"unigat: attention vector {a.shape}, expected {(2 * d_out, 1)}")
    xw = x @ W
    he = stage1_mean(xw, ctx)
    a_self = row_slice(a, np.arange(d_out))
    a_edge = row_slice(a, np.arange(d_out, 2 * d_out))
    # the singleton-edge mean of vertex i is x_i itself
    score = row_slice(xw @ a_self, ctx.pair_vertex) + row_slice(he @ a_edge, ctx.pair_edge)
    alpha = segment_softmax(leaky_relu(score), ctx.softmax_map)
    weights = dropout(alpha, attn_dropout, training, rng)
    out = segment_sum(row_slice(he, ctx.pair_edge) * weights, ctx.pair_map)
    return (out, alpha) if return_attention else out


def unigat_layer(x: Tensor, ctx: LayerContext, Ws, As, attn_dropout: float = 0.0,
                 training: bool = False, rng=None, concat: bool = True) -> Tensor:
    outs = [unigat_head(x, ctx, W, a, attn_dropout, training, rng) for W, a in zip(Ws, As)]
    if concat:
        return outs[0] if len(outs) == 1 else concat_cols(outs)
    total = outs[0]
    for o in outs[1:]:
        total = total + o
    return scale(total, 1.0 / len(outs))


def unigin_layer(x: Tensor, ctx: LayerContext, W: Tensor, eps) -> Tensor:
    """``W((1 + eps) x_i + sum_{e in E_i} h_e)``; ``eps`` is a float or a (1, 1) tensor."""
    if x.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"unigin: features {x.shape} vs weight {W.shape}")
    xw = x @ W
    agg = segment_sum(stage1_mean(xw, ctx), ctx.vertex_map)
    if isinstance(eps, Tensor):
        self_term = xw * (eps + 1.0)
    else:
        self_term = scale(xw, 1.0 + float(eps))
    return self_term + agg


def unisage_layer(x: Tensor, ctx: LayerContext, W: Tensor) -> Tensor:
    return unigin_layer(x, ctx, W, 0.0)


def gcnii_beta(lam: float, layer: int) -> float:
    return math.log(lam / layer + 1.0)


def unigcnii_layer(x: Tensor, x0: Tensor, ctx: LayerContext, W: Tensor, alpha: float,
                   beta: float, normalize: bool = False) -> Tensor:
    """``((1-beta) I + beta W)((1-alpha) x_hat + alpha x0)`` with ``x_hat`` the UniGCN propagation."""
    if x.shape != x0.shape:
        raise ShapeMismatch(f"unigcnii: x {x.shape} vs x0 {x0.shape}")
    xhat = gcn_propagate(x, ctx)
    if normalize:
        xhat = row_l2_normalize(xhat)
    support = scale(xhat, 1.0 - alpha) + scale(x0, alpha)
    return scale(support, 1.0 - beta) + scale(support @ W, beta)


def sum_readout(embeddings: Tensor) -> Tensor:
    return col_sum(embeddings)


# --------------------------------------------------------------------------
# network


@dataclass
class ModelSpec:
    """Everything needed to rebuild a network deterministically."""

    variant: str
    input_dim: int
    num_classes: int
    num_layers: int = 2
    hidden_dim: int = 64
    heads: int = 1
    dropout: float = 0.6
    attention_dropout: float = 0.6
    input_dropout: float | None = None
    epsilon_learnable: bool = True
    alpha: float = 0.1
    lam: float = 0.5
    use_norm: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.variant = Variant.parse(self.variant).value
        self.validate()

    @classmethod
    def defaults_for(cls, variant, input_dim: int, num_classes: int, **overrides) -> "ModelSpec":
        """Published per-variant hyperparameters, with overrides."""
        v = Variant.parse(variant)
        base = {"hidden_dim": 64, "dropout": 0.6}
        if v is Variant.UNIGAT:
            base = {"hidden_dim": 8, "heads": 8, "dropout": 0.6, "attention_dropout": 0.6}
        elif v is Variant.UNIGCNII:
            base = {"hidden_dim": 64, "dropout": 0.2}
        base.update(overrides)
        return cls(variant=v.value, input_dim=input_dim, num_classes=num_classes, **base)

    @property
    def kind(self) -> Variant:
        return Variant(self.variant)

    @property
    def first_dropout(self) -> float:
        return self.dropout if self.input_dropout is None else self.input_dropout

    def validate(self) -> None:
        if min(self.input_dim, self.num_classes, self.hidden_dim) <= 0:
            raise DimensionMismatch("input_dim, hidden_dim and num_classes must be positive")
        if self.num_layers < 1 or self.heads < 1:
            raise InputError("num_layers and heads must be >= 1")
        for name in ("dropout", "attention_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidProbability(f"{name} must be in [0, 1)")
        if self.input_dropout is not None and not 0.0 <= self.input_dropout < 1.0:
            raise InvalidProbability("input_dropout must be in [0, 1)")
        if self.kind is Variant.UNIGCNII and not (0.0 < self.alpha < 1.0 and self.lam > 0):
            raise InputError("UniGCNII needs 0 < alpha < 1 and lam > 0")
        if self.dtype not in ("float32", "float64"):
            raise InputError(f"dtype must be float32 or float64, got {self.dtype}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown ModelSpec fields: {sorted(unknown)}")
        return cls(**d)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


class UniGNN:
    """A stack of two-stage message-passing layers built from a :class:`ModelSpec`.

    Parameters are kept in an insertion-ordered dict; that order defines the
    optimizer state layout and the serialized weight blob.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        self.dense: set[str] = set()
        rng = np.random.default_rng(spec.seed)
        dt = spec.dtype
        v = spec.kind
        if v is Variant.UNIGCNII:
            h = spec.hidden_dim
            self._add("input.W", _glorot(rng, spec.input_dim, h, (spec.input_dim, h), dt), dense=True)
            self._add("input.b", Tensor(np.zeros((1, h), dt), requires_grad=True), dense=True)
            for l in range(spec.num_layers):
                self._add(f"convs.{l}.W", _glorot(rng, h, h, (h, h), dt))
            self._add("output.W", _glorot(rng, h, spec.num_classes, (h, spec.num_classes), dt), dense=True)
            self._add("output.b", Tensor(np.zeros((1, spec.num_classes), dt), requires_grad=True), dense=True)
            return
        heads = spec.heads if v is Variant.UNIGAT else 1
        d_in = spec.input_dim
        for l in range(spec.num_layers):
            last = l == spec.num_layers - 1
            d_out = spec.num_classes if last else spec.hidden_dim
            if v is Variant.UNIGAT:
                for k in range(heads):
                    self._add(f"layers.{l}.heads.{k}.W", _glorot(rng, d_in, d_out, (d_in, d_out), dt))
                    self._add(f"layers.{l}.heads.{k}.a", _glorot(rng, 2 * d_out, 1, (2 * d_out, 1), dt))
            else:
                self._add(f"layers.{l}.W", _glorot(rng, d_in, d_out, (d_in, d_out), dt))
            if v is Variant.UNIGIN:
                self._add(f"layers.{l}.eps", Tensor(np.zeros((1, 1), dt),
                                                    requires_grad=spec.epsilon_learnable))
            d_in = d_out * heads if (v is Variant.UNIGAT and not last) else d_out

    def _add(self, name: str, t: Tensor, dense: bool = False) -> None:
        self.params[name] = t
        if dense:
            self.dense.add(name)

    def parameters(self) -> list[Tensor]:
        return [p for p in self.params.values() if p.requires_grad]

    def parameter_names(self) -> list[str]:
        return [k for k, p in self.params.items() if p.requires_grad]

    def weight_decays(self, conv_wd: float, dense_wd: float | None = None) -> list[float]:
        """Per-parameter decay aligned with :meth:`parameters`."""
        dense_wd = conv_wd if dense_wd is None else dense_wd
        return [dense_wd if k in self.dense else conv_wd for k in self.parameter_names()]

    def __call__(self, ctx: LayerContext, x, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        spec, P = self.spec, self.params
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=spec.dtype))
        if x.shape != (ctx.num_vertices, spec.input_dim):
            raise DimensionMismatch(
                f"features {x.shape} do not match ({ctx.num_vertices}, {spec.input_dim})")
        if training and rng is None and (spec.dropout or spec.attention_dropout or spec.first_dropout):
            raise InputError("training-mode forward with dropout needs an rng")
        v = spec.kind

        if v is Variant.UNIGCNII:
            h = dropout(x, spec.first_dropout, training, rng)
            h = ACTIVATION(h @ P["input.W"] + P["input.b"])
            h0 = h
            for l in range(spec.num_layers):
                h = dropout(h, spec.dropout, training, rng)
                beta = gcnii_beta(spec.lam, l + 1)
                h = ACTIVATION(unigcnii_layer(h, h0, ctx, P[f"convs.{l}.W"], spec.alpha, beta, spec.use_norm))
            h = dropout(h, spec.dropout, training, rng)
            return h @ P["output.W"] + P["output.b"]

        h = x
        for l in range(spec.num_layers):
            last = l == spec.num_layers - 1
            h = dropout(h, spec.first_dropout if l == 0 else spec.dropout, training, rng)
            if v is Variant.UNIGCN:
                h = unigcn_layer(h, ctx, P[f"layers.{l}.W"])
            elif v is Variant.UNIGCN_STAR:
                h = unigcn_star_layer(h, ctx, P[f"layers.{l}.W"], spec.use_norm)
            elif v is Variant.UNIGAT:
                Ws = [P[f"layers.{l}.heads.{k}.W"] for k in range(spec.heads)]
                As = [P[f"layers.{l}.heads.{k}.a"] for k in range(spec.heads)]
                h = unigat_layer(h, ctx, Ws, As, spec.attention_dropout, training, rng, concat=not last)
            elif v is Variant.UNIGIN:
                h = unigin_layer(h, ctx, P[f"layers.{l}.W"], P[f"layers.{l}.eps"])
            else:
                h = unisage_layer(h, ctx, P[f"layers.{l}.W"])
            if spec.use_norm and v is not Variant.UNIGCN_STAR:
                h = row_l2_normalize(h)
            if not last:
                h = ACTIVATION(h)
        return h

    def predict(self, ctx: LayerContext, x) -> np.ndarray:
        return self(ctx, x, training=False).data.argmax(axis=1)

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise DimensionMismatch(f"{k}: stored {state[k].shape} vs model {p.shape}")
            p.data[...] = state[k]


def save_weights(model: UniGNN, manifest_path) -> Path:
    """Write ``<stem>.bin`` (little-endian, parameter order) and a JSON manifest."""
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    dtype = np.dtype(model.spec.dtype).newbyteorder("<")
    entries, offset, chunks = [], 0, []
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype=dtype)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += int(arr.size)
        chunks.append(arr.tobytes())
    blob_path.write_bytes(b"".join(chunks))
    manifest = {"spec": model.spec.to_dict(), "dtype": dtype.str, "blob": blob_path.name,
                "tensors": entries}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def load_weights(manifest_path) -> UniGNN:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    model = UniGNN(ModelSpec.from_dict(manifest["spec"]))
    flat = np.frombuffer((manifest_path.parent / manifest["blob"]).read_bytes(),
                         dtype=np.dtype(manifest["dtype"]))
    state = {}
    for t in manifest["tensors"]:
        state[t["name"]] = flat[t["offset"]:t["offset"] + t["count"]].reshape(t["shape"])
    model.load_state(state)
    return model
