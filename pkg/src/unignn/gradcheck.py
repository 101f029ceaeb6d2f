"""Central finite-difference verification of every recorded backward rule."""

from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import SegmentMap, Tensor
from .hypergraph import random_hypergraph
from .layers import ModelSpec, UniGNN, Variant, prepare


GRAD_FLOOR = 1e-4


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps roundoff on vanishing gradients from reading as 100%."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[..., Tensor], inputs: list[np.ndarray], h: float = 1e-5,
                    rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps tensors to a tensor of any shape; it is reduced to a scalar
    through a fixed random projection so every output entry contributes.
    ``fn`` must be deterministic (reseed any rng inside it).
    """
    rng = rng or np.random.default_rng(0)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    probe = fn(*[Tensor(x) for x in inputs])
    proj = rng.normal(size=probe.shape)

    leaves = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = fn(*leaves)
    out.backward(seed=proj)

    worst = 0.0
    for k, x in enumerate(inputs):
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + h
            fp = float((fn(*[Tensor(v) for v in inputs]).data * proj).sum())
            x[idx] = orig - h
            fm = float((fn(*[Tensor(v) for v in inputs]).data * proj).sum())
            x[idx] = orig
            num[idx] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(leaves[k].grad, num))
    return worst


def check_model(model: UniGNN, ctx, x: np.ndarray, labels: np.ndarray, train_idx,
                dropout_seed: int = 0, h: float = 1e-5) -> float:
    """Gradient check of the training loss with respect to every parameter."""
    params = model.parameters()
    base = [p.data.copy() for p in params]

    def loss_value() -> float:
        out = model(ctx, Tensor(x), training=True, rng=np.random.default_rng(dropout_seed))
        return ad.softmax_cross_entropy(out, labels, train_idx).item()

    ad.zero_grads(params)
    out = model(ctx, Tensor(x), training=True, rng=np.random.default_rng(dropout_seed))
    ad.softmax_cross_entropy(out, labels, train_idx).backward()
    worst = 0.0
    for p, b in zip(params, base):
        num = np.zeros_like(b)
        for idx in np.ndindex(b.shape):
            p.data[idx] = b[idx] + h
            fp = loss_value()
            p.data[idx] = b[idx] - h
            fm = loss_value()
            p.data[idx] = b[idx]
            num[idx] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(p.grad, num))
    return worst


def _dims(rng, lo=2, hi=6):
    return [int(v) for v in rng.integers(lo, hi + 1, size=3)]


def _random_map(rng, num_sources, num_groups, allow_empty):
    groups = []
    for _ in range(num_groups):
        k = int(rng.integers(0 if allow_empty else 1, 4))
        groups.append(rng.integers(0, num_sources, size=k))
    return SegmentMap.from_groups(groups, num_sources)


def _partition_map(rng, n):
    perm = rng.permutation(n)
    cuts = np.sort(rng.choice(np.arange(1, n), size=min(n - 1, int(rng.integers(0, n))), replace=False))
    return SegmentMap(np.concatenate([[0], cuts, [n]]), perm, n)


def _away_from_zero(rng, shape):
    x = rng.normal(size=shape)
    return x + np.sign(x) * 0.1


def _op_case(name: str, rng: np.random.Generator):
    n, k, m = _dims(rng)
    if name == "matmul":
        return lambda a, b: a @ b, [rng.normal(size=(n, k)), rng.normal(size=(k, m))]
    if name == "matmul_chain":
        return lambda a, b, c: (a @ b) @ c, [rng.normal(size=(n, k)), rng.normal(size=(k, m)),
                                            rng.normal(size=(m, 2))]
    if name == "add":
        return lambda a, b: a + b, [rng.normal(size=(n, k)), rng.normal(size=(1, k))]
    if name == "sub":
        return lambda a, b: a - b, [rng.normal(size=(n, k)), rng.normal(size=(n, 1))]
    if name == "mul":
        return lambda a, b: a * b, [rng.normal(size=(n, k)), rng.normal(size=(n, 1))]
    if name == "scale":
        return lambda a: ad.scale(a, 1.7), [rng.normal(size=(n, k))]
    if name == "concat_cols":
        return lambda a, b: ad.concat_cols([a, b]), [rng.normal(size=(n, k)), rng.normal(size=(n, m))]
    if name == "row_slice":
        idx = rng.integers(0, n, size=m + 2)
        return lambda a: ad.row_slice(a, idx), [rng.normal(size=(n, k))]
    if name == "col_sum":
        return ad.col_sum, [rng.normal(size=(n, k))]
    if name == "sum_all":
        return ad.sum_all, [rng.normal(size=(n, k))]
    if name == "relu":
        return ad.relu, [_away_from_zero(rng, (n, k))]
    if name == "leaky_relu":
        return ad.leaky_relu, [_away_from_zero(rng, (n, k))]
    if name == "dropout":
        seed = int(rng.integers(1 << 31))
        return (lambda a: ad.dropout(a, 0.5, True, np.random.default_rng(seed))), [rng.normal(size=(n, k))]
    if name == "row_l2_normalize":
        return ad.row_l2_normalize, [rng.normal(size=(n, k))]
    if name == "softmax_cross_entropy":
        labels = rng.integers(0, k, size=n)
        mask = rng.random(n) < 0.6
        mask[0] = True
        return (lambda z: ad.softmax_cross_entropy(z, labels, mask)), [rng.normal(size=(n, k))]
    if name == "segment_sum":
        smap = _random_map(rng, n, m, allow_empty=True)
        return (lambda a: ad.segment_sum(a, smap)), [rng.normal(size=(n, k))]
    if name == "segment_mean":
        smap = _random_map(rng, n, m, allow_empty=False)
        return (lambda a: ad.segment_mean(a, smap)), [rng.normal(size=(n, k))]
    if name == "segment_softmax":
        p = n + m
        smap = _partition_map(rng, p)
        return (lambda s: ad.segment_softmax(s, smap)), [rng.normal(size=(p, 2))]
    raise KeyError(name)


OPS = ["matmul", "matmul_chain", "add", "sub", "mul", "scale", "concat_cols", "row_slice", "col_sum",
       "sum_all", "relu", "leaky_relu", "dropout", "row_l2_normalize", "softmax_cross_entropy",
       "segment_sum", "segment_mean", "segment_softmax"]

MODELS = [v.value for v in Variant]


def model_case(variant: str, rng: np.random.Generator, use_norm: bool = True):
    n = int(rng.integers(4, 7))
    H = random_hypergraph(rng, n, int(rng.integers(2, 5)), max_edge_size=3)
    d, c = int(rng.integers(2, 5)), int(rng.integers(2, 4))
    spec = ModelSpec(variant=variant, input_dim=d, num_classes=c, num_layers=2, hidden_dim=3,
                     heads=2, dropout=0.3, attention_dropout=0.3, use_norm=use_norm,
                     seed=int(rng.integers(1 << 31)), dtype="float64")
    model = UniGNN(spec)
    for name, p in model.params.items():  # zero-initialized eps and biases sit on relu kinks
        if name.endswith((".eps", ".b")):
            p.data[...] = rng.normal(scale=0.3, size=p.shape)
    x = rng.normal(size=(n, d))
    labels = rng.integers(0, c, size=n)
    return model, prepare(H, variant), x, labels, np.arange(n)


def run_gradcheck(ops="all", seeds: int = 20, seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Worst relative error per op / model variant over ``seeds`` random instances."""
    names = (OPS + MODELS) if ops == "all" else list(ops)
    results = {}
    for name in names:
        worst = 0.0
        for s in range(seeds):
            rng = np.random.default_rng([seed, s, zlib.crc32(name.encode())])
            if name in MODELS:
                model, ctx, x, labels, idx = model_case(name, rng)
                err = check_model(model, ctx, x, labels, idx, dropout_seed=s, h=h)
            else:
                fn, inputs = _op_case(name, rng)
                err = check_gradients(fn, inputs, h=h, rng=rng)
            worst = max(worst, err)
        results[name] = worst
    return results

