import numpy as np
import pytest

import oracles
from unignn import autodiff as ad
from unignn.autodiff import Tensor
from unignn.errors import DimensionMismatch, InputError, InvalidProbability
from unignn.hypergraph import add_self_loops, build, permute, random_hypergraph, reduction_from_graph
from unignn.layers import (
    ModelSpec,
    UniGNN,
    Variant,
    gcn_propagate,
    gcnii_beta,
    load_weights,
    prepare,
    save_weights,
    stage1_mean,
    sum_readout,
    unigat_head,
    unigat_layer,
    unigcn_layer,
    unigcnii_layer,
    unigin_layer,
    unisage_layer,
)

T = lambda a: Tensor(np.asarray(a, dtype=np.float64))  # noqa: E731


def test_variant_parse():
    assert Variant.parse("UniGCN*") is Variant.UNIGCN_STAR
    assert Variant.parse("unigcnstar") is Variant.UNIGCN_STAR
    assert Variant.parse("UNIGAT") is Variant.UNIGAT
    with pytest.raises(InputError):
        Variant.parse("gcn")
    assert Variant.UNIGCN.self_looped and not Variant.UNIGIN.self_looped and not Variant.UNISAGE.self_looped


# ---------------------------------------------------------------- stage 1


def test_stage1_examples():
    ctx = prepare(build(2, [[0, 1]]), "unigcn")
    he = stage1_mean(T([[2, 0], [0, 2]]), ctx).data
    np.testing.assert_array_equal(he[0], [1, 1])
    np.testing.assert_array_equal(he[1], [2, 0])  # singleton {0}
    np.testing.assert_array_equal(he[2], [0, 2])
    const = stage1_mean(T(np.full((2, 3), 4.0)), ctx).data
    np.testing.assert_array_equal(const, 4.0)


# ---------------------------------------------------------------- UniGCN


def test_unigcn_isolated_self_loop_identity():
    ctx = prepare(build(1, []), "unigcn")
    x = T([[1.5, -2.0]])
    np.testing.assert_allclose(unigcn_layer(x, ctx, T(np.eye(2))).data, x.data)


def test_unigcn_matches_hypergraph_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        H = add_self_loops(random_hypergraph(rng, 9, 6, 4))
        X, W = rng.normal(size=(9, 3)), rng.normal(size=(3, 2))
        ours = unigcn_layer(T(X), prepare(H, "unigcn"), T(W)).data
        np.testing.assert_allclose(ours, oracles.unigcn(9, H.edge_members, X, W), atol=1e-12)


def test_weight_order_equivalence():
    rng = np.random.default_rng(1)
    H = random_hypergraph(rng, 10, 7, 4)
    ctx = prepare(H, "unigcn")
    X, W = rng.normal(size=(10, 4)), rng.normal(size=(4, 3))
    before = unigcn_layer(T(X), ctx, T(W)).data
    after = (gcn_propagate(T(X), ctx) @ T(W)).data
    np.testing.assert_allclose(before, after, atol=1e-12)


def test_reduction_gcn_gat_gin_sage():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(2, 20))
        adj = oracles.random_graph(rng, n, 0.3)
        X, W = rng.normal(size=(n, 3)), rng.normal(size=(3, 2))
        a = rng.normal(size=(4, 1))
        closed = prepare(reduction_from_graph(adj, with_self=True), "unigcn")
        opened = prepare(reduction_from_graph(adj, with_self=False), "unigin")
        np.testing.assert_allclose(unigcn_layer(T(X), closed, T(W)).data, oracles.gcn(adj, X, W), atol=1e-10)
        np.testing.assert_allclose(unigat_head(T(X), closed, T(W), T(a)).data,
                                   oracles.gat_head(adj, X, W, a), atol=1e-10)
        np.testing.assert_allclose(unigin_layer(T(X), opened, T(W), 0.3).data,
                                   oracles.gin(adj, X, W, 0.3), atol=1e-10)
        np.testing.assert_allclose(unisage_layer(T(X), opened, T(W)).data,
                                   oracles.sage_sum(adj, X, W), atol=1e-10)


# ---------------------------------------------------------------- UniGAT


def test_unigat_single_incident_edge_gets_full_weight():
    H = build(3, [[0, 1, 2]])
    ctx = prepare(H, "unigat", self_loops=False)
    rng = np.random.default_rng(0)
    X, W, a = rng.normal(size=(3, 2)), rng.normal(size=(2, 2)), rng.normal(size=(4, 1))
    out, alpha = unigat_head(T(X), ctx, T(W), T(a), return_attention=True)
    np.testing.assert_allclose(alpha.data, 1.0)
    np.testing.assert_allclose(out.data, np.tile((X @ W).mean(0), (3, 1)), atol=1e-12)


def test_unigat_zero_attention_is_uniform():
    H = add_self_loops(build(4, [[0, 1], [0, 2, 3], [1, 3]]))
    ctx = prepare(H, "unigat")
    X = np.random.default_rng(0).normal(size=(4, 3))
    _, alpha = unigat_head(T(X), ctx, T(np.eye(3)), T(np.zeros((6, 1))), return_attention=True)
    expected = 1.0 / H.vertex_counts[ctx.pair_vertex]
    np.testing.assert_allclose(alpha.data[:, 0], expected)


def test_unigat_attention_sums_to_one():
    rng = np.random.default_rng(5)
    for _ in range(20):
        H = random_hypergraph(rng, 12, 8, 5)
        ctx = prepare(H, "unigat")
        X = rng.normal(size=(12, 4)).astype(np.float32)
        W = rng.normal(size=(4, 3)).astype(np.float32)
        a = rng.normal(size=(6, 1)).astype(np.float32)
        _, alpha = unigat_head(Tensor(X), ctx, Tensor(W), Tensor(a), return_attention=True)
        totals = np.bincount(ctx.pair_vertex, weights=alpha.data[:, 0], minlength=12)
        np.testing.assert_allclose(totals, 1.0, atol=1e-6)


def test_unigat_heads_concat_and_average():
    rng = np.random.default_rng(0)
    ctx = prepare(build(3, [[0, 1], [1, 2]]), "unigat")
    X = T(rng.normal(size=(3, 2)))
    Ws = [T(rng.normal(size=(2, 2))) for _ in range(3)]
    As = [T(rng.normal(size=(4, 1))) for _ in range(3)]
    heads = [unigat_head(X, ctx, W, a).data for W, a in zip(Ws, As)]
    np.testing.assert_allclose(unigat_layer(X, ctx, Ws, As, concat=True).data, np.hstack(heads))
    np.testing.assert_allclose(unigat_layer(X, ctx, Ws, As, concat=False).data, np.mean(heads, axis=0))


def test_unigat_isolated_vertex_without_self_loops_is_finite():
    ctx = prepare(build(3, [[0, 1]]), "unigat", self_loops=False)
    out = unigat_head(T(np.ones((3, 2))), ctx, T(np.eye(2)), T(np.ones((4, 1)))).data
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out[2], 0.0)


# ---------------------------------------------------------------- UniGIN / UniSAGE


def test_unigin_examples():
    W = T([[1.0]])
    two = prepare(build(2, [[0, 1]]), "unigin")
    np.testing.assert_allclose(unigin_layer(T([[1.0], [3.0]]), two, W, 0.0).data, [[3.0], [5.0]])
    np.testing.assert_allclose(unisage_layer(T([[1.0], [3.0]]), two, W).data, [[3.0], [5.0]])
    iso = prepare(build(2, [[0]]), "unigin")
    np.testing.assert_allclose(unigin_layer(T([[1.0], [7.0]]), iso, W, 0.0).data[1], [7.0])
    np.testing.assert_allclose(unisage_layer(T([[1.0], [7.0]]), iso, W).data[1], [7.0])
    np.testing.assert_allclose(unigin_layer(T([[1.0], [3.0]]), two, W, -1.0).data, [[2.0], [2.0]])


def test_unigin_matches_hypergraph_oracle_and_sage():
    rng = np.random.default_rng(4)
    H = random_hypergraph(rng, 8, 5, 4)
    ctx = prepare(H, "unigin")
    X, W = rng.normal(size=(8, 3)), rng.normal(size=(3, 3))
    np.testing.assert_allclose(unigin_layer(T(X), ctx, T(W), 0.7).data,
                               oracles.unigin(8, H.edge_members, X, W, 0.7), atol=1e-12)
    np.testing.assert_array_equal(unigin_layer(T(X), ctx, T(W), 0.0).data, unisage_layer(T(X), ctx, T(W)).data)
    eps = Tensor([[0.0]], requires_grad=True)
    np.testing.assert_allclose(unigin_layer(T(X), ctx, T(W), eps).data, unisage_layer(T(X), ctx, T(W)).data)


# ---------------------------------------------------------------- UniGCNII


def test_gcnii_beta_schedule():
    assert gcnii_beta(0.5, 1) == pytest.approx(np.log(1.5))
    assert gcnii_beta(0.5, 4) == pytest.approx(np.log(1.125))


def test_unigcnii_degenerate_cases():
    rng = np.random.default_rng(0)
    ctx = prepare(random_hypergraph(rng, 6, 4, 3), "unigcnii")
    X, X0, W = T(rng.normal(size=(6, 3))), T(rng.normal(size=(6, 3))), T(rng.normal(size=(3, 3)))
    xhat = gcn_propagate(X, ctx).data
    np.testing.assert_allclose(unigcnii_layer(X, X0, ctx, W, 0.0, 0.0).data, xhat)
    np.testing.assert_allclose(unigcnii_layer(X, X0, ctx, W, 1.0, 0.0).data, X0.data)
    np.testing.assert_allclose(unigcnii_layer(X, X0, ctx, W, 0.0, 1.0).data, xhat @ W.data, atol=1e-12)
    single = prepare(build(1, []), "unigcnii")
    x = T([[2.0, -1.0]])
    np.testing.assert_allclose(unigcnii_layer(x, x, single, T(np.eye(2)), 0.1, 0.5).data, x.data)


# ---------------------------------------------------------------- readout and structure


def test_sum_readout():
    np.testing.assert_array_equal(sum_readout(T([[1, 2]])).data, [[1, 2]])
    np.testing.assert_array_equal(sum_readout(T([[1, 2], [3, 4]])).data, [[4, 6]])
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_allclose(sum_readout(T(x[::-1])).data, sum_readout(T(x)).data)


def test_constant_input_profiles():
    # vertices 0 and 1 share (d_i, {d_e}); vertex 2 lies in two edges
    H = build(4, [[0, 1, 2], [2, 3]])
    ctx = prepare(H, "unigcn")
    out = unigcn_layer(T(np.ones((4, 2))), ctx, T(np.eye(2))).data
    np.testing.assert_allclose(out[0], out[1])
    assert not np.allclose(out[0], out[2])


# ---------------------------------------------------------------- full models


def _spec(variant, **kw):
    base = dict(variant=variant, input_dim=4, num_classes=3, num_layers=3, hidden_dim=5, heads=2,
                dropout=0.5, attention_dropout=0.5, dtype="float64", seed=3)
    base.update(kw)
    return ModelSpec(**base)


@pytest.mark.parametrize("variant", [v.value for v in Variant])
def test_model_permutation_equivariance(variant):
    rng = np.random.default_rng(9)
    H = random_hypergraph(rng, 10, 7, 4)
    X = rng.normal(size=(10, 4))
    model = UniGNN(_spec(variant))
    sigma = rng.permutation(10)
    Xp = np.empty_like(X)
    Xp[sigma] = X
    out = model(prepare(H, variant), X).data
    outp = model(prepare(permute(H, sigma), variant), Xp).data
    np.testing.assert_allclose(outp[sigma], out, atol=1e-10)


@pytest.mark.parametrize("variant", [v.value for v in Variant])
def test_model_eval_is_bit_identical(variant):
    rng = np.random.default_rng(1)
    H = random_hypergraph(rng, 8, 5, 3)
    X = rng.normal(size=(8, 4)).astype(np.float32)
    model = UniGNN(_spec(variant, dtype="float32"))
    ctx = prepare(H, variant)
    a, b = model(ctx, X).data, model(ctx, X).data
    assert a.dtype == np.float32 and a.tobytes() == b.tobytes()
    assert a.shape == (8, 3)


def test_model_training_forward_needs_rng():
    model = UniGNN(_spec("unigcn"))
    ctx = prepare(build(8, [[0, 1]]), "unigcn")
    with pytest.raises(InputError):
        model(ctx, np.zeros((8, 4)), training=True)
    with pytest.raises(DimensionMismatch):
        model(ctx, np.zeros((8, 5)))


def test_spec_validation_and_roundtrip():
    with pytest.raises(InvalidProbability):
        _spec("unigcn", dropout=1.0)
    with pytest.raises(InputError):
        _spec("unigcnii", alpha=0.0)
    with pytest.raises(DimensionMismatch):
        _spec("unigcn", hidden_dim=0)
    with pytest.raises(InputError):
        ModelSpec.from_dict({**_spec("unigcn").to_dict(), "bogus": 1})
    s = _spec("unigat")
    assert ModelSpec.from_dict(s.to_dict()) == s


def test_published_defaults():
    gat = ModelSpec.defaults_for("unigat", 10, 3)
    assert (gat.hidden_dim, gat.heads, gat.dropout, gat.attention_dropout) == (8, 8, 0.6, 0.6)
    gcn = ModelSpec.defaults_for("unigcn", 10, 3)
    assert (gcn.hidden_dim, gcn.dropout, gcn.num_layers, gcn.use_norm) == (64, 0.6, 2, True)
    ii = ModelSpec.defaults_for("unigcnii", 10, 3)
    assert (ii.alpha, ii.lam) == (0.1, 0.5)


def test_parameter_layout():
    m = UniGNN(_spec("unigcnii"))
    names = m.parameter_names()
    assert names[0] == "input.W" and "output.b" in names
    decays = m.weight_decays(0.01, 5e-4)
    for name, wd in zip(names, decays):
        assert wd == (5e-4 if name.startswith(("input", "output")) else 0.01)
    gin = UniGNN(_spec("unigin"))
    assert "layers.0.eps" in gin.parameter_names()
    assert gin.params["layers.0.eps"].item() == 0.0
    assert "layers.0.eps" not in UniGNN(_spec("unigin", epsilon_learnable=False)).parameter_names()


def test_same_seed_same_init():
    a, b = UniGNN(_spec("unigat")), UniGNN(_spec("unigat"))
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()


@pytest.mark.parametrize("variant", ["unigcn", "unigat", "unigcnii", "unigin"])
def test_weights_roundtrip(tmp_path, variant):
    model = UniGNN(_spec(variant))
    for p in model.parameters():
        p.data[...] = np.random.default_rng(0).normal(size=p.shape)
    path = save_weights(model, tmp_path / "w.json")
    assert (tmp_path / "w.bin").stat().st_size == sum(p.data.size for p in model.parameters()) * 8
    back = load_weights(path)
    assert back.spec == model.spec
    for k in model.params:
        assert back.params[k].data.tobytes() == model.params[k].data.tobytes()


def test_no_norm_changes_output():
    H = random_hypergraph(np.random.default_rng(0), 6, 4, 3)
    X = np.random.default_rng(1).normal(size=(6, 4))
    with_norm = UniGNN(_spec("unigcn"))(prepare(H, "unigcn"), X).data
    without = UniGNN(_spec("unigcn", use_norm=False))(prepare(H, "unigcn"), X).data
    assert not np.allclose(with_norm, without)


def test_model_backward_reaches_every_parameter():
    rng = np.random.default_rng(0)
    for v in Variant:
        model = UniGNN(_spec(v.value, dropout=0.0, attention_dropout=0.0))
        H = random_hypergraph(rng, 10, 8, 4)
        ctx = prepare(H, v)
        loss = ad.softmax_cross_entropy(model(ctx, rng.normal(size=(10, 4)), training=True,
                                              rng=np.random.default_rng(0)), rng.integers(0, 3, size=10))
        loss.backward()
        for name, p in model.params.items():
            if not name.endswith(".eps"):
                assert np.any(p.grad != 0), (v, name)
