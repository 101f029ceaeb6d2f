import dataclasses

import numpy as np
import pytest

from unignn import train as T
from unignn.autodiff import Tensor, softmax_cross_entropy
from unignn.data import DatasetBundle, carve_validation, planted_partition
from unignn.errors import DimensionMismatch, EmptyMask, InputError, NonFiniteLoss
from unignn.hypergraph import add_self_loops, build
from unignn.layers import UniGNN, prepare


@pytest.fixture(scope="module")
def bundle():
    return planted_partition(n=160, num_edges=120, dim=16, num_splits=3, label_rate=0.1, seed=1)


def cfg(b, variant="unigcn", **kw):
    model = kw.pop("model_overrides", {})
    kw.setdefault("epochs", 30)
    return T.TrainConfig.for_variant(variant, b.feature_dim, b.num_classes, model_overrides=model, **kw)


def test_config_validation():
    b = planted_partition(n=30, num_edges=20, dim=4)
    with pytest.raises(InputError):
        cfg(b, epochs=0)
    with pytest.raises(InputError):
        cfg(b, epochs=10, patience=10)
    with pytest.raises(InputError):
        cfg(b, lr=-1.0)
    with pytest.raises(InputError):
        cfg(b, report_rule="first")
    c = cfg(b, variant="unigat")
    assert T.TrainConfig.from_dict(c.to_dict()) == c
    with pytest.raises(InputError):
        T.TrainConfig.from_dict({**c.to_dict(), "bogus": 1})


def test_variant_protocol_defaults():
    b = planted_partition(n=30, num_edges=20, dim=4)
    deep = T.TrainConfig.for_variant("unigcnii", 4, 3, protocol="depth")
    assert (deep.epochs, deep.patience, deep.weight_decay, deep.dense_weight_decay) == (1000, 150, 0.01, 5e-4)
    assert deep.report_rule == "best_validation"
    shallow = T.TrainConfig.for_variant("unigcn", 4, 3)
    assert (shallow.lr, shallow.weight_decay, shallow.epochs, shallow.report_rule) == (0.01, 5e-4, 200, "last_epoch")
    assert b.num_classes == 3


def test_dataset_overrides():
    c = T.TrainConfig.for_variant("unigcn", 4, 3)
    pub = T.apply_overrides(c, "pubmed", "inductive")
    assert pub.model.input_dropout == 0.0 and pub.epochs == 300
    assert T.apply_overrides(c, "pubmed", "transductive") == c
    assert T.apply_overrides(c, "dblp", "transductive").model.use_norm is False
    assert T.apply_overrides(c.replace(apply_overrides=False), "dblp", "transductive").model.use_norm


def test_lr_zero_keeps_initial_weights(bundle):
    c = cfg(bundle, lr=0.0)
    report, model = T.train_transductive(bundle, c, return_model=True)
    fresh = UniGNN(dataclasses.replace(c.model, seed=c.seed))
    for k in model.params:
        np.testing.assert_array_equal(model.params[k].data, fresh.params[k].data)
    split = bundle.split("0")
    assert report.runs[0]["test_acc"] == T.evaluate(fresh, bundle, split["test"])


def test_single_big_step_decreases_loss():
    # two classes, linearly separable features, no dropout
    x = np.array([[1.0, 0.0]] * 4 + [[0.0, 1.0]] * 4)
    labels = np.array([0] * 4 + [1] * 4)
    H = build(8, [[0, 1], [2, 3], [4, 5], [6, 7]])
    b = DatasetBundle("toy", H, x, labels, 2, {"0": {"train": np.arange(8), "val": np.zeros(0, int),
                                                     "test": np.arange(8)}})
    c = cfg(b, epochs=1, lr=0.5, weight_decay=0.0, model_overrides={"dropout": 0.0, "use_norm": False})
    model = UniGNN(dataclasses.replace(c.model, seed=c.seed))
    ctx = prepare(H, "unigcn")

    def loss():
        return softmax_cross_entropy(model(ctx, Tensor(x.astype(np.float32))), labels).item()

    before = loss()
    assert before == pytest.approx(np.log(2), abs=0.1)
    T.fit(model, ctx, x, labels, np.arange(8), c, np.random.default_rng(0))
    assert loss() < before


def test_transductive_learns_and_is_deterministic(bundle):
    c = cfg(bundle, epochs=60)
    a = T.train_transductive(bundle, c)
    b = T.train_transductive(bundle, c)
    assert a.to_dict(include_timing=False) == b.to_dict(include_timing=False)
    assert a.runs[0]["test_acc"] > 0.8


def test_masking_audit(bundle):
    """Changing test labels must not change a single trained weight."""
    c = cfg(bundle, epochs=20)
    _, m1 = T.train_transductive(bundle, c, return_model=True)
    test = bundle.split("0")["test"]
    poisoned = bundle.labels.copy()
    poisoned[test] = (poisoned[test] + 1) % bundle.num_classes
    b2 = dataclasses.replace(bundle, labels=poisoned)
    _, m2 = T.train_transductive(b2, c, return_model=True)
    for k in m1.params:
        assert m1.params[k].data.tobytes() == m2.params[k].data.tobytes()


@pytest.mark.parametrize("variant", ["unigcn", "unigat", "unigin", "unigcnii"])
def test_inductive_never_reads_unseen_features(bundle, variant):
    c = cfg(bundle, variant=variant, epochs=15)
    part = T.inductive_partition(bundle.num_vertices, 0.4, 0.2, T.run_rng(c, 2))
    poisoned = bundle.features.copy()
    poisoned[part["unseen"]] = np.nan
    report = T.train_inductive(bundle, c, training_features=poisoned)
    clean = T.train_inductive(bundle, c)
    assert report.to_dict(include_timing=False) == clean.to_dict(include_timing=False)


def test_inductive_partition_sizes():
    p = T.inductive_partition(100, 0.4, 0.2, np.random.default_rng(0))
    assert (len(p["unseen"]), len(p["train"]), len(p["seen_test"])) == (40, 20, 40)
    assert len(set(np.concatenate(list(p.values())))) == 100
    with pytest.raises(InputError):
        T.inductive_partition(100, 0.9, 0.2, np.random.default_rng(0))


def test_inductive_zero_unseen_collapses(bundle):
    report = T.train_inductive(bundle, cfg(bundle), unseen_fraction=0.0)
    run = report.runs[0]
    assert run["unseen_acc"] is None and run["seen_acc"] > 0.5
    assert "unseen_acc" not in report.aggregate


def test_isolated_by_induction_gets_finite_logits():
    b = planted_partition(n=120, num_edges=60, dim=8, seed=4, isolated_fraction=0.1)
    for variant in ("unigcn", "unigat", "unigin", "unisage", "unigcnii", "unigcnstar"):
        _, model = T.train_inductive(b, cfg(b, variant=variant, epochs=5), return_model=True)
        logits = model(prepare(b.hypergraph, variant), b.features.astype(np.float32)).data
        assert np.all(np.isfinite(logits)), variant


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_aborts(bundle):
    bad = bundle.features.copy()
    bad[bundle.split("0")["train"][0]] = np.inf
    with pytest.raises(NonFiniteLoss):
        T.train_transductive(dataclasses.replace(bundle, features=bad), cfg(bundle, epochs=3))


def test_accuracy_edge_cases():
    logits = np.array([[2.0, 0.0], [0.0, 2.0]])
    assert T.accuracy(logits, np.array([0, 1]), [0]) == 1.0
    assert T.accuracy(logits, np.array([1, 0]), [0, 1]) == 0.0
    with pytest.raises(EmptyMask):
        T.accuracy(logits, np.array([0, 1]), np.zeros(2, dtype=bool))


def test_evaluate_dimension_mismatch(bundle):
    other = UniGNN(dataclasses.replace(cfg(bundle).model, input_dim=3))
    with pytest.raises(DimensionMismatch):
        T.evaluate(other, bundle, bundle.split("0")["test"])


def test_sweep_identical_runs_zero_std(bundle):
    rep = T.sweep(bundle, cfg(bundle, epochs=10), split_ids=["0"], seeds=[3, 3])
    assert rep.aggregate["test_acc"]["std"] == 0.0 and rep.aggregate["test_acc"]["n"] == 2


def test_parallel_sweep_matches_sequential(bundle):
    c = cfg(bundle, epochs=10)
    seq = T.sweep(bundle, c, split_ids=["0", "1"], seeds=[0, 1])
    par = T.sweep(bundle, c, split_ids=["0", "1"], seeds=[0, 1], jobs=2)
    assert seq.to_dict(include_timing=False) == par.to_dict(include_timing=False)


def test_report_aggregate_is_population_std():
    rep = T.RunReport(runs=[{"test_acc": 0.5}, {"test_acc": 0.7}])
    assert rep.aggregate["test_acc"]["mean"] == pytest.approx(0.6)
    assert rep.aggregate["test_acc"]["std"] == pytest.approx(0.1)
    assert "timing" not in rep.to_dict(include_timing=False)


def test_best_validation_restores_best_state(bundle):
    carved = dataclasses.replace(bundle, splits={"0": carve_validation(bundle.split("0"), 0.3,
                                                                       np.random.default_rng(0))})
    c = cfg(bundle, epochs=40, report_rule="best_validation")
    report, model = T.train_transductive(carved, c, return_model=True)
    run = report.runs[0]
    assert 0 <= run["best_epoch"] < 40
    assert run["val_acc"] == T.evaluate(model, carved, carved.split("0")["val"])


def test_early_stopping_halts(bundle):
    carved = dataclasses.replace(bundle, splits={"0": carve_validation(bundle.split("0"), 0.3,
                                                                       np.random.default_rng(0))})
    rep = T.train_transductive(carved, cfg(bundle, epochs=400, patience=5, lr=0.05))
    assert rep.runs[0]["epochs_run"] < 400


def test_depth_sweep_single_cell_matches_pipeline(bundle):
    base = cfg(bundle, epochs=15)
    table = T.depth_sweep(bundle, base, [2], ["unigcn"], split_ids=["0"])
    carved = dataclasses.replace(bundle, splits={"0": carve_validation(bundle.split("0"), 0.2,
                                                                       np.random.default_rng([0, 20]))})
    direct = T.train_transductive(carved, T._depth_config(base, base.model.kind, 2, 1000, 150))
    assert table[("unigcn", 2)].runs == direct.runs


def test_depth_sweep_records_oom(bundle, monkeypatch):
    def boom(*a, **k):
        raise MemoryError

    monkeypatch.setattr(T, "sweep", boom)
    table = T.depth_sweep(bundle, cfg(bundle), [64], ["unigcn"], split_ids=["0"])
    assert table[("unigcn", 64)].failure == "OOM"
    assert "OOM" in T.depth_table(table)
    with pytest.raises(InputError):
        T.depth_sweep(bundle, cfg(bundle), [], ["unigcn"])


def test_self_loop_ablation_idempotent_when_already_looped(bundle):
    looped = dataclasses.replace(bundle, hypergraph=add_self_loops(bundle.hypergraph))
    without, with_ = T.self_loop_ablation(looped, cfg(bundle, epochs=10), split_ids=["0"])
    assert without.runs == with_.runs
    with pytest.raises(InputError):
        T.self_loop_ablation(bundle, cfg(bundle, variant="unigin"))


def test_tables_render():
    rep = T.RunReport(runs=[{"test_acc": 0.701}, {"test_acc": 0.689}], config={"model": {"variant": "unigcn"}})
    text = T.report_table(rep)
    assert "unigcn" in text and "69.5 ± 0.6" in text
    lines = text.splitlines()
    assert len({len(s) for s in lines}) == 1
