"""Experiment protocols: transductive, inductive, depth sweep, self-loop ablation."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, softmax_cross_entropy, zero_grads
from .data import DatasetBundle, canonical_name, carve_validation
from .errors import DimensionMismatch, EmptyMask, InputError, NonFiniteLoss
from .hypergraph import induce
from .layers import LayerContext, ModelSpec, UniGNN, Variant, prepare

log = logging.getLogger(__name__)

REPORT_RULES = ("last_epoch", "best_validation")

# per-(dataset, protocol) adjustments; "*" matches any protocol
DATASET_OVERRIDES: dict[tuple[str, str], dict] = {
    ("pubmed", "inductive"): {"model.input_dropout": 0.0, "epochs": 300},
    ("dblp", "*"): {"model.use_norm": False},
}


@dataclass
class TrainConfig:
    model: ModelSpec
    lr: float = 0.01
    weight_decay: float = 5e-4
    dense_weight_decay: float | None = None  # UniGCNII dense layers; None -> weight_decay
    epochs: int = 200
    patience: int = 0
    split_id: str = "0"
    seed: int = 0
    report_rule: str = "last_epoch"
    self_loops: bool | None = None  # None -> variant default
    apply_overrides: bool = True

    def __post_init__(self):
        self.split_id = str(self.split_id)
        self.validate()

    def validate(self) -> None:
        if self.lr < 0:
            raise InputError("lr must be >= 0")
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.patience < 0 or (self.patience and self.patience >= self.epochs):
            raise InputError("patience must be 0 (disabled) or smaller than epochs")
        if self.report_rule not in REPORT_RULES:
            raise InputError(f"report_rule must be one of {REPORT_RULES}")

    @classmethod
    def for_variant(cls, variant, input_dim: int, num_classes: int, protocol: str = "transductive",
                    **overrides) -> "TrainConfig":
        """Published training settings for a variant under a protocol."""
        v = Variant.parse(variant)
        model_kw = overrides.pop("model_overrides", {})
        kw: dict = {}
        if protocol == "depth":
            kw["report_rule"] = "best_validation"
            if v is Variant.UNIGCNII:
                kw.update(epochs=1000, patience=150, weight_decay=0.01, dense_weight_decay=5e-4)
        elif v is Variant.UNIGCNII:
            kw.update(weight_decay=0.01, dense_weight_decay=5e-4)
        kw.update(overrides)
        spec = ModelSpec.defaults_for(v, input_dim, num_classes, **model_kw)
        return cls(model=spec, **kw)

    def replace(self, **changes) -> "TrainConfig":
        model_changes = {k[6:]: changes.pop(k) for k in list(changes) if k.startswith("model.")}
        model = dataclasses.replace(self.model, **model_changes) if model_changes else self.model
        return dataclasses.replace(self, model=model, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelSpec.from_dict(d.pop("model"))
        known = {f.name for f in dataclasses.fields(cls)}
        if set(d) - known:
            raise InputError(f"unknown TrainConfig fields: {sorted(set(d) - known)}")
        return cls(model=model, **d)


def apply_overrides(config: TrainConfig, dataset: str, protocol: str) -> TrainConfig:
    if not config.apply_overrides:
        return config
    name = canonical_name(dataset)
    changes: dict = {}
    for (ds, proto), values in DATASET_OVERRIDES.items():
        if ds == name and proto in ("*", protocol):
            changes.update(values)
    return config.replace(**changes) if changes else config


@dataclass
class RunReport:
    """Per-run metrics with a recomputable mean/std aggregate.

    ``timing`` holds wall-clock data and is excluded from determinism
    comparisons.
    """

    runs: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    failure: str | None = None

    @property
    def metrics(self) -> list[str]:
        keys = []
        for r in self.runs:
            for k, v in r.items():
                if k.endswith("acc") and k not in keys and v is not None:
                    keys.append(k)
        return keys

    @property
    def aggregate(self) -> dict[str, dict]:
        out = {}
        for k in self.metrics:
            vals = np.array([r[k] for r in self.runs if r.get(k) is not None], dtype=np.float64)
            # population standard deviation over runs
            out[k] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}
        return out

    def mean(self, metric: str = "test_acc") -> float:
        return self.aggregate[metric]["mean"]

    @classmethod
    def merge(cls, reports: list["RunReport"], config: dict | None = None) -> "RunReport":
        runs = [r for rep in reports for r in rep.runs]
        wall = sum(rep.timing.get("wall_clock_s", 0.0) for rep in reports)
        return cls(runs=runs, config=config or (reports[0].config if reports else {}),
                   timing={"wall_clock_s": wall})

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {"config": self.config, "runs": self.runs, "aggregate": self.aggregate}
        if self.failure:
            d["failure"] = self.failure
        if include_timing:
            d["timing"] = self.timing
        return d


# --------------------------------------------------------------------------
# core loop


def _split_int(split_id: str) -> int:
    return int(split_id) if split_id.isdigit() else zlib.crc32(split_id.encode())


def run_rng(config: TrainConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, _split_int(config.split_id), stream]))


def _indices(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    return np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask) -> float:
    idx = _indices(mask, len(labels))
    if idx.size == 0:
        raise EmptyMask("accuracy mask selects no vertices")
    return float((logits[idx].argmax(axis=1) == labels[idx]).mean())


def evaluate(model: UniGNN, bundle: DatasetBundle, mask, ctx: LayerContext | None = None,
             features: np.ndarray | None = None, self_loops: bool | None = None) -> float:
    """Accuracy of ``model`` on ``mask`` (eval-mode forward on the full hypergraph)."""
    features = bundle.features if features is None else features
    if features.shape[1] != model.spec.input_dim or bundle.num_classes != model.spec.num_classes:
        raise DimensionMismatch("model dimensions do not match the dataset")
    ctx = ctx or prepare(bundle.hypergraph, model.spec.variant, self_loops)
    logits = model(ctx, Tensor(features.astype(model.spec.dtype)), training=False)
    return accuracy(logits.data, bundle.labels, mask)


def fit(model: UniGNN, ctx: LayerContext, x: np.ndarray, labels: np.ndarray, train_idx,
        config: TrainConfig, rng: np.random.Generator, val_idx=None) -> dict:
    """Full-batch Adam training. Returns the training history.

    With ``report_rule == "best_validation"`` and a non-empty ``val_idx`` the
    model is restored to its best-validation weights at the end.
    """
    params = model.parameters()
    decays = model.weight_decays(config.weight_decay, config.dense_weight_decay)
    state = AdamState()
    xt = Tensor(np.asarray(x, dtype=model.spec.dtype))
    track_val = val_idx is not None and len(val_idx) > 0
    best_val, best_epoch, best_state, stale = -1.0, -1, None, 0
    losses = []
    epoch = -1
    for epoch in range(config.epochs):
        zero_grads(params)
        logits = model(ctx, xt, training=True, rng=rng)
        loss = softmax_cross_entropy(logits, labels, train_idx)
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteLoss(f"epoch {epoch}: training loss is {value}")
        losses.append(value)
        loss.backward()
        adam_step(params, state, config.lr, decays)
        if track_val:
            val = accuracy(model(ctx, xt, training=False).data, labels, val_idx)
            if val > best_val:
                best_val, best_epoch, stale = val, epoch, 0
                if config.report_rule == "best_validation":
                    best_state = model.state()
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
    if best_state is not None:
        model.load_state(best_state)
    return {"losses": losses, "epochs_run": epoch + 1, "best_val_acc": best_val if track_val else None,
            "best_epoch": best_epoch if track_val else None}


def _model_for(config: TrainConfig, bundle: DatasetBundle) -> UniGNN:
    spec = config.model
    if spec.input_dim != bundle.feature_dim or spec.num_classes != bundle.num_classes:
        raise DimensionMismatch(
            f"model expects d={spec.input_dim}, C={spec.num_classes}; dataset has "
            f"d={bundle.feature_dim}, C={bundle.num_classes}")
    return UniGNN(dataclasses.replace(spec, seed=config.seed))


def _finish(run: dict, config: TrainConfig, started: float) -> RunReport:
    return RunReport(runs=[run], config=config.to_dict(),
                     timing={"wall_clock_s": time.perf_counter() - started})


def train_transductive(bundle: DatasetBundle, config: TrainConfig, return_model: bool = False):
    """Train on the split's train vertices with the whole hypergraph visible."""
    started = time.perf_counter()
    config = apply_overrides(config, bundle.name, "transductive")
    split = bundle.split(config.split_id)
    model = _model_for(config, bundle)
    ctx = prepare(bundle.hypergraph, config.model.variant, config.self_loops)
    hist = fit(model, ctx, bundle.features, bundle.labels, split["train"], config,
               run_rng(config, 1), split.get("val"))
    logits = model(ctx, Tensor(bundle.features.astype(config.model.dtype))).data
    run = {"split": config.split_id, "seed": config.seed,
           "test_acc": accuracy(logits, bundle.labels, split["test"]),
           "val_acc": accuracy(logits, bundle.labels, split["val"]) if len(split.get("val", [])) else None,
           "final_loss": hist["losses"][-1], "epochs_run": hist["epochs_run"],
           "best_epoch": hist["best_epoch"]}
    report = _finish(run, config, started)
    return (report, model) if return_model else report


def inductive_partition(n: int, unseen_fraction: float, train_fraction: float,
                        rng: np.random.Generator) -> dict[str, np.ndarray]:
    if not (0 <= unseen_fraction < 1 and 0 < train_fraction and unseen_fraction + train_fraction < 1):
        raise InputError("need 0 <= unseen_fraction < 1, train_fraction > 0 and their sum < 1")
    perm = rng.permutation(n)
    k_unseen = int(round(unseen_fraction * n))
    k_train = max(1, int(round(train_fraction * n)))
    return {"unseen": np.sort(perm[:k_unseen]), "train": np.sort(perm[k_unseen:k_unseen + k_train]),
            "seen_test": np.sort(perm[k_unseen + k_train:])}


def train_inductive(bundle: DatasetBundle, config: TrainConfig, unseen_fraction: float = 0.4,
                    train_fraction: float = 0.2, rng: np.random.Generator | None = None,
                    training_features: np.ndarray | None = None, return_model: bool = False):
    """Train on the hypergraph with unseen vertices removed, test on the full one.

    ``training_features`` substitutes the feature matrix seen during training
    (used to audit that unseen rows are never read).
    """
    started = time.perf_counter()
    config = apply_overrides(config, bundle.name, "inductive")
    rng = rng or run_rng(config, 2)
    part = inductive_partition(bundle.num_vertices, unseen_fraction, train_fraction, rng)
    visible = np.setdiff1d(np.arange(bundle.num_vertices), part["unseen"])
    H_seen, old_to_new = induce(bundle.hypergraph, visible)
    x_train = bundle.features if training_features is None else training_features
    model = _model_for(config, bundle)
    ctx_seen = prepare(H_seen, config.model.variant, config.self_loops)
    hist = fit(model, ctx_seen, x_train[visible], bundle.labels[visible], old_to_new[part["train"]],
               config, run_rng(config, 1))
    ctx_full = prepare(bundle.hypergraph, config.model.variant, config.self_loops)
    logits = model(ctx_full, Tensor(bundle.features.astype(config.model.dtype))).data
    run = {"split": config.split_id, "seed": config.seed,
           "seen_acc": accuracy(logits, bundle.labels, part["seen_test"]),
           "unseen_acc": accuracy(logits, bundle.labels, part["unseen"]) if part["unseen"].size else None,
           "final_loss": hist["losses"][-1], "epochs_run": hist["epochs_run"]}
    report = _finish(run, config, started)
    return (report, model) if return_model else report


# --------------------------------------------------------------------------
# sweeps

PROTOCOLS = {"transductive": train_transductive, "inductive": train_inductive}

_worker_bundle: DatasetBundle | None = None


def _init_worker(bundle: DatasetBundle) -> None:
    global _worker_bundle
    _worker_bundle = bundle


def _run_cell(args) -> RunReport:
    protocol, config = args
    return PROTOCOLS[protocol](_worker_bundle, config)


def sweep(bundle: DatasetBundle, config: TrainConfig, split_ids=None, seeds=None,
          protocol: str = "transductive", jobs: int = 1) -> RunReport:
    """Run the (split x seed) grid and aggregate; parallel runs give identical numbers."""
    split_ids = [str(s) for s in (split_ids if split_ids is not None else sorted(bundle.splits, key=_split_int))]
    seeds = list(seeds) if seeds is not None else [config.seed]
    cells = [(protocol, config.replace(split_id=s, seed=int(seed))) for s in split_ids for seed in seeds]
    started = time.perf_counter()
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(bundle,)) as ex:
            reports = list(ex.map(_run_cell, cells))
    else:
        reports = [PROTOCOLS[protocol](bundle, c) for _, c in cells]
    for rep in reports:
        log.info("split=%s seed=%s %s", rep.runs[0]["split"], rep.runs[0]["seed"],
                 {k: v for k, v in rep.runs[0].items() if k.endswith("acc")})
    echo = config.to_dict()
    echo.update(split_id=None, seed=None, split_ids=split_ids, seeds=seeds, protocol=protocol)
    merged = RunReport.merge(reports, echo)
    merged.timing["wall_clock_s"] = time.perf_counter() - started
    return merged


def _depth_config(base: TrainConfig, variant: Variant, depth: int, deep_epochs: int,
                  deep_patience: int) -> TrainConfig:
    spec = base.model
    model_kw = {"num_layers": depth, "use_norm": spec.use_norm, "dtype": spec.dtype}
    if variant is Variant.UNIGCNII:
        model_kw.update(alpha=spec.alpha, lam=spec.lam)
    cfg = TrainConfig.for_variant(variant, spec.input_dim, spec.num_classes, protocol="depth",
                                  model_overrides=model_kw, lr=base.lr, seed=base.seed,
                                  apply_overrides=base.apply_overrides)
    if variant is Variant.UNIGCNII:
        return cfg.replace(epochs=deep_epochs, patience=min(deep_patience, deep_epochs - 1))
    return cfg.replace(epochs=base.epochs, weight_decay=base.weight_decay)


def depth_sweep(bundle: DatasetBundle, base_config: TrainConfig, depths, variants=None,
                split_ids=None, seeds=None, val_fraction: float = 0.2, deep_epochs: int = 1000,
                deep_patience: int = 150, jobs: int = 1) -> dict[tuple[str, int], RunReport]:
    """One aggregated report per (variant, depth) cell.

    A validation set is carved out of each split's test part; shallow models
    report at their best validation epoch, UniGCNII additionally early-stops.
    Cells that run out of memory are recorded as failures.
    """
    depths = list(depths)
    if not depths:
        raise InputError("depths must be non-empty")
    variants = [Variant.parse(v) for v in (variants or [base_config.model.variant])]
    split_ids = [str(s) for s in (split_ids if split_ids is not None else sorted(bundle.splits, key=_split_int))]
    carved = dataclasses.replace(bundle, splits={
        s: carve_validation(bundle.split(s), val_fraction,
                            np.random.default_rng([_split_int(s), 20])) for s in split_ids})
    table = {}
    for v in variants:
        for depth in depths:
            cfg = _depth_config(base_config, v, depth, deep_epochs, deep_patience)
            try:
                table[(v.value, depth)] = sweep(carved, cfg, split_ids, seeds, jobs=jobs)
            except MemoryError:
                table[(v.value, depth)] = RunReport(config=cfg.to_dict(), failure="OOM")
    return table


def self_loop_ablation(bundle: DatasetBundle, config: TrainConfig, split_ids=None, seeds=None,
                       jobs: int = 1) -> tuple[RunReport, RunReport]:
    """Identical pipelines with and without self-loop preprocessing: ``(without, with)``."""
    if config.model.kind not in (Variant.UNIGCN, Variant.UNIGAT):
        raise InputError("self-loop ablation is defined for unigcn and unigat")
    without = sweep(bundle, config.replace(self_loops=False), split_ids, seeds, jobs=jobs)
    with_ = sweep(bundle, config.replace(self_loops=True), split_ids, seeds, jobs=jobs)
    return without, with_


# --------------------------------------------------------------------------
# rendering


def format_table(headers: list[str], rows: list[list]) -> str:
    cells = [[str(h) for h in headers]] + [[_cell(c) for c in r] for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(headers))]
    lines = ["  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _cell(c) -> str:
    if isinstance(c, float):
        return f"{c:.1f}"
    return str(c)


def pm(agg: dict | None) -> str:
    if not agg:
        return "-"
    return f"{100 * agg['mean']:.1f} ± {100 * agg['std']:.1f}"


def report_table(report: RunReport, title: str = "") -> str:
    agg = report.aggregate
    headers = ["model"] + list(agg)
    row = [report.config.get("model", {}).get("variant", title)] + [pm(agg[k]) for k in agg]
    return format_table(headers, [row])


def depth_table(table: dict[tuple[str, int], RunReport], metric: str = "test_acc") -> str:
    depths = sorted({d for _, d in table})
    variants = list(dict.fromkeys(v for v, _ in table))
    rows = []
    for v in variants:
        row = [v]
        for d in depths:
            rep = table.get((v, d))
            if rep is None:
                row.append("-")
            elif rep.failure:
                row.append(rep.failure)
            else:
                row.append(f"{100 * rep.mean(metric):.1f}")
        rows.append(row)
    return format_table(["model"] + [str(d) for d in depths], rows)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
