"""Command-line entry point.

Every subcommand writes its report as JSON to ``--out`` (or to
``$UNIGNN_OUT_DIR/<command>.json`` when only the environment variable is
set) and prints it to stdout as JSON or as an aligned text table.

Settings resolve as built-in defaults < ``--config`` file < explicit flags.
Config files are JSON objects keyed by long flag names (``"lr"``,
``"hidden"``, ``"no-norm"``, ...); unknown keys are rejected.

Exit codes: 0 success, 1 ``gwl`` verdict "distinguishable", 2 usage or input
error, 3 numerical failure. Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import train as T
from .errors import InputError, NumericalError, UniGNNError
from .gradcheck import MODELS, OPS, run_gradcheck
from .gwl import distinguish
from .hypergraph import permute
from .layers import Variant, load_weights, prepare, save_weights

OUT_ENV = "UNIGNN_OUT_DIR"
EXIT_OK, EXIT_VERDICT, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print usage and exit itself
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _strs(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag values; explicit flags win over it")
    p.add_argument("--out", help=f"report JSON path (default: ${OUT_ENV}/<command>.json if set)")
    p.add_argument("--format", choices=["json", "table"], help="stdout rendering (default json)")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-run progress to stderr")


def _model_flags(p: argparse.ArgumentParser, with_model: bool = True) -> None:
    p.add_argument("--dataset", help="canonical dataset JSON (required)")
    if with_model:
        p.add_argument("--model", help="variant: unigcn, unigat, unigin, unisage, unigcnii, unigcn*")
    p.add_argument("--layers", type=int, help="number of propagation layers (published: 2)")
    p.add_argument("--hidden", type=int, help="hidden width (published: 64; UniGAT 8 per head)")
    p.add_argument("--heads", type=int, help="UniGAT attention heads (published: 8)")
    p.add_argument("--dropout", type=float, help="feature dropout (published: 0.6; UniGCNII 0.2)")
    p.add_argument("--input-dropout", type=float, help="dropout on raw features (default: --dropout)")
    p.add_argument("--attn-dropout", type=float, help="UniGAT attention dropout (published: 0.6)")
    p.add_argument("--alpha", type=float, help="UniGCNII initial-residual weight (published: 0.1)")
    p.add_argument("--lam", type=float, help="UniGCNII identity-mapping strength (published: 0.5)")
    p.add_argument("--no-norm", action="store_true", default=None,
                   help="skip row L2 normalization after each layer (published DBLP setting)")
    p.add_argument("--precision", choices=["f32", "f64"], help="float width of the run (default f32)")
    p.add_argument("--lr", type=float, help="Adam learning rate (published: 0.01)")
    p.add_argument("--wd", type=float, help="L2 weight decay (published: 5e-4; UniGCNII convs 0.01)")
    p.add_argument("--dense-wd", type=float, help="UniGCNII input/output layer decay (published: 5e-4)")
    p.add_argument("--epochs", type=int, help="training epochs (published: 200)")
    p.add_argument("--patience", type=int, help="early-stopping patience, 0 disables (UniGCNII deep: 150)")
    p.add_argument("--report-rule", choices=list(T.REPORT_RULES), help="which epoch's model is scored")
    p.add_argument("--seed", type=int, help="run seed; fixes init, dropout and sampling (default 0)")
    p.add_argument("--self-loops", choices=["auto", "on", "off"],
                   help="singleton-edge preprocessing (auto: on for UniGCN/UniGAT/UniGCNII/UniGCN*)")
    p.add_argument("--no-overrides", action="store_true", default=None,
                   help="ignore the per-dataset override table (Pubmed inductive, DBLP)")
    p.add_argument("--num-splits", type=int, help="stratified splits generated when the file has none (10)")
    p.add_argument("--label-rate", type=float, help="train fraction of generated splits (dataset table rate)")


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--splits", type=_strs, help="comma list of split ids (default: all in the file)")
    p.add_argument("--seeds", type=_ints, help="comma list of seeds (default: --seed)")
    p.add_argument("--jobs", type=int, help="worker processes; results match the sequential run (1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unignn", description="Hypergraph message-passing networks and 1-GWL tools.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="one training run")
    _model_flags(p)
    p.add_argument("--split", help="split id to train on (default 0)")
    p.add_argument("--protocol", choices=["transductive", "inductive"],
                   help="inductive removes 40%% of vertices during training (default transductive)")
    p.add_argument("--save-weights", help="write a weights manifest (+ .bin blob) here")
    _common(p)

    p = sub.add_parser("eval", help="score saved weights on a split")
    p.add_argument("--weights", help="weights manifest written by train --save-weights (required)")
    p.add_argument("--dataset", help="canonical dataset JSON (required)")
    p.add_argument("--split", help="split id (default 0)")
    p.add_argument("--mask", choices=["train", "val", "test"], help="which part of the split (test)")
    p.add_argument("--self-loops", choices=["auto", "on", "off"], help="as for train")
    p.add_argument("--num-splits", type=int, help="as for train")
    p.add_argument("--label-rate", type=float, help="as for train")
    _common(p)

    p = sub.add_parser("sweep", help="(split x seed) grid with mean and std")
    _model_flags(p)
    _grid_flags(p)
    p.add_argument("--protocol", choices=["transductive", "inductive"], help="as for train")
    _common(p)

    p = sub.add_parser("depth-sweep", help="accuracy against depth per variant")
    _model_flags(p, with_model=False)
    _grid_flags(p)
    p.add_argument("--depths", type=_ints, help="comma list (published: 2,4,8,16,32,64)")
    p.add_argument("--variants", type=_strs, help="comma list of variants (default unigcn,unigcnii)")
    p.add_argument("--val-fraction", type=float, help="share of each test part used for validation (0.2)")
    p.add_argument("--deep-epochs", type=int, help="UniGCNII epoch budget (published: 1000)")
    p.add_argument("--deep-patience", type=int, help="UniGCNII early-stopping patience (published: 150)")
    _common(p)

    p = sub.add_parser("ablate-selfloops", help="same pipeline with and without self-loops")
    _model_flags(p)
    _grid_flags(p)
    _common(p)

    p = sub.add_parser("gwl", help="1-GWL test on two hypergraph files (exit 1 if distinguishable)")
    p.add_argument("--a", help="first hypergraph JSON (required)")
    p.add_argument("--b", help="second hypergraph JSON (required)")
    p.add_argument("--max-iters", type=int, help="refinement cap (default n * |E|)")
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    p.add_argument("--ops", help=f"'all' or a comma list from: {', '.join(OPS + MODELS)}")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--seeds", type=int, help="random instances per op (default 20)")
    p.add_argument("--h", type=float, help="central-difference step (default 1e-5)")
    p.add_argument("--tol", type=float, help="maximum relative error (default 1e-5)")
    _common(p)

    p = sub.add_parser("fixtures", help="write the toy hypergraphs and a synthetic dataset")
    p.add_argument("--dir", help="output directory (default: $UNIGNN_OUT_DIR or ./fixtures)")
    p.add_argument("--seed", type=int, help="seed of the synthetic dataset (default 0)")
    _common(p)
    return parser


DEFAULTS = {
    "format": "json", "split": "0", "protocol": "transductive", "seed": 0, "self_loops": "auto",
    "no_norm": False, "no_overrides": False, "precision": "f32", "num_splits": 10, "jobs": 1,
    "mask": "test", "depths": [2, 4, 8, 16, 32], "variants": ["unigcn", "unigcnii"],
    "val_fraction": 0.2, "deep_epochs": 1000, "deep_patience": 150, "ops": "all", "seeds_n": 20,
    "h": 1e-5, "tol": 1e-5, "verbose": False,
}
_LIST_PARSERS = {"splits": _strs, "seeds": _ints, "depths": _ints, "variants": _strs}


def resolve(argv: list[str]) -> argparse.Namespace:
    """Parse ``argv`` and fold in defaults and the config file (defaults < file < flags)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    known = {k for k in vars(args) if k not in ("command", "config")}
    merged: dict = {}
    if args.config:
        doc = _read_config(args.config)
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest not in known:
                raise UsageError(f"config {args.config}: unknown key {key!r} for {args.command}")
            if dest in _LIST_PARSERS and isinstance(value, str):
                value = _LIST_PARSERS[dest](value)
            merged[dest] = value
    for key, value in vars(args).items():
        if value is not None:
            merged[key] = value
    out = argparse.Namespace()
    for key in known | {"command", "config"}:
        default = DEFAULTS.get(key)
        if args.command == "gradcheck" and key == "seeds":
            default = DEFAULTS["seeds_n"]
        setattr(out, key, merged.get(key, default))
    return out


def _read_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path}: expected a JSON object")
    return doc


# --------------------------------------------------------------------------
# helpers


def _require(args, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError(f"{args.command}: missing required " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _load_bundle(args) -> D.DatasetBundle:
    _require(args, "dataset")
    path = Path(args.dataset)
    if not path.is_file():
        raise InputError(f"dataset file not found: {path}")
    bundle = D.load_dataset(path)
    return D.ensure_splits(bundle, num_splits=args.num_splits, seed=0, label_rate=args.label_rate)


def _self_loops(flag: str) -> bool | None:
    return {"auto": None, "on": True, "off": False}[flag]


def _config(args, bundle: D.DatasetBundle, variant: str, protocol: str = "transductive") -> T.TrainConfig:
    model_kw = {"dtype": "float64" if args.precision == "f64" else "float32"}
    for flag, field_ in (("layers", "num_layers"), ("hidden", "hidden_dim"), ("heads", "heads"),
                         ("dropout", "dropout"), ("input_dropout", "input_dropout"),
                         ("attn_dropout", "attention_dropout"), ("alpha", "alpha"), ("lam", "lam")):
        if getattr(args, flag) is not None:
            model_kw[field_] = getattr(args, flag)
    if args.no_norm:
        model_kw["use_norm"] = False
    kw: dict = {"seed": args.seed, "self_loops": _self_loops(args.self_loops),
                "apply_overrides": not args.no_overrides}
    for flag, field_ in (("lr", "lr"), ("wd", "weight_decay"), ("dense_wd", "dense_weight_decay"),
                         ("epochs", "epochs"), ("patience", "patience"), ("report_rule", "report_rule")):
        if getattr(args, flag) is not None:
            kw[field_] = getattr(args, flag)
    if getattr(args, "split", None) is not None:
        kw["split_id"] = args.split
    return T.TrainConfig.for_variant(variant, bundle.feature_dim, bundle.num_classes, protocol,
                                     model_overrides=model_kw, **kw)


def _echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("format", "out", "verbose")}


def _emit(args, report: dict, table: str | None = None) -> None:
    text = T.dumps(report)
    target = args.out
    if target is None and os.environ.get(OUT_ENV):
        target = str(Path(os.environ[OUT_ENV]) / f"{args.command}.json")
    if target:
        path = Path(target)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    if args.format == "table" and table is not None:
        print(table)
    else:
        print(text)


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    _require(args, "model")
    bundle = _load_bundle(args)
    cfg = _config(args, bundle, args.model, args.protocol)
    fn = T.PROTOCOLS[args.protocol]
    report, model = fn(bundle, cfg, return_model=True)
    out = report.to_dict()
    out["dataset"] = bundle.metadata()
    out["invocation"] = _echo(args)
    if args.save_weights:
        save_weights(model, args.save_weights)
    _emit(args, out, T.report_table(report))
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "weights")
    bundle = _load_bundle(args)
    try:
        model = load_weights(args.weights)
    except FileNotFoundError as exc:
        raise InputError(f"weights not found: {exc.filename}") from None
    split = bundle.split(args.split)
    if args.mask not in split or not len(split[args.mask]):
        raise InputError(f"split {args.split} has no {args.mask!r} vertices")
    ctx = prepare(bundle.hypergraph, model.spec.variant, _self_loops(args.self_loops))
    acc = T.evaluate(model, bundle, split[args.mask], ctx=ctx)
    out = {"accuracy": acc, "mask": args.mask, "split": str(args.split), "size": int(len(split[args.mask])),
           "model": model.spec.to_dict(), "dataset": bundle.metadata()}
    _emit(args, out, T.format_table(["model", "split", "mask", "accuracy"],
                                    [[model.spec.variant, args.split, args.mask, f"{100 * acc:.1f}"]]))
    return EXIT_OK


def cmd_sweep(args) -> int:
    _require(args, "model")
    bundle = _load_bundle(args)
    cfg = _config(args, bundle, args.model, args.protocol)
    report = T.sweep(bundle, cfg, args.splits, args.seeds, protocol=args.protocol, jobs=args.jobs)
    out = report.to_dict()
    out["dataset"] = bundle.metadata()
    out["invocation"] = _echo(args)
    _emit(args, out, T.report_table(report))
    return EXIT_OK


def cmd_depth_sweep(args) -> int:
    bundle = _load_bundle(args)
    variants = [Variant.parse(v).value for v in args.variants]
    base = _config(args, bundle, variants[0])
    table = T.depth_sweep(bundle, base, args.depths, variants, args.splits, args.seeds,
                          val_fraction=args.val_fraction, deep_epochs=args.deep_epochs,
                          deep_patience=args.deep_patience, jobs=args.jobs)
    cells = [{"variant": v, "depth": d, **rep.to_dict()} for (v, d), rep in table.items()]
    out = {"cells": cells, "dataset": bundle.metadata(), "invocation": _echo(args)}
    _emit(args, out, T.depth_table(table))
    return EXIT_OK


def cmd_ablate(args) -> int:
    _require(args, "model")
    bundle = _load_bundle(args)
    cfg = _config(args, bundle, args.model)
    without, with_ = T.self_loop_ablation(bundle, cfg, args.splits, args.seeds, jobs=args.jobs)
    out = {"without_self_loops": without.to_dict(), "with_self_loops": with_.to_dict(),
           "dataset": bundle.metadata(), "invocation": _echo(args)}
    rows = [[cfg.model.variant, T.pm(without.aggregate.get("test_acc")), T.pm(with_.aggregate.get("test_acc"))]]
    _emit(args, out, T.format_table(["model", "without self-loops", "with self-loops"], rows))
    return EXIT_OK


def cmd_gwl(args) -> int:
    _require(args, "a", "b")
    hs = []
    for path in (args.a, args.b):
        if not Path(path).is_file():
            raise InputError(f"hypergraph file not found: {path}")
        hs.append(D.load_hypergraph(path))
    verdict = distinguish(hs[0], hs[1], max_iters=args.max_iters)
    _emit(args, verdict.to_dict(), T.format_table(["verdict", "iteration"],
                                                  [[verdict.verdict, verdict.iteration]]))
    return EXIT_VERDICT if verdict.distinguishable else EXIT_OK


def cmd_gradcheck(args) -> int:
    ops = "all" if args.ops == "all" else _strs(args.ops)
    if ops != "all":
        unknown = sorted(set(ops) - set(OPS + MODELS))
        if unknown:
            raise UsageError(f"gradcheck: unknown ops {unknown}")
    if args.seeds < 1:
        raise UsageError("gradcheck: --seeds must be >= 1")
    results = run_gradcheck(ops, seeds=args.seeds, seed=args.seed, h=args.h)
    worst = max(results.values())
    out = {"max_relative_error": worst, "tolerance": args.tol, "passed": worst < args.tol,
           "seeds": args.seeds, "seed": args.seed, "h": args.h, "errors": results}
    rows = [[k, f"{v:.2e}", "ok" if v < args.tol else "FAIL"] for k, v in results.items()]
    _emit(args, out, T.format_table(["op", "rel. error", ""], rows))
    if worst >= args.tol:
        raise NumericalError(f"gradcheck: max relative error {worst:.3e} >= {args.tol:g}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    target = Path(args.dir or os.environ.get(OUT_ENV) or "fixtures")
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for name, H in D.toy_fixtures().items():
        path = target / f"{name}.json"
        D.save_hypergraph(H, path)
        written.append(str(path))
    toy = D.toy_fixtures()["toy-hypergraph"]
    path = target / "toy-hypergraph-permuted.json"
    D.save_hypergraph(permute(toy, [6, 4, 5, 0, 2, 1, 3]), path)
    written.append(str(path))
    bundle = D.planted_partition(seed=args.seed)
    path = target / "planted.json"
    D.save_dataset(bundle, path)
    written.append(str(path))
    out = {"directory": str(target), "files": written,
           "pairs": {"clique-expansion-twins": ["single-edge.json", "triangle.json"],
                     "isomorphic": ["toy-hypergraph.json", "toy-hypergraph-permuted.json"]}}
    _emit(args, out, "\n".join(written))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "depth-sweep": cmd_depth_sweep,
            "ablate-selfloops": cmd_ablate, "gwl": cmd_gwl, "gradcheck": cmd_gradcheck,
            "fixtures": cmd_fixtures}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "kind": kind, "message": str(exc), "exit_code": code}
    path = getattr(exc, "path", None)
    if path is not None:
        payload["path"] = path
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def run(argv: list[str] | None = None) -> int:
    """Execute one invocation and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if any(a in ("-h", "--help") for a in argv):
        try:
            build_parser().parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
    try:
        args = resolve(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        with np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[args.command](args)
    except InputError as exc:
        return _fail("input", exc, EXIT_INPUT)
    except NumericalError as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except (ValueError, TypeError, OSError, KeyError) as exc:
        return _fail("input", exc, EXIT_INPUT)
    except UniGNNError as exc:
        return _fail("input", exc, EXIT_INPUT)


def main() -> None:
    sys.exit(run())
