"""Command-line surface: gen, train, eval, infer, ablate, verify.

Exit codes: 0 ok, 2 usage/config error, 3 data or checkpoint integrity
error, 4 verification failure.  Output files are written atomically
(temp file + rename); no command leaves partial output behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import data as D
from . import gnn
from . import report as rpt
from . import training as T
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .data import DatasetError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTEGRITY = 3
EXIT_VERIFY = 4

_DEFAULTS = RunConfig()


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_dataset(path: str) -> D.DialogDataset:
    if not os.path.exists(path):
        raise CliError(f"dataset not found: {path}", EXIT_USAGE)
    try:
        return D.load_dataset(path)
    except (DatasetError, json.JSONDecodeError, OSError) as e:
        raise CliError(f"invalid dataset {path}: {e}", EXIT_INTEGRITY)


def _load_model(path: str) -> T.Model:
    if not os.path.exists(path):
        raise CliError(f"checkpoint not found: {path}", EXIT_USAGE)
    try:
        tokens, tensors = ckpt.load(path)
        return T.model_from_tensors(tokens, tensors)
    except (CheckpointError, OSError) as e:
        raise CliError(f"cannot load checkpoint {path}: {e}", EXIT_INTEGRITY)


def _load_cfg(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise CliError(f"config not found: {path}", EXIT_USAGE)
    try:
        return load_config(path)
    except ConfigError as e:
        raise CliError(str(e), EXIT_USAGE)


def cmd_gen(args) -> int:
    spec = D.SyntheticSpec(
        n_dialogs=args.dialogs, n_rounds=args.rounds, k_options=args.k,
        dep_prob=args.dep_prob, seed=args.seed,
        n_entities=args.entities, n_attributes=args.attributes,
        max_deps=args.max_deps, locality=args.locality,
    )
    ds = D.gen_synthetic(spec)
    if args.visdialq:
        ds, _ = D.to_visdialq(ds, n_candidates=args.k, seed=args.seed)
    D.save_dataset(ds, args.out)
    print(f"wrote {len(ds.dialogs)} dialogs to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    ds = _load_dataset(args.data)
    log_lines = []

    def log(record):
        line = json.dumps(record)
        log_lines.append(line)
        print(line)

    try:
        model, _ = T.train(ds, cfg, log=log)
    except DatasetError as e:
        raise CliError(str(e), EXIT_INTEGRITY)
    tensors = T.model_to_tensors(model)
    ckpt.save(args.out, model.vocab.id_to_token, tensors)
    if args.log:
        rpt.atomic_write_text(args.log, "\n".join(log_lines) + "\n")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.ckpt)
    ds = _load_dataset(args.data)
    if args.mode is not None:
        if args.mode != ds.mode:
            raise CliError(f"--mode {args.mode} does not match dataset mode {ds.mode}",
                           EXIT_USAGE)
        model.cfg.mode = args.mode
    else:
        model.cfg.mode = ds.mode
    reportm, per_round = T.evaluate(model, ds)
    rpt.atomic_write_text(args.report, rpt.eval_report_json(reportm, per_round))
    if args.figures:
        os.makedirs(args.figures, exist_ok=True)
        rpt.atomic_write_text(os.path.join(args.figures, "per_round.csv"),
                              rpt.per_round_csv(per_round))
        rpt.render_per_round_figure(per_round,
                                    os.path.join(args.figures, "per_round.png"))
    print(json.dumps(reportm.to_dict()))
    return EXIT_OK


def cmd_infer(args) -> int:
    model = _load_model(args.ckpt)
    ds = _load_dataset(args.data)
    model.cfg.mode = ds.mode
    if not 0 <= args.dialog < len(ds.dialogs):
        raise CliError(f"dialog index {args.dialog} out of range", EXIT_USAGE)
    rounds = ds.dialogs[args.dialog].rounds
    if not 0 <= args.round < len(rounds):
        raise CliError(f"round index {args.round} out of range", EXIT_USAGE)
    view = D.model_view(ds, args.dialog, args.round)
    if model.cfg.variant == "no_iter" or model.cfg.outer_iters == 0:
        # structure export needs at least one link estimate
        model.cfg.variant = "full"
        model.cfg.outer_iters = max(1, model.cfg.outer_iters)
    res = model.forward(view)
    order = np.argsort(-res.scores, kind="stable")
    for pos, oi in enumerate(order, start=1):
        marker = " *" if oi == view.gt_index else ""
        print(f"{pos:3d}. p={res.probs[oi]:.4f} {view.options[oi]}{marker}")
    if args.export_structure:
        doc = gnn.export_structure(res.graph)
        base = args.export_structure
        if base.endswith(".json"):
            rpt.atomic_write_text(base, gnn.structure_to_json(doc))
        elif base.endswith(".dot"):
            rpt.atomic_write_text(base, gnn.structure_to_dot(doc))
        else:
            rpt.atomic_write_text(base + ".json", gnn.structure_to_json(doc))
            rpt.atomic_write_text(base + ".dot", gnn.structure_to_dot(doc))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    ds = _load_dataset(args.data)
    variants = args.variants.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    try:
        results = T.run_ablation(ds, cfg, variants=variants, seeds=seeds,
                                 eval_count=args.eval_count,
                                 log=lambda r: print(json.dumps(r)))
    except ValueError as e:
        raise CliError(str(e), EXIT_USAGE)
    os.makedirs(args.out, exist_ok=True)
    rpt.atomic_write_text(os.path.join(args.out, "ablation.json"),
                          rpt.ablation_json(results))
    table = T.ablation_table(results)
    rpt.atomic_write_text(os.path.join(args.out, "ablation.txt"), table)
    rpt.render_ablation_figure(results, os.path.join(args.out, "ablation.png"))
    print(table, end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify as V

    try:
        results, ok = V.run_suite(args.suite)
    except ValueError as e:
        raise CliError(str(e), EXIT_USAGE)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="emgnn",
        description="Structure inference on partially observed dialog graphs",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic benchmark dataset")
    g.add_argument("--out", required=True, help="output dataset path (.json or .json.gz)")
    g.add_argument("--dialogs", type=int, default=100, help="number of dialogs (default 100)")
    g.add_argument("--rounds", type=int, default=3, help="rounds per dialog (default 3)")
    g.add_argument("--k", type=int, default=_DEFAULTS.k_options,
                   help=f"options per round (default {_DEFAULTS.k_options})")
    g.add_argument("--max-deps", type=int, default=None,
                   help="cap dependency subsets at this size (uniform 1..max)")
    g.add_argument("--locality", type=float, default=None,
                   help="recency bias for dependencies: P(distance d) ~ locality**d "
                        "(requires --max-deps; default uniform)")
    g.add_argument("--dep-prob", type=float, default=0.5,
                   help="planted dependency probability (default 0.5)")
    g.add_argument("--entities", type=int, default=40, help="entity vocabulary size (default 40)")
    g.add_argument("--attributes", type=int, default=25, help="attribute vocabulary size (default 25)")
    g.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    g.add_argument("--visdialq", action="store_true",
                   help="emit the next-question relabeling of the dataset")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True, help="dataset path")
    t.add_argument("--config", required=True, help="run config JSON path")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--log", default=None, help="optional JSON-lines training log path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True, help="checkpoint path")
    e.add_argument("--data", required=True, help="dataset path")
    e.add_argument("--mode", choices=["visdial", "visdialq"], default=None,
                   help="evaluation mode (default: dataset mode)")
    e.add_argument("--report", required=True, help="metrics report JSON output path")
    e.add_argument("--figures", default=None,
                   help="optional directory for per-round CSV and figure")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="rank options for one round and export structure")
    i.add_argument("--ckpt", required=True, help="checkpoint path")
    i.add_argument("--data", required=True, help="dataset path")
    i.add_argument("--dialog", type=int, required=True, help="dialog index")
    i.add_argument("--round", type=int, required=True, help="round index (0-based)")
    i.add_argument("--export-structure", default=None,
                   help="edge-weight export path (.json, .dot, or a base for both)")
    i.set_defaults(func=cmd_infer)

    a = sub.add_parser("ablate", help="run the graph-variant ablation")
    a.add_argument("--data", required=True, help="dataset path")
    a.add_argument("--config", required=True, help="run config JSON path")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--variants", default="full,const_graph,no_iter",
                   help="comma-separated variants (default full,const_graph,no_iter)")
    a.add_argument("--seeds", default="0", help="comma-separated seeds (default 0)")
    a.add_argument("--eval-count", type=int, default=None,
                   help="held-out dialog count (default: last 10%%)")
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("verify", help="run self-verification suites")
    v.add_argument("--suite", default="all",
                   help="gradcheck | mrf | all (default all)")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError,) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
