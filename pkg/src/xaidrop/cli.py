"""Command-line entry point.

Subcommands: train-node, train-link, sweep, generate-synthetic, explain-dump.
A JSON config file can supply every value; flags override individual keys
(flag names mirror the config keys, e.g. ``--drop.p``). Exit codes: 0 on
success, 1 on configuration errors, 2 on runtime errors. The environment
variable XAIDROP_VERBOSE (0/1) only controls progress output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .drop import DropConfig, SelectionCriterion
from .explain import ExplainConfig, exact_saliency, harden
from .gcn import TrainConfig, load_checkpoint, save_checkpoint, forward
from .graph import load_dataset, normalize_adjacency, save_dataset
from .harness import (
    ConfigError,
    ExperimentConfig,
    aggregate,
    emit_results,
    run_experiment,
    run_sweep,
    write_sweep_csv,
)
from .synthetic import CitationSpec, SyntheticSpec, make_citation_graph, generate_ba_house

VERBOSE = os.environ.get("XAIDROP_VERBOSE", "1") not in ("0", "false", "")


def _say(msg: str) -> None:
    if VERBOSE:
        print(msg, flush=True)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--data", dest="data_dir", help="dataset directory")
    p.add_argument("--citation-seed", type=int, dest="citation_seed",
                   help="use the built-in citation benchmark with this seed")
    p.add_argument("--out", dest="out_dir", help="output directory for result files")
    p.add_argument("--seeds", help="comma-separated run seeds, default 0,1,2,3,4")
    p.add_argument("--label", help="run label used in result files")
    p.add_argument("--no-drop", action="store_true", help="baseline: disable dropping")
    p.add_argument("--no-xai-metrics", action="store_true",
                   help="skip the per-node explanation metrics after training")
    p.add_argument("--drop.p", type=float, dest="drop_p")
    p.add_argument("--drop.theta", type=float, dest="drop_theta")
    p.add_argument("--drop.mapping", dest="drop_mapping")
    p.add_argument("--drop.criterion", dest="drop_criterion",
                   choices=[c.value for c in SelectionCriterion])
    p.add_argument("--drop.seed", type=int, dest="drop_seed")
    p.add_argument("--explain.k", type=float, dest="explain_k")
    p.add_argument("--train.hidden_dim", type=int, dest="train_hidden_dim")
    p.add_argument("--train.learning_rate", type=float, dest="train_learning_rate")
    p.add_argument("--train.weight_decay", type=float, dest="train_weight_decay")
    p.add_argument("--train.epochs", type=int, dest="train_epochs")
    p.add_argument("--train.patience", type=int, dest="train_patience")
    p.add_argument("--val-frac", type=float, dest="val_frac")
    p.add_argument("--test-frac", type=float, dest="test_frac")
    p.add_argument("--neg-ratio", type=float, dest="neg_ratio")
    p.add_argument("--split-seed", type=int, dest="split_seed")
    p.add_argument("--save-checkpoints", action="store_true",
                   help="save one model checkpoint per seed into the output directory")


def _merge(file_cfg: dict, args, key: str, flag: str):
    value = getattr(args, flag, None)
    if value is not None:
        section, _, leaf = key.partition(".")
        if leaf:
            file_cfg.setdefault(section, {})[leaf] = value
        else:
            file_cfg[key] = value


def build_experiment_config(args, task: str) -> ExperimentConfig:
    cfg: dict = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    for key, flag in (
        ("data_dir", "data_dir"),
        ("citation_seed", "citation_seed"),
        ("out_dir", "out_dir"),
        ("label", "label"),
        ("drop.p", "drop_p"),
        ("drop.theta", "drop_theta"),
        ("drop.mapping", "drop_mapping"),
        ("drop.criterion", "drop_criterion"),
        ("drop.seed", "drop_seed"),
        ("explain.k", "explain_k"),
        ("train.hidden_dim", "train_hidden_dim"),
        ("train.learning_rate", "train_learning_rate"),
        ("train.weight_decay", "train_weight_decay"),
        ("train.epochs", "train_epochs"),
        ("train.patience", "train_patience"),
        ("val_frac", "val_frac"),
        ("test_frac", "test_frac"),
        ("neg_ratio", "neg_ratio"),
        ("split_seed", "split_seed"),
    ):
        _merge(cfg, args, key, flag)
    if args.seeds:
        cfg["seeds"] = [int(s) for s in str(args.seeds).split(",") if s.strip()]

    drop_section = cfg.get("drop")
    if args.no_drop or drop_section is False:
        drop = None
    else:
        drop_kwargs = dict(drop_section or {})
        if "criterion" in drop_kwargs:
            drop_kwargs["criterion"] = SelectionCriterion(drop_kwargs["criterion"])
        drop = DropConfig(**drop_kwargs)
    explain_kwargs = dict(cfg.get("explain") or {})
    if "k" in explain_kwargs:
        explain_kwargs["retention_fraction"] = explain_kwargs.pop("k")
    synthetic = cfg.get("synthetic")
    if isinstance(synthetic, dict):
        synthetic = SyntheticSpec(**synthetic)
    try:
        return ExperimentConfig(
            task=task,
            data_dir=cfg.get("data_dir"),
            synthetic=synthetic,
            citation_seed=cfg.get("citation_seed"),
            train=TrainConfig(**(cfg.get("train") or {})),
            drop=drop,
            explain=ExplainConfig(**explain_kwargs),
            seeds=tuple(cfg.get("seeds", (0, 1, 2, 3, 4))),
            out_dir=cfg.get("out_dir"),
            label=cfg.get("label", ""),
            val_frac=cfg.get("val_frac", 0.1),
            test_frac=cfg.get("test_frac", 0.2),
            neg_ratio=cfg.get("neg_ratio", 1.0),
            split_seed=cfg.get("split_seed", 0),
            eval_xai_metrics=not args.no_xai_metrics and cfg.get("eval_xai_metrics", True),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_train(args, task: str) -> int:
    cfg = build_experiment_config(args, task)
    _say(f"running {task} [{cfg.run_label()}] on seeds {list(cfg.seeds)}")
    result = run_experiment(cfg)
    table = aggregate(result)
    for metric, (mean, std) in table.rows.items():
        _say(f"  {metric}: {mean:.4f} ± {std:.4f}")
    if cfg.out_dir:
        paths = emit_results([result], cfg.out_dir)
        _say(f"wrote {paths['results']}")
        if args.save_checkpoints:
            for record in result.records:
                path = Path(cfg.out_dir) / f"checkpoint_seed{record.seed}.npz"
                save_checkpoint(path, record.params, cfg.train, record.seed)
                _say(f"wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = build_experiment_config(args, args.task)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = run_sweep(cfg, args.axis, values)
    for value, table in rows:
        mean, std = table.rows["test_metric"]
        _say(f"  {args.axis}={value}: test_metric {mean:.4f} ± {std:.4f}")
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(out / "sweep.csv", args.axis, rows)
        _say(f"wrote {out / 'sweep.csv'}")
    return 0


def _cmd_generate(args) -> int:
    out = Path(args.out)
    if args.kind == "ba-house":
        spec = SyntheticSpec(
            base_nodes=args.base_nodes,
            attach_edges_per_node=args.attach_m,
            num_houses=args.num_houses,
            seed=args.seed,
        )
        graph, x, ls = generate_ba_house(spec)
    else:
        graph, x, ls, _ = make_citation_graph(CitationSpec(seed=args.seed))
    save_dataset(out, graph, x, ls)
    _say(f"wrote {graph.num_nodes} nodes / {graph.num_edges} edges to {out}")
    return 0


def _cmd_explain_dump(args) -> int:
    graph, x, _ = load_dataset(args.data)
    params, _, _ = load_checkpoint(args.checkpoint)
    adj = normalize_adjacency(graph)
    _, tape = forward(params, adj, x)
    nodes = [int(v) for v in args.nodes.split(",") if v.strip()]
    if not nodes:
        raise ConfigError("--nodes needs at least one node id")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for v in nodes:
        soft = exact_saliency(params, adj, x, v, tape=tape)
        sub = harden(soft, graph, args.explain_k)
        path = out / f"explanation_node_{v}.tsv"
        with path.open("w") as fh:
            fh.write("u\tv\timportance_u\timportance_v\n")
            for u, w in graph.pairs[sub.pair_keep]:
                fh.write(
                    f"{u}\t{w}\t{soft.node_importance[u]!r}\t{soft.node_importance[w]!r}\n"
                )
        _say(f"wrote {path} ({sub.num_retained_pairs} edges)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xaidrop",
        description="Explainability-guided topological dropping for GCN training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-node", help="node-classification experiment")
    _add_experiment_flags(p)

    p = sub.add_parser("train-link", help="link-prediction experiment")
    _add_experiment_flags(p)

    p = sub.add_parser("sweep", help="repeat an experiment over theta or p values")
    _add_experiment_flags(p)
    p.add_argument("--task", choices=("node_classification", "link_prediction"),
                   default="node_classification")
    p.add_argument("--axis", choices=("theta", "p"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")

    p = sub.add_parser("generate-synthetic", help="write a synthetic dataset directory")
    p.add_argument("--kind", choices=("ba-house", "citation"), default="ba-house")
    p.add_argument("--base-nodes", type=int, default=300)
    p.add_argument("--attach-m", type=int, default=2)
    p.add_argument("--num-houses", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain-dump", help="dump hardened explanations as TSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nodes", required=True, help="comma-separated node ids")
    p.add_argument("--explain.k", type=float, dest="explain_k", default=0.25)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train-node":
            return _cmd_train(args, "node_classification")
        if args.command == "train-link":
            return _cmd_train(args, "link_prediction")
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "generate-synthetic":
            return _cmd_generate(args)
        if args.command == "explain-dump":
            return _cmd_explain_dump(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
