"""Command-line entry point: ``gscl {stats,train,eval,sweep,verify}``.

Exit status is 0 on success, 1 for user errors (bad flags, configs or input
files) and 2 for numerical failures (non-finite loss, failed verification).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError
from .encoder import load_matrix
from .graph import GraphFormatError, build_partitions, load_graph
from .metrics import hop_size_histogram
from .pipeline import (ConfigError, NumericalError, RunConfig, evaluate_embeddings, load_dataset,
                       run_sweep, run_train)

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_graph_args(p):
    p.add_argument("--graph", help="edge list file ('u v' per line)")
    p.add_argument("--features", help="feature CSV with a header row")
    p.add_argument("--labels", help="label CSV: node_id,class_id")
    p.add_argument("--config", help="run config JSON (its dataset is used when --graph is absent)")


def _add_train_overrides(p):
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=["pairwise", "listwise", "infonce_in_flat", "infonce_out_flat"])
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--tau", dest="tau_base", type=float)
    p.add_argument("--tau-spacing", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--layers", dest="num_layers", type=int)
    p.add_argument("--activation", choices=["relu", "prelu", "rrelu"])
    p.add_argument("--sampler", choices=["none", "uniform", "pagerank"])
    p.add_argument("--sample-ratio", type=float)
    p.add_argument("--pr-damping", type=float)
    p.add_argument("--negative-cap", type=int)


_OVERRIDES = ("seed", "variant", "k", "epochs", "lr", "weight_decay", "tau_base", "tau_spacing",
              "alpha", "beta", "hidden_dim", "num_layers", "activation", "sampler", "sample_ratio",
              "pr_damping", "negative_cap")


def build_parser():
    parser = _Parser(prog="gscl", description="Hop statistics, training, evaluation and self-checks "
                                              "for hop-ranking GCN embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("stats", help="hop sizes, label consistency and homophily")
    _add_graph_args(p)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out", help="directory for stats.json and stats.csv")

    p = sub.add_parser("train", help="train an encoder")
    _add_train_overrides(p)
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("eval", help="evaluate saved embeddings")
    p.add_argument("--run", required=True, help="run directory written by 'gscl train'")
    p.add_argument("--k", type=int, help="hop range for the per-hop similarity report")
    p.add_argument("--out", help="directory for eval.json and eval.csv (default: the run dir)")

    p = sub.add_parser("sweep", help="sequential grid search")
    p.add_argument("--config", required=True, help="base run config JSON")
    p.add_argument("--grid", required=True, help="JSON object mapping config keys to value lists")
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run gradient, call-count and oracle self-checks")
    p.add_argument("--level", choices=["quick", "full"], default="quick")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config)
    changes = {name: getattr(args, name) for name in _OVERRIDES if getattr(args, name, None) is not None}
    return cfg.replace(**changes) if changes else cfg


def _cmd_stats(args):
    if args.graph:
        if not args.features:
            raise UsageError("--graph needs --features")
        g = load_graph(args.graph, args.features, args.labels)
    elif args.config:
        cfg = RunConfig.from_json(args.config)
        g, _ = load_dataset(cfg.dataset, cfg.seed)
    else:
        raise UsageError("give --graph/--features[/--labels] or --config")
    stats = hop_size_histogram(g, args.k)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.json").write_text(stats.to_json())
        (out / "stats.csv").write_text(stats.to_csv())
    print(stats.to_json() if args.format == "json" else stats.to_csv(), end="\n")
    return EXIT_OK


def _cmd_train(args):
    cfg = _load_config(args)
    result = run_train(cfg, args.out)
    print(json.dumps({"run": str(args.out), "final_loss": result.log[-1]["loss"] if result.log else None,
                      **result.metrics}, indent=2))
    return EXIT_OK


def _metrics_csv(metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["metric", "value"])
    for key, v in metrics.items():
        if isinstance(v, list):
            w.writerows((f"{key}[hop{i + 1}]", x) for i, x in enumerate(v))
        else:
            w.writerow([key, v])
    return buf.getvalue()


def _cmd_eval(args):
    run = Path(args.run)
    manifest = json.loads((run / "manifest.json").read_text())
    cfg = RunConfig.from_dict(manifest["config"])
    g, split = load_dataset(cfg.dataset, cfg.seed)
    h = load_matrix(run / "embeddings.bin")
    if h.shape[0] != g.num_nodes:
        raise ConfigError("embedding rows do not match the dataset node count")
    k = args.k or cfg.k
    parts = build_partitions(g, k, negative_cap=cfg.negative_cap, rng=np.random.default_rng(cfg.seed))
    metrics = evaluate_embeddings(h, g, split, parts, cfg.seed)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    (out / "eval.csv").write_text(_metrics_csv(metrics))
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args):
    base = RunConfig.from_json(args.config)
    grid = json.loads(Path(args.grid).read_text())
    if not isinstance(grid, dict):
        raise ConfigError("grid must be a JSON object")
    result = run_sweep(base, grid, args.out)
    print(json.dumps({"best": result.best.to_dict(), "runs": result.table}, indent=2))
    return EXIT_OK


def _cmd_verify(args):
    from .verify import run_checks

    results = run_checks(args.level)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {"stats": _cmd_stats, "train": _cmd_train, "eval": _cmd_eval, "sweep": _cmd_sweep,
            "verify": _cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USER
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gscl: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (NumericalError, NonFiniteError, FloatingPointError) as exc:
        print(f"gscl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GraphFormatError, FileNotFoundError, IsADirectoryError,
            json.JSONDecodeError, ValueError, TypeError, KeyError) as exc:
        print(f"gscl: error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
