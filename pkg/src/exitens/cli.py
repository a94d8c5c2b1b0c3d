"""Command-line entry point.

Subcommands: train (config -> checkpoint + log), eval (checkpoint + csv
-> metrics), cost (arch config -> cost table), enumerate (taxonomy grid),
gen-data (synthetic csv), report (training log -> figures + table).  All
failures exit nonzero with a one-line diagnostic on stderr; successful
runs write only to their declared output paths.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .costs import classify_config, network_cost, search_space_sizes
from .datasets import DATASET_KINDS, gen_data, load_csv, save_csv
from .evaluation import evaluate_dataset
from .plots import render_report
from .records import read_ndjson, write_json, write_ndjson
from .runconfig import parse_config, parse_cost_config
from .training import train_loop

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exitens",
        description="Train, evaluate and cost multi-input multi-exit ensemble networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a run config file")
    p_train.add_argument("config", help="path to the run configuration")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a csv dataset")
    p_eval.add_argument("checkpoint", help="checkpoint file written by train")
    p_eval.add_argument("data", help="csv dataset (f1,...,fC,target)")
    p_eval.add_argument("--out", default="metrics.json", help="metrics output path")
    p_eval.add_argument("--top-k", type=int, default=None,
                        help="active exits per input (default: the trained config's value)")
    p_eval.add_argument("--bins", type=int, default=15, help="calibration bins")

    p_cost = sub.add_parser("cost", help="exact parameter/FLOP costs for an architecture")
    p_cost.add_argument("config", help="path to the cost configuration")
    p_cost.add_argument("--out", default=None, help="optional machine-readable output path")

    p_enum = sub.add_parser("enumerate", help="taxonomy and search-space sizes over a grid")
    p_enum.add_argument("n_max", type=int, help="largest input count N")
    p_enum.add_argument("depth", type=int, help="network depth D")
    p_enum.add_argument("--out", default=None, help="optional newline-delimited output path")

    p_gen = sub.add_parser("gen-data", help="write a synthetic dataset as csv")
    p_gen.add_argument("kind", choices=DATASET_KINDS)
    p_gen.add_argument("n", type=int, help="number of samples")
    p_gen.add_argument("seed", type=int)
    p_gen.add_argument("out", help="csv output path")
    p_gen.add_argument("--noise", type=float, default=0.0)

    p_report = sub.add_parser("report", help="render figures and a table from a training log")
    p_report.add_argument("log", help="training log written by train")
    p_report.add_argument("--out-dir", default="report", help="directory for rendered files")
    return parser


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _cmd_train(args) -> int:
    config = parse_config(_read_text(args.config), source=args.config)
    dataset = config.data.load()
    result = train_loop(config.model, config.trainer, config.schedule, dataset)
    write_ndjson(result.log, config.output.log)
    save_checkpoint(config.output.checkpoint, result.net, result.posterior)
    print(f"trained {config.trainer.steps} steps on {len(dataset)} samples")
    if result.log:
        last = result.log[-1]
        print(f"final loss: total={last['total']!r} data_fit={last['data_fit']!r} "
              f"regularizer={last['regularizer']!r}")
    print(f"checkpoint: {config.output.checkpoint}")
    print(f"log: {config.output.log}")
    return 0


def _cmd_eval(args) -> int:
    net, posterior = load_checkpoint(args.checkpoint)
    dataset = load_csv(args.data)
    k = args.top_k if args.top_k is not None else net.config.max_exits
    result = evaluate_dataset(net, posterior, dataset, k, n_bins=args.bins)
    record = result.metrics.to_record()
    record["top_k"] = k
    record["bins"] = args.bins
    record["theta_star"] = result.theta_star.tolist()
    write_json(record, args.out)
    parts = [f"{name}={value!r}" for name, value in result.metrics.to_record().items()
             if name != "task"]
    print(f"{result.metrics.task}: " + " ".join(parts))
    print(f"metrics: {args.out}")
    return 0


def _cmd_cost(args) -> int:
    query = parse_cost_config(_read_text(args.config), source=args.config)
    report = network_cost(query.arch, query.n_inputs, query.assignment)
    print(report.table())
    if args.out is not None:
        write_json(report.to_record(), args.out)
        print(f"cost record: {args.out}")
    return 0


def _cmd_enumerate(args) -> int:
    if args.n_max < 1 or args.depth < 1:
        raise ValueError("n_max and depth must both be at least 1")
    rows = []
    for n in range(1, args.n_max + 1):
        naive, reduced = search_space_sizes(n, args.depth)
        for k in range(1, args.depth + 1):
            rows.append({"n_inputs": n, "max_exits": k, "depth": args.depth,
                         "category": classify_config(n, k, args.depth),
                         "naive_size": naive, "reduced_size": reduced})
    width_naive = max(len(str(r["naive_size"])) for r in rows)
    print(f"{'N':>3} {'K':>3} {'D':>3} {'category':<8} {'naive':>{width_naive}} {'reduced':>7}")
    for r in rows:
        print(f"{r['n_inputs']:>3} {r['max_exits']:>3} {r['depth']:>3} "
              f"{r['category']:<8} {r['naive_size']:>{width_naive}} {r['reduced_size']:>7}")
    if args.out is not None:
        write_ndjson(rows, args.out)
        print(f"grid: {args.out}")
    return 0


def _cmd_gen_data(args) -> int:
    dataset = gen_data(args.kind, args.n, args.noise, args.seed)
    save_csv(dataset, args.out)
    print(f"wrote {len(dataset)} samples ({dataset.task}, {dataset.n_features} features) "
          f"to {args.out}")
    return 0


def _cmd_report(args) -> int:
    records = read_ndjson(args.log)
    for path in render_report(records, args.out_dir):
        print(f"wrote {path}")
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "cost": _cmd_cost,
    "enumerate": _cmd_enumerate,
    "gen-data": _cmd_gen_data,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
