"""Command-line entry points: train-zoo, attack, sweep, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .models import make_blob_dataset


def _cmd_train_zoo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = make_blob_dataset(args.seed)
    zoo = harness.build_zoo(dataset, args.seed, epochs=args.epochs)
    harness.save_zoo(out, zoo)
    data_dir = Path(args.data) if args.data else out / "data"
    harness.save_dataset(data_dir, dataset)
    for model in zoo:
        print(f"{model.name}: train acc {model.train_accuracy:.3f}, "
              f"test acc {model.test_accuracy:.3f}")
    print(f"models -> {out}, dataset -> {data_dir}")
    return 0


def _cmd_attack(args) -> int:
    configs = harness.parse_config(args.config)
    zoo = harness.load_zoo(args.zoo)
    dataset = harness.load_dataset(args.data)
    table = harness.run_matrix(zoo, dataset, configs)
    info = harness.emit_report(table, args.out)
    print(f"{info['rows']} attacks -> {args.out}/results.csv "
          f"({info['summary_cells']} matrix cells)")
    for key, cell in table.summary().items():
        print(f"  {key}: median {cell['median']:.4f}  average {cell['average']:.4f}  "
              f"success {cell['success_rate']:.2f}")
    return 0


def _cmd_sweep(args) -> int:
    configs = harness.parse_config(args.config)
    if len(configs) != 1:
        raise SystemExit("sweep expects a config with exactly one method")
    zoo = harness.load_zoo(args.zoo)
    dataset = harness.load_dataset(args.data)
    names = [m.name for m in zoo]
    sub = args.sub or names[0]
    target = args.target or (names[1] if len(names) > 1 else names[0])
    values = [float(v) for v in args.values.split(",") if v.strip()]
    sweep = harness.run_sweep(zoo, dataset, configs[0], args.param, values, sub, target)
    harness.emit_report(harness.ResultTable(), args.out, sweeps=[sweep])
    for value, med, avg, rate in sweep.points:
        print(f"{args.param}={value:g}: median {med:.4f}  average {avg:.4f}  "
              f"success {rate:.2f}")
    return 0


def _cmd_report(args) -> int:
    in_dir = Path(args.in_dir)
    rows = harness.read_results_csv(in_dir / "results.csv")
    table = harness.ResultTable(rows=rows)
    summary = table.summary()
    with open(in_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key, cell in summary.items():
        print(f"{key}: median {cell['median']:.4f}  average {cell['average']:.4f}  "
              f"success {cell['success_rate']:.2f}  n {cell['count']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curlswhey",
                                     description="Black-box attack experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-zoo", help="generate the blob dataset and train the model zoo")
    p.add_argument("--out", required=True, help="output directory for model files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default=None, help="dataset directory (default OUT/data)")
    p.add_argument("--epochs", type=int, default=harness.ZOO_EPOCHS)
    p.set_defaults(func=_cmd_train_zoo)

    p = sub.add_parser("attack", help="run the substitute x target attack matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--zoo", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("sweep", help="sweep one parameter over a single matrix cell")
    p.add_argument("--param", required=True,
                   choices=["T", "s", "bs", "T0", "T1", "T2", "delta", "eps0"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--config", required=True)
    p.add_argument("--zoo", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sub", default=None)
    p.add_argument("--target", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="recompute summary.json from results.csv")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
