"""Command-line interface.

Subcommands: ``ingest`` (raw logs -> frame CSV), ``train`` (one cell's model
and test metrics), ``explain`` (one instance, one method, printed diff),
``run`` (the full benchmark grid), ``report`` (re-aggregate existing records).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, cfeval, cfgen, forest
from .cfeval import Cell
from .dataset import imbalance_ratio, ingest_oulad, stratified_split


def _parse_cell(text: str, want_method: bool) -> Cell:
    parts = text.split(":")
    if want_method and len(parts) != 3:
        raise SystemExit(f"--cell must look like balancing:tuning:method, got {text!r}")
    if not want_method and len(parts) not in (2, 3):
        raise SystemExit(f"--cell must look like balancing:tuning, got {text!r}")
    balancing, tuning = parts[0], parts[1]
    method = parts[2] if len(parts) == 3 else "-"
    if balancing not in bench.BALANCING_ALL:
        raise SystemExit(f"unknown balancing {balancing!r}; choose from {bench.BALANCING_ALL}")
    if tuning not in bench.TUNING_ALL:
        raise SystemExit(f"unknown tuning {tuning!r}; choose from {bench.TUNING_ALL}")
    if want_method and method not in cfgen.METHODS:
        raise SystemExit(f"unknown method {method!r}; choose from {cfgen.METHODS}")
    return Cell(balancing, tuning, method)


def _load_config(args) -> bench.ExperimentConfig:
    config = bench.parse_config(args.config)
    if getattr(args, "full", False):
        config = config.full_scale()
    if getattr(args, "seed", None) is not None:
        config = replace(config, master_seed=args.seed)
    if getattr(args, "max_instances", None) is not None:
        config = replace(config, max_explained_instances=args.max_instances)
    if getattr(args, "out", None) is not None:
        config = replace(config, output_dir=Path(args.out))
    return config


def cmd_ingest(args) -> int:
    presentations = [p.strip() for p in args.presentations.split(",") if p.strip()]
    data = ingest_oulad(args.raw_dir, args.course, presentations)
    data.save_csv(args.out)
    counts = data.class_counts()
    print(f"wrote {args.out}: {data.n} students, {data.p} weekly features")
    print(f"labels: {counts}; imbalance ratio {imbalance_ratio(data):.4f}")
    return 0


def _prepare_block(config, cell):
    data = bench.load_data(config)
    split = stratified_split(
        data, config.test_fraction, bench.seed_for(config.master_seed, bench.GLOBAL_CELL, "split")
    )
    method_train, weights = bench.prepare_training(config, split.train, cell.balancing)
    model, hp = bench.fit_block(config, method_train, weights, cell.balancing, cell.tuning)
    return split, method_train, model, hp


def cmd_train(args) -> int:
    config = _load_config(args)
    cell = _parse_cell(args.cell, want_method=False)
    split, method_train, model, hp = _prepare_block(config, cell)
    metrics = forest.evaluate(model, split.test)
    out = Path(config.output_dir) / "models"
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / f"{cell.balancing}_{cell.tuning}.forest"
    forest.save_model(model, model_path)
    print(f"cell {cell.balancing}:{cell.tuning}")
    print(f"hyperparams: mtry={hp.mtry} splitrule={hp.splitrule} "
          f"min_node_size={hp.min_node_size} n_trees={hp.n_trees}")
    print(f"accuracy {metrics.accuracy:.4f}  auc {metrics.auc:.4f}  f1 {metrics.f1:.4f}")
    print(f"model saved to {model_path}")
    return 0


def cmd_explain(args) -> int:
    config = _load_config(args)
    cell = _parse_cell(args.cell, want_method=True)
    split, method_train, model, _ = _prepare_block(config, cell)
    fail_rows = bench.fail_predicted_rows(model, split.test, config.max_explained_instances)
    if not fail_rows:
        print("no test instance is predicted as failing in this cell")
        return 1
    row = args.index if args.index is not None else fail_rows[0]
    if row not in fail_rows:
        raise SystemExit(f"test row {row} is not among the fail-predicted rows {fail_rows[:10]}...")
    bounds = np.array([[s.min_value, s.max_value] for s in split.train.specs])
    records, items = bench.generate_for_cell(config, cell, model, method_train,
                                             split.test, bounds, [row])
    if not items:
        print(f"request {row}: no valid counterfactual found")
        return 1
    x = split.test.features[row]
    cf = items[0][1]  # most proximal counterfactual first
    names = split.test.feature_names
    print(f"cell {cell.key()}  test row {row}")
    print(f"p(fail): {model.predict_proba(x):.4f} -> {model.predict_proba(cf.values):.4f}")
    changed = [j for j in range(x.size) if cf.values[j] != x[j]]
    print(f"changed {len(changed)} of {x.size} features:")
    for j in changed:
        print(f"  {names[j]}: {x[j]:g} -> {cf.values[j]:g}")
    rec = records[0]
    print(f"metrics: proximity {rec.proximity:.4f}  sparsity {rec.sparsity}  "
          f"minimality {rec.minimality}  plausibility {rec.plausibility:.4f}")
    return 0


def cmd_run(args) -> int:
    config = _load_config(args)
    if args.cell is not None:
        cell = _parse_cell(args.cell, want_method=True)
        config = replace(config, balancing=(cell.balancing,), tuning=(cell.tuning,),
                         methods=(cell.method,))
    manifest = bench.run(config)
    done = manifest.completed_cells()
    total = len(manifest.cells)
    print(f"run complete: {done}/{total} cells done; outputs in {config.output_dir}")
    failed = [k for k, v in manifest.cells.items() if v.get("status") != "done"]
    for key in failed:
        print(f"  FAILED {key}: {manifest.cells[key].get('error', 'unknown error')}")
    return 0 if not failed else 1


def cmd_report(args) -> int:
    out = Path(args.out)
    records = cfeval.read_quality_records(out / "quality_records.csv")
    summaries = cfeval.aggregate(records)
    cfeval.write_cell_summaries(out / "cell_summaries.csv", summaries)
    print(f"re-aggregated {len(records)} records into {len(summaries)} cell summaries")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfbench",
        description="Benchmark counterfactual explanation methods over balancing strategies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="aggregate raw course logs into the weekly frame CSV")
    p.add_argument("--raw-dir", required=True, help="directory with the raw course CSV files")
    p.add_argument("--course", default="DDD")
    p.add_argument("--presentations", default="2013J,2014J", help="comma-separated list")
    p.add_argument("--out", required=True, help="output frame CSV path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train and evaluate one (balancing, tuning) cell")
    p.add_argument("--config", required=True)
    p.add_argument("--cell", required=True, help="balancing:tuning")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--full", action="store_true", help="paper-scale forest and tuning")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="explain one fail-predicted test instance")
    p.add_argument("--config", required=True)
    p.add_argument("--cell", required=True, help="balancing:tuning:method")
    p.add_argument("--index", type=int, help="test row to explain (default: first fail-predicted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-instances", type=int)
    p.add_argument("--full", action="store_true")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("run", help="run the configured benchmark grid")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--max-instances", type=int, help="override the per-cell instance cap")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--cell", help="restrict the grid to one balancing:tuning:method cell")
    p.add_argument("--full", action="store_true", help="paper-scale forest, tuning, and caps")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-aggregate quality records in an output directory")
    p.add_argument("--out", required=True, help="output directory of a previous run")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
