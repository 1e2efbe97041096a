"""Benchmark orchestration: run the (balancing x tuning x method) grid
end-to-end with deterministic seeding and resumable, atomically written
artifacts.

One run performs a single stratified split; the test side is shared untouched
by every cell. Per balancing strategy the training side is resampled (or kept
original with cost-sensitive class weights -- the five strategies are never
composed), a forest is fit per tuning mode (vanilla defaults or CV-tuned,
re-tuned per strategy), and each generation method explains the test rows the
model predicts as failing, in row order, capped at the configured instance
budget. All randomness derives from the master seed through `seed_for`, so any
cell is independently reproducible and two identical runs emit byte-identical
CSV outputs.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import balance, cfgen, cfeval, forest
from .cfeval import Cell
from .dataset import FRAME_COLUMNS, ID_COLUMN, LabeledDataset, ingest_oulad, load_csv, stratified_split
from .distance import RangeTable

logger = logging.getLogger(__name__)

ORIGINAL = "original"
UNDERSAMPLING = "undersampling"
OVERSAMPLING = "oversampling"
SMOTE = "smote"
COST_SENSITIVE = "cost_sensitive"
BALANCING_ALL = (ORIGINAL, UNDERSAMPLING, OVERSAMPLING, SMOTE, COST_SENSITIVE)

VANILLA = "vanilla"
TUNED = "tuned"
TUNING_ALL = (VANILLA, TUNED)

GLOBAL_CELL = Cell("-", "-", "-")


def seed_for(master_seed: int, cell, stage: str) -> int:
    """Derive a stage seed: sha256 over "master|balancing|tuning|method|stage",
    first 8 big-endian bytes reduced modulo 2**63."""
    b, t, m = cell
    key = f"{int(master_seed)}|{b}|{t}|{m}|{stage}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") % (1 << 63)


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one benchmark run.

    Defaults are desk scale: a 50-tree forest, a reduced 5-fold single-repeat
    tuning pass, and at most 50 explained instances per cell. `full_scale()`
    switches to the paper-faithful 500-tree / 10-fold x 3-repeat setup with no
    instance cap.
    """

    oulad_dir: Path | None = None
    frame_csv: Path | None = None
    course: str = "DDD"
    presentations: tuple[str, ...] = ("2013J", "2014J")
    test_fraction: float = 0.3
    master_seed: int = 0
    output_dir: Path = Path("out")
    balancing: tuple[str, ...] = BALANCING_ALL
    tuning: tuple[str, ...] = TUNING_ALL
    methods: tuple[str, ...] = cfgen.METHODS
    max_explained_instances: int | None = 50
    n_trees: int = 50
    tune_folds: int = 5
    tune_repeats: int = 1
    tune_objective: str = "auc"
    tune_mtry: tuple[int, ...] = (2, 6, 21, 41)
    tune_splitrule: tuple[str, ...] = forest.SPLITRULES
    tune_min_node_size: tuple[int, ...] = (1, 5, 10)
    whatif_k: int = cfgen.DEFAULT_WHATIF_K
    smote_k: int = balance.DEFAULT_SMOTE_K
    moc_population: int = 100
    moc_generations: int = 50
    moc_crossover_rate: float = 0.7
    moc_mutation_rate: float = 0.3

    def __post_init__(self):
        if (self.oulad_dir is None) == (self.frame_csv is None):
            raise ValueError("exactly one of oulad_dir / frame_csv must be set")
        for name, allowed in (("balancing", BALANCING_ALL), ("tuning", TUNING_ALL),
                              ("methods", cfgen.METHODS)):
            got = getattr(self, name)
            if not got:
                raise ValueError(f"{name} must be non-empty")
            unknown = [v for v in got if v not in allowed]
            if unknown:
                raise ValueError(f"unknown {name} value(s): {', '.join(unknown)}")
            if len(set(got)) != len(got):
                raise ValueError(f"duplicate {name} values")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.max_explained_instances is not None and self.max_explained_instances < 1:
            raise ValueError("max_explained_instances must be positive or unlimited")
        if self.tune_objective not in forest.OBJECTIVES:
            raise ValueError(f"tune_objective must be one of {forest.OBJECTIVES}")
        for name in ("n_trees", "tune_folds", "tune_repeats", "whatif_k", "smote_k",
                     "moc_population", "moc_generations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def full_scale(self) -> "ExperimentConfig":
        """Paper-faithful scale: 500 trees, 10-fold x 3-repeat tuning, no instance cap."""
        return replace(self, n_trees=forest.DEFAULT_N_TREES, tune_folds=10, tune_repeats=3,
                       max_explained_instances=None)

    def grid(self, p: int) -> list[forest.Hyperparams]:
        mtries = sorted({min(v, p) for v in self.tune_mtry})
        return [
            forest.Hyperparams(mtry=m, splitrule=rule, min_node_size=s, n_trees=self.n_trees)
            for m in mtries
            for rule in self.tune_splitrule
            for s in self.tune_min_node_size
        ]

    def moc_config(self, seed: int) -> cfgen.MocConfig:
        return cfgen.MocConfig(
            population=self.moc_population,
            generations=self.moc_generations,
            mutation_rate=self.moc_mutation_rate,
            crossover_rate=self.moc_crossover_rate,
            seed=seed,
        )

    def canonical(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


_SCHEMA = {
    "data": ("oulad_dir", "frame_csv", "course", "presentations"),
    "split": ("test_fraction",),
    "run": ("master_seed", "output_dir", "balancing", "tuning", "methods",
            "max_explained_instances"),
    "forest": ("n_trees",),
    "tune": ("folds", "repeats", "objective", "mtry", "splitrule", "min_node_size"),
    "whatif": ("k",),
    "smote": ("k",),
    "moc": ("population", "generations", "crossover_rate", "mutation_rate"),
}

_KEY_TO_FIELD = {
    ("data", "oulad_dir"): ("oulad_dir", Path),
    ("data", "frame_csv"): ("frame_csv", Path),
    ("data", "course"): ("course", str),
    ("data", "presentations"): ("presentations", "strs"),
    ("split", "test_fraction"): ("test_fraction", float),
    ("run", "master_seed"): ("master_seed", int),
    ("run", "output_dir"): ("output_dir", Path),
    ("run", "balancing"): ("balancing", "strs"),
    ("run", "tuning"): ("tuning", "strs"),
    ("run", "methods"): ("methods", "strs"),
    ("run", "max_explained_instances"): ("max_explained_instances", "cap"),
    ("forest", "n_trees"): ("n_trees", int),
    ("tune", "folds"): ("tune_folds", int),
    ("tune", "repeats"): ("tune_repeats", int),
    ("tune", "objective"): ("tune_objective", str),
    ("tune", "mtry"): ("tune_mtry", "ints"),
    ("tune", "splitrule"): ("tune_splitrule", "strs"),
    ("tune", "min_node_size"): ("tune_min_node_size", "ints"),
    ("whatif", "k"): ("whatif_k", int),
    ("smote", "k"): ("smote_k", int),
    ("moc", "population"): ("moc_population", int),
    ("moc", "generations"): ("moc_generations", int),
    ("moc", "crossover_rate"): ("moc_crossover_rate", float),
    ("moc", "mutation_rate"): ("moc_mutation_rate", float),
}


def parse_config(path) -> ExperimentConfig:
    """Parse the INI-style run description; unknown sections or keys are errors."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such config file: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    with path.open() as fh:
        parser.read_file(fh, source=str(path))
    kwargs = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"{path}: unknown key {key!r} in section [{section}]")
            name, kind = _KEY_TO_FIELD[(section, key)]
            kwargs[name] = _convert(raw.strip(), kind, f"{path}: [{section}] {key}")
    return ExperimentConfig(**kwargs)


def _convert(raw: str, kind, context: str):
    try:
        if kind == "strs":
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        if kind == "ints":
            return tuple(int(part) for part in raw.split(",") if part.strip())
        if kind == "cap":
            return None if raw.lower() in ("unlimited", "none") else int(raw)
        return kind(raw)
    except ValueError as exc:
        raise ValueError(f"{context}: cannot parse {raw!r}") from exc


@dataclass
class RunManifest:
    """Run record: per-cell status and artifact locations, for resume and audit."""

    config_hash: str
    blocks: dict = field(default_factory=dict)
    cells: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(
            {"config_hash": self.config_hash, "blocks": self.blocks,
             "cells": self.cells, "outputs": self.outputs},
            indent=2, sort_keys=True,
        ))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "RunManifest":
        raw = json.loads(Path(path).read_text())
        return cls(config_hash=raw["config_hash"], blocks=raw.get("blocks", {}),
                   cells=raw.get("cells", {}), outputs=raw.get("outputs", {}))

    def completed_cells(self) -> int:
        return sum(1 for c in self.cells.values() if c.get("status") == "done")


def load_frame(path) -> LabeledDataset:
    """Load an ingested frame CSV, keeping the id column when present."""
    with Path(path).open() as fh:
        header = fh.readline().strip().split(",")
    id_column = ID_COLUMN if ID_COLUMN in header else None
    return load_csv(path, FRAME_COLUMNS, id_column=id_column)


def load_data(config: ExperimentConfig) -> LabeledDataset:
    if config.frame_csv is not None:
        return load_frame(config.frame_csv)
    return ingest_oulad(config.oulad_dir, config.course, config.presentations)


def prepare_training(config: ExperimentConfig, train: LabeledDataset, balancing: str):
    """The (training set, class weights) pair for one balancing strategy.

    Resampling strategies train with unit weights; the cost-sensitive strategy
    keeps the original training set and weights errors by the imbalance ratio.
    """
    seed = seed_for(config.master_seed, Cell(balancing, "-", "-"), "balance")
    if balancing == ORIGINAL:
        return train, balance.ClassWeights.unit()
    if balancing == UNDERSAMPLING:
        return balance.random_undersample(train, seed), balance.ClassWeights.unit()
    if balancing == OVERSAMPLING:
        return balance.random_oversample(train, seed), balance.ClassWeights.unit()
    if balancing == SMOTE:
        return balance.smote(train, k=config.smote_k, seed=seed), balance.ClassWeights.unit()
    if balancing == COST_SENSITIVE:
        return train, balance.cost_weights(train)
    raise ValueError(f"unknown balancing strategy {balancing!r}")


def fit_block(config: ExperimentConfig, method_train: LabeledDataset,
              weights: balance.ClassWeights, balancing: str, tuning: str):
    """Fit (and optionally tune) the forest for one (balancing, tuning) block."""
    if tuning == VANILLA:
        hp = forest.vanilla_hyperparams(method_train.p, n_trees=config.n_trees)
    else:
        cv = forest.CvSpec(folds=config.tune_folds, repeats=config.tune_repeats,
                           objective=config.tune_objective,
                           seed=seed_for(config.master_seed, Cell(balancing, tuning, "-"), "tune"))
        hp = forest.tune(method_train, config.grid(method_train.p), cv, weights)
    fit_seed = seed_for(config.master_seed, Cell(balancing, tuning, "-"), "fit")
    model = forest.fit_forest(method_train, hp, weights, fit_seed)
    return model, hp


def generate_for_cell(config: ExperimentConfig, cell: Cell, model, method_train: LabeledDataset,
                      test: LabeledDataset, bounds: np.ndarray, fail_rows):
    """Generate and score counterfactuals for every capped fail-predicted test row.

    ``bounds`` are the original training-split feature ranges, shared by every
    cell so that distances stay comparable across balancing strategies.
    Returns (quality records, (request_id, counterfactual, valid) triples).
    """
    ranges = RangeTable.from_bounds(bounds)
    mask = np.ones(test.p, dtype=bool)
    records = []
    items = []
    for row in fail_rows:
        x = test.features[row]
        req = cfgen.CfRequest(x=x, mutable_mask=mask, bounds=bounds, request_id=int(row))
        if cell.method == cfgen.WHATIF:
            cfs = cfgen.whatif(req, model, method_train, k=config.whatif_k)
        elif cell.method == cfgen.NICE_SP:
            cfs = [cfgen.nice(req, model, method_train, cfgen.SPARSITY)]
        elif cell.method == cfgen.NICE_PR:
            cfs = [cfgen.nice(req, model, method_train, cfgen.PROXIMITY)]
        elif cell.method == cfgen.MOC:
            moc_seed = seed_for(config.master_seed, cell, f"moc:{row}")
            cfs = cfgen.moc(req, model, method_train, config.moc_config(moc_seed))
        else:
            raise ValueError(f"unknown method {cell.method!r}")
        for cf in cfs:
            record = cfeval.score(x, cf, model, method_train, ranges,
                                  cell=cell, request_id=int(row))
            records.append(record)
            items.append((int(row), cf, record.validity == 1))
    return records, items


def fail_predicted_rows(model, test: LabeledDataset, cap: int | None) -> list[int]:
    """Test rows the model predicts as failing, in row order, capped for desk scale."""
    scores = model.predict_proba_batch(test.features)
    rows = np.flatnonzero(scores >= 0.5).tolist()
    return rows if cap is None else rows[:cap]


def run(config: ExperimentConfig) -> RunManifest:
    """Execute the configured grid; see the module docstring for the contract.

    One failing cell is recorded in the manifest and does not abort the rest.
    Completed cells (manifest entry plus artifact file) are skipped on rerun.
    """
    out = Path(config.output_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    cfg_hash = config.config_hash()
    previous = None
    if manifest_path.exists():
        try:
            candidate = RunManifest.load(manifest_path)
            if candidate.config_hash == cfg_hash:
                previous = candidate
        except (ValueError, KeyError, json.JSONDecodeError):
            logger.warning("ignoring unreadable manifest at %s", manifest_path)
    manifest = RunManifest(config_hash=cfg_hash)

    data = load_data(config)
    split = stratified_split(data, config.test_fraction,
                             seed_for(config.master_seed, GLOBAL_CELL, "split"))
    bounds = np.array([[s.min_value, s.max_value] for s in split.train.specs])

    records_per_cell: dict[Cell, list[cfeval.QualityRecord]] = {}
    perf_rows = []
    for balancing in config.balancing:
        method_train = weights = None
        for tuning in config.tuning:
            block_key = f"{balancing}:{tuning}"
            model_path = out / "models" / f"{balancing}_{tuning}.forest"
            meta_path = out / "models" / f"{balancing}_{tuning}.json"
            try:
                if method_train is None:
                    method_train, weights = prepare_training(config, split.train, balancing)
                prev_block = (previous.blocks.get(block_key) if previous else None) or {}
                if prev_block.get("status") == "done" and model_path.exists() and meta_path.exists():
                    model = forest.load_model(model_path)
                    block_meta = json.loads(meta_path.read_text())
                    manifest.blocks[block_key] = {**prev_block, "status": "done", "resumed": True}
                else:
                    t0 = time.perf_counter()
                    model, hp = fit_block(config, method_train, weights, balancing, tuning)
                    metrics = forest.evaluate(model, split.test)
                    block_meta = {
                        "hyperparams": {"mtry": hp.mtry, "splitrule": hp.splitrule,
                                        "min_node_size": hp.min_node_size, "n_trees": hp.n_trees},
                        "metrics": {"accuracy": metrics.accuracy, "auc": metrics.auc,
                                    "f1": metrics.f1},
                    }
                    forest.save_model(model, model_path)
                    _atomic_json(meta_path, block_meta)
                    manifest.blocks[block_key] = {
                        "status": "done",
                        "seconds": round(time.perf_counter() - t0, 3),
                        "model_file": str(model_path),
                        **block_meta,
                    }
                perf_rows.append((balancing, tuning, block_meta["metrics"]))
                fail_rows = fail_predicted_rows(model, split.test, config.max_explained_instances)
                block_error = None
            except Exception as exc:  # noqa: BLE001 - a failing block must not kill the run
                logger.exception("block %s failed", block_key)
                manifest.blocks[block_key] = {"status": "failed", "error": str(exc)}
                block_error = exc
            for method in config.methods:
                cell = Cell(balancing, tuning, method)
                cell_key = cell.key()
                stem = f"{balancing}_{tuning}_{method}"
                cell_file = out / "cells" / f"{stem}.csv"
                cfs_file = out / "cells" / f"{stem}.cfs.csv"
                meta_file = out / "cells" / f"{stem}.meta.jsonl"
                if block_error is not None:
                    manifest.cells[cell_key] = {"status": "failed",
                                                "error": f"block failed: {block_error}"}
                    manifest.save(manifest_path)
                    continue
                prev_cell = (previous.cells.get(cell_key) if previous else None) or {}
                if prev_cell.get("status") == "done" and cell_file.exists() \
                        and cfs_file.exists() and meta_file.exists():
                    records = cfeval.read_quality_records(cell_file)
                    manifest.cells[cell_key] = {**prev_cell, "status": "done", "resumed": True}
                else:
                    t0 = time.perf_counter()
                    try:
                        records, items = generate_for_cell(config, cell, model, method_train,
                                                           split.test, bounds, fail_rows)
                    except Exception as exc:  # noqa: BLE001
                        logger.exception("cell %s failed", cell_key)
                        manifest.cells[cell_key] = {"status": "failed", "error": str(exc)}
                        manifest.save(manifest_path)
                        continue
                    _atomic_write(cell_file, lambda p: cfeval.write_quality_records(p, records))
                    names = split.test.feature_names
                    _atomic_write(cfs_file, lambda p: cfgen.write_counterfactuals(
                        p, _tmp_sibling(meta_file), names, items))
                    os.replace(_tmp_sibling(meta_file), meta_file)
                    manifest.cells[cell_key] = {
                        "status": "done",
                        "requests": len(fail_rows),
                        "count": len(records),
                        "records_file": str(cell_file),
                        "counterfactuals_file": str(cfs_file),
                        "meta_file": str(meta_file),
                        "seconds": round(time.perf_counter() - t0, 3),
                    }
                records_per_cell[cell] = records
                manifest.save(manifest_path)

    _write_outputs(config, out, perf_rows, records_per_cell, manifest)
    manifest.save(manifest_path)
    return manifest


def _atomic_json(path: Path, payload) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
    os.replace(tmp, path)


def _atomic_write(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _tmp_sibling(path: Path) -> Path:
    return path.with_name(path.name + ".tmp")


def _write_performance(path, perf_rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["balancing", "tuning", "accuracy", "auc", "f1"])
        for balancing, tuning, metrics in perf_rows:
            writer.writerow([balancing, tuning, repr(metrics["accuracy"]),
                             repr(metrics["auc"]), repr(metrics["f1"])])


def _write_counts(path, config, records_per_cell) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "tuning", *config.balancing])
        for method in config.methods:
            for tuning in config.tuning:
                row = [method, tuning]
                for balancing in config.balancing:
                    cell = Cell(balancing, tuning, method)
                    row.append(len(records_per_cell[cell]) if cell in records_per_cell else "")
                writer.writerow(row)


def _write_outputs(config, out: Path, perf_rows, records_per_cell, manifest: RunManifest) -> None:
    perf_path = out / "performance.csv"
    _atomic_write(perf_path, lambda p: _write_performance(p, perf_rows))
    counts_path = out / "counts.csv"
    _atomic_write(counts_path, lambda p: _write_counts(p, config, records_per_cell))

    all_records = []
    for balancing in config.balancing:
        for tuning in config.tuning:
            for method in config.methods:
                all_records.extend(records_per_cell.get(Cell(balancing, tuning, method), []))
    records_path = out / "quality_records.csv"
    _atomic_write(records_path, lambda p: cfeval.write_quality_records(p, all_records))
    summaries_path = out / "cell_summaries.csv"
    if all_records:
        summaries = cfeval.aggregate(all_records)
        _atomic_write(summaries_path, lambda p: cfeval.write_cell_summaries(p, summaries))
    manifest.outputs = {
        "performance": str(perf_path),
        "counts": str(counts_path),
        "quality_records": str(records_path),
        "cell_summaries": str(summaries_path) if all_records else "",
    }
