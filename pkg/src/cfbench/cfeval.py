"""Quality scoring of counterfactuals and per-cell aggregation.

Five metrics per counterfactual:

* validity      -- 1 iff the model predicts pass for the counterfactual.
* proximity     -- Gower distance between the instance and the counterfactual.
* sparsity      -- number of changed features.
* minimality    -- number of redundant changes: changed features that can be
  reverted one at a time without losing the pass prediction (0 means every
  change was necessary). This one-at-a-time test approximates subset
  minimality, which would be exponential.
* plausibility  -- Gower distance to the nearest training instance (0 means
  the counterfactual is a real training row); lower is better.

A cell is one (balancing, tuning, method) combination of the benchmark grid.
Aggregation reports median and quartiles per metric per cell, ready to plot
as error bars.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .cfgen import Counterfactual
from .distance import RangeTable, gower, gower_many

METRIC_NAMES = ("validity", "proximity", "sparsity", "minimality", "plausibility")


class Cell(NamedTuple):
    balancing: str
    tuning: str
    method: str

    def key(self) -> str:
        return f"{self.balancing}:{self.tuning}:{self.method}"


@dataclass(frozen=True)
class QualityRecord:
    request_id: int | str
    cell: Cell
    validity: int
    proximity: float
    sparsity: int
    minimality: int
    plausibility: float

    def __post_init__(self):
        if self.minimality > self.sparsity:
            raise ValueError("minimality cannot exceed sparsity")
        for name in ("proximity", "plausibility"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


class MetricStats(NamedTuple):
    median: float
    q1: float
    q3: float
    count: int


@dataclass(frozen=True)
class CellSummary:
    cell: Cell
    stats: dict[str, MetricStats]


def score(x, cf: Counterfactual, model, train, ranges: RangeTable,
          cell: Cell | None = None, request_id=None) -> QualityRecord:
    """Score one counterfactual against its source instance."""
    x = np.asarray(x, dtype=np.float64)
    values = cf.values
    if x.shape != values.shape:
        raise ValueError("dimension mismatch between instance and counterfactual")
    changed = np.flatnonzero(values != x)
    validity = 1 if model.predict_proba(values) < 0.5 else 0
    minimality = 0
    if changed.size:
        reverted = np.repeat(values[None, :], changed.size, axis=0)
        reverted[np.arange(changed.size), changed] = x[changed]
        minimality = int((model.predict_proba_batch(reverted) < 0.5).sum())
    if cell is None:
        cell = Cell(*cf.cell) if cf.cell is not None else Cell("-", "-", cf.method)
    if request_id is None:
        request_id = cf.source_request.request_id
    return QualityRecord(
        request_id=request_id,
        cell=cell,
        validity=validity,
        proximity=gower(x, values, ranges),
        sparsity=int(changed.size),
        minimality=minimality,
        plausibility=float(gower_many(train.features, values, ranges).min()),
    )


def aggregate(records) -> list[CellSummary]:
    """Group records by cell and summarize each metric with median and quartiles.

    Quartiles use linear interpolation between order statistics. Cells appear
    in first-occurrence order of the input.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    groups: dict[Cell, list[QualityRecord]] = {}
    for rec in records:
        groups.setdefault(rec.cell, []).append(rec)
    summaries = []
    for cell, recs in groups.items():
        stats = {}
        for name in METRIC_NAMES:
            vals = np.array([getattr(r, name) for r in recs], dtype=np.float64)
            q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
            stats[name] = MetricStats(float(med), float(q1), float(q3), vals.size)
        summaries.append(CellSummary(cell=cell, stats=stats))
    return summaries


def count_by_cell(cfs) -> dict[Cell, int]:
    """Exact counterfactual counts per cell, in first-occurrence order."""
    counts: dict[Cell, int] = {}
    for cf in cfs:
        if cf.cell is None:
            raise ValueError("counterfactual has no cell assigned")
        cell = Cell(*cf.cell)
        counts[cell] = counts.get(cell, 0) + 1
    return counts


QUALITY_HEADER = ("balancing", "tuning", "method", "request_id", *METRIC_NAMES)


def write_quality_records(path, records) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(QUALITY_HEADER)
        for r in records:
            writer.writerow([
                *r.cell, r.request_id, r.validity, repr(r.proximity),
                r.sparsity, r.minimality, repr(r.plausibility),
            ])


def read_quality_records(path) -> list[QualityRecord]:
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != QUALITY_HEADER:
            raise ValueError(f"{path}: unexpected quality-record header")
        for row in reader:
            records.append(QualityRecord(
                request_id=row[3],
                cell=Cell(row[0], row[1], row[2]),
                validity=int(row[4]),
                proximity=float(row[5]),
                sparsity=int(row[6]),
                minimality=int(row[7]),
                plausibility=float(row[8]),
            ))
    return records


def write_cell_summaries(path, summaries) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["balancing", "tuning", "method", "metric", "median", "q1", "q3", "count"])
        for summary in summaries:
            for name in METRIC_NAMES:
                s = summary.stats[name]
                writer.writerow([*summary.cell, name, repr(s.median), repr(s.q1), repr(s.q3), s.count])
