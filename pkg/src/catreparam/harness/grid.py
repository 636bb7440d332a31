"""Hyperparameter grid: run every (cell, seed), pick the validation-best cell."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import Cell, ExperimentConfig, grid_cells
from .train import RunRecord, objective_metric, prepare_data, train_cell

METRIC_COLUMNS = ("step", "split", "metric", "value")
TIMING_COLUMNS = ("step", "wall_clock", "steps_per_sec")


@dataclass
class Selection:
    cell: Optional[Cell]
    metric: str
    valid: float
    test: float
    per_seed_test: dict

    def to_dict(self) -> dict:
        return {
            "cell": None if self.cell is None else self.cell.label(),
            "metric": self.metric,
            "valid": self.valid,
            "test": self.test,
            "per_seed_test": {str(k): v for k, v in self.per_seed_test.items()},
        }


@dataclass
class GridResult:
    config: ExperimentConfig
    records: list
    selection: Selection


def select_best(records: list[RunRecord], metric: str) -> Selection:
    """Lowest mean final validation metric across seeds wins; failed or
    non-finite cells never win. The reported number is the winner's test
    metric, whatever the other cells scored on test."""
    by_cell: dict = {}
    for rec in records:
        by_cell.setdefault(rec.cell, []).append(rec)
    best, best_valid = None, math.inf
    for cell, recs in by_cell.items():
        if any(r.failed for r in recs):
            continue
        valid = float(np.mean([r.final("valid", metric) for r in recs]))
        if np.isfinite(valid) and valid < best_valid:
            best, best_valid = cell, valid
    if best is None:
        return Selection(None, metric, math.nan, math.nan, {})
    per_seed = {r.seed: r.final("test", metric) for r in by_cell[best]}
    return Selection(best, metric, best_valid, float(np.mean(list(per_seed.values()))), per_seed)


def _run(args):
    config, cell, seed = args
    return train_cell(config, cell, seed)


def run_grid(config: ExperimentConfig, workers: Optional[int] = None, splits=None) -> GridResult:
    """Train every grid cell for every seed.

    Results do not depend on ``workers``: each job seeds its own streams,
    and records come back in (cell, seed) order.
    """
    workers = config.workers if workers is None else workers
    jobs = [(config, cell, seed) for cell in grid_cells(config) for seed in config.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run, jobs))
    else:
        splits = prepare_data(config) if splits is None else splits
        records = [train_cell(c, cell, seed, splits) for c, cell, seed in jobs]
    return GridResult(config, records, select_best(records, objective_metric(config.task)))


def _cell_dir(root: Path, rec: RunRecord) -> Path:
    return root / "cells" / f"{rec.cell.label().replace('=', '').replace(',', '_')}_seed{rec.seed}"


def write_grid(result: GridResult, out) -> Path:
    """``config.json``, ``selection.json`` and per-cell ``metrics.csv`` /
    ``timings.csv`` / ``record.json`` under ``out``."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    result.config.save(root / "config.json")
    for rec in result.records:
        d = _cell_dir(root, rec)
        d.mkdir(parents=True, exist_ok=True)
        write_rows(d / "metrics.csv", METRIC_COLUMNS, rec.rows)
        write_rows(d / "timings.csv", TIMING_COLUMNS, rec.timings)
        (d / "record.json").write_text(json.dumps(rec.to_dict(), indent=2) + "\n")
    summary = {"config_hash": result.config.config_hash(), "selection": result.selection.to_dict()}
    (root / "selection.json").write_text(json.dumps(summary, indent=2) + "\n")
    return root


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_metrics(path) -> list[tuple]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != METRIC_COLUMNS:
            raise ValueError(f"unexpected metrics header {header}")
        return [(int(s), sp, m, float(v)) for s, sp, m, v in reader]
