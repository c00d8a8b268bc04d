"""Serialization of run outputs: metrics CSV, final models, manifest, plot data."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import SimulationConfig
from .engine import CSV_COLUMNS, SimulationResult


def fmt(x) -> str:
    """Shortest round-trip float text; NaN (inapplicable) becomes empty."""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def write_metrics_csv(result: SimulationResult, path) -> None:
    cols = (result.train_loss, result.ema_loss, result.test_loss, result.accuracy, result.dist_to_opt)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r, rnd in enumerate(result.rounds):
            for j, k in enumerate(result.normal):
                w.writerow([int(rnd), int(k), result.rules[j], *(fmt(c[r, j]) for c in cols)])


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        return list(reader)


def write_final_models(result: SimulationResult, path) -> None:
    """One row per normal agent: ``agent,p0,...,p{d-1}``."""
    d = result.final_theta.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", *(f"p{i}" for i in range(d))])
        for k in result.normal:
            w.writerow([int(k), *(fmt(v) for v in result.final_theta[k])])


def read_final_models(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return {int(row[0]): np.array([float(v) for v in row[1:]]) for row in reader}


def write_weight_snapshots(result: SimulationResult, neighbors, valid, path) -> None:
    """Long format ``round,agent,neighbor,weight`` for every snapshot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "agent", "neighbor", "weight"])
        for rnd, weights in result.weight_snapshots:
            for j, k in enumerate(result.normal):
                for s in np.nonzero(valid[j])[0]:
                    w.writerow([rnd, int(k), int(neighbors[j, s]), fmt(weights[j, s])])


def write_config(config: SimulationConfig, path) -> None:
    Path(path).write_text(config.canonical_json())


def write_manifest(path, config: SimulationConfig, started: str, finished: str | None = None, extra=None) -> dict:
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.content_hash(),
        "seed": config.engine.seed,
        "started": started,
        "finished": finished,
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def aggregate_long(sources, metric: str = "train_loss"):
    """Per-round mean/min/max of ``metric`` across agents, grouped by source and rule.

    ``sources`` maps a label to a metrics CSV path.  Yields rows of
    ``(source, rule, round, metric, mean, min, max, agents)``.
    """
    if metric not in CSV_COLUMNS[3:]:
        raise ValueError(f"metric must be one of {CSV_COLUMNS[3:]}")
    for label, path in sources.items():
        groups = defaultdict(list)
        for row in read_metrics_csv(path):
            if row[metric] != "":
                groups[(row["rule"], int(row["round"]))].append(float(row[metric]))
        for (rule, rnd), vals in sorted(groups.items()):
            a = np.array(vals)
            yield label, rule, rnd, metric, fmt(a.mean()), fmt(a.min()), fmt(a.max()), len(vals)
