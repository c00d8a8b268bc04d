"""Command-line entry point: ``run``, ``verify``, ``sweep``, ``plot-data``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 failed
verification check.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import io
from .config import apply_overrides, load_raw, parse_value, validate
from .engine import run_simulation
from .errors import ConfigError, ResMTLError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
WORKERS_ENV = "RESMTL_WORKERS"


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _report_config_error(exc: ConfigError):
    for field, msg in exc.problems:
        print(f"config error: {field}: {msg}", file=sys.stderr)


def execute_run(config, out_dir) -> dict:
    """Run one validated config and write manifest, config, metrics and models."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    io.write_config(config, out / "config.json")
    io.write_manifest(out / "manifest.json", config, started)
    t0 = time.perf_counter()
    result = run_simulation(config)
    io.write_metrics_csv(result, out / "metrics.csv")
    io.write_final_models(result, out / "final_models.csv")
    if result.weight_snapshots:
        io.write_weight_snapshots(result, result.neighbors, result.valid, out / "weights.csv")
    io.write_manifest(out / "manifest.json", config, started, _now(),
                      extra={"elapsed_s": round(time.perf_counter() - t0, 3), "errors": len(result.errors)})
    return {"result": result}


def cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"engine.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"engine.workers={args.workers}")
    try:
        config = validate(apply_overrides(load_raw(args.config), overrides))
    except ConfigError as exc:
        _report_config_error(exc)
        return EXIT_CONFIG
    try:
        execute_run(config, args.out)
    except ConfigError as exc:
        _report_config_error(exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any engine failure maps to exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {args.out}/metrics.csv")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suites

    try:
        results = run_suites(args.suites)
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_CONFIG
    width = max(len(f"{r.suite}/{r.name}") for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {f'{r.suite}/{r.name}':<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def _slug(text):
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", str(text))


def _run_cell(raw, param, value, seed, out_dir, tail):
    cell = Path(out_dir) / "cells" / _slug(f"{param}={value}") / f"seed={seed}"
    row = {"param": param, "value": value, "seed": seed}
    try:
        config = validate(apply_overrides(raw, {param: value, "engine.seed": seed}))
        result = execute_run(config, cell)["result"]
        losses = result.final_losses(tail)
        row.update(status="ok", normal_agents=len(result.normal), mean_final_loss=io.fmt(losses.mean()),
                   min_final_loss=io.fmt(losses.min()), max_final_loss=io.fmt(losses.max()))
    except Exception as exc:  # noqa: BLE001 - a failed cell is reported, the sweep continues
        row.update(status=f"failed: {exc}".replace("\n", " "), normal_agents="",
                   mean_final_loss="", min_final_loss="", max_final_loss="")
    return row


SUMMARY_COLUMNS = ("param", "value", "seed", "status", "normal_agents",
                   "mean_final_loss", "min_final_loss", "max_final_loss")


def cmd_sweep(args) -> int:
    if not args.values:
        print("config error: --values: at least one value is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        raw = load_raw(args.config)
        values = [parse_value(v) for v in args.values]
        # fail fast if the parameter or the first value is invalid
        validate(apply_overrides(raw, {args.param: values[0]}))
    except ConfigError as exc:
        _report_config_error(exc)
        return EXIT_CONFIG
    seeds = args.seeds or [0]
    cells = [(v, s) for v in values for s in seeds]
    workers = args.workers or _default_workers()
    jobs = [(raw, args.param, v, s, args.out, args.tail) for v, s in cells]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_cell, *zip(*jobs)))
    else:
        rows = [_run_cell(*job) for job in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} cells ok; summary at {out / 'summary.csv'}")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_plot_data(args) -> int:
    sources = {}
    for p in args.inputs:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.rglob("metrics.csv")):
                sources[str(f.parent.relative_to(p)) or "."] = f
        elif p.exists():
            sources[p.stem if len(args.inputs) > 1 else "."] = p
        else:
            print(f"config error: {p} does not exist", file=sys.stderr)
            return EXIT_CONFIG
    if not sources:
        print("config error: no metrics.csv found", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = list(io.aggregate_long(sources, args.metric))
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "rule", "round", "metric", "mean", "min", "max", "agents"])
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resmtl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one simulation")
    r.add_argument("config", help="TOML config or a manifest.json from a previous run")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-key override (repeatable)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run oracle checks")
    v.add_argument("suites", nargs="*", default=["all"], help="qp, lemma1, gradients, convexity, bound, all")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="cross product of parameter values and seeds")
    s.add_argument("config")
    s.add_argument("--param", required=True, help="dotted config key to vary")
    s.add_argument("--values", nargs="*", default=[])
    s.add_argument("--seeds", nargs="*", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, help=f"parallel cells (default ${WORKERS_ENV} or 1)")
    s.add_argument("--tail", type=int, help="recorded rounds averaged into the final loss (default 10%%)")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("plot-data", help="per-round mean/min/max long-format CSV")
    g.add_argument("inputs", nargs="+", help="metrics.csv files or run/sweep directories")
    g.add_argument("--metric", default="train_loss")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ResMTLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
