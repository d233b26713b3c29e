"""Command line entry point: ``bmlmc run | verify | report``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import COST_MODES, MODES, emit_config, load_config
from .errors import BMLMCError
from .grid import Field, GridLevel, write_field_csv

LEVEL_COLUMNS = ("level", "M", "cost_ct", "cost_mem", "z2", "mean_v_norm", "mean_Y", "s2_Y", "s_history")
ROUND_COLUMNS = ("i", "action", "epsilon", "time_left", "err_sam", "err_num", "err_mse", "max_level")
BATCH_COLUMNS = ("round", "level", "s", "parallel", "batches", "requested", "executed", "dynamic_cells", "peak_cells")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    return str(value)


def format_table(rows: list[dict], columns) -> str:
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _write_csv(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) if isinstance(r.get(c), (list, tuple)) else r.get(c) for c in columns])


def write_run(report, cfg, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(emit_config(cfg), encoding="utf-8")
    with open(run_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, default=_json_default)
    _write_csv(run_dir / "levels.csv", report.levels, LEVEL_COLUMNS)
    _write_csv(run_dir / "rounds.csv", report.rounds, ROUND_COLUMNS)
    _write_csv(run_dir / "batches.csv", report.batches, BATCH_COLUMNS)
    if report.snapshot_mean is not None:
        top = report.level_states[-1]
        grid = GridLevel(top.level, cfg.dim, cfg.base_cells)
        for k, t in enumerate(report.snapshot_times):
            write_field_csv(run_dir / f"mean_t{t:g}.csv", Field(grid, "cell", report.snapshot_mean[k]), time=t)
            write_field_csv(run_dir / f"variance_t{t:g}.csv", Field(grid, "cell", report.snapshot_variance[k]), time=t)


def render_report(data: dict) -> str:
    out = [
        f"termination: {data['termination']}   consumed: {data['consumed']:.4g}   "
        f"mse: {data['err_mse']:.4g} (sam {data['err_sam']:.4g}, num {data['err_num']:.4g})",
        "",
        "rounds",
        format_table(data["rounds"], ROUND_COLUMNS),
        "",
        "levels",
        format_table(data["levels"], LEVEL_COLUMNS),
        "",
        "fits",
        format_table(
            [{"name": k, **v} for k, v in data["fits"].items()], ("name", "exponent", "intercept", "fitted")
        ),
    ]
    return "\n".join(out)


def cmd_run(args) -> int:
    from .driver import run

    cfg = load_config(args.config)
    overrides = {}
    if args.mode:
        overrides["mode"] = args.mode
    if args.cost:
        overrides["cost_mode"] = args.cost
    if args.seed is not None:
        overrides["run_seed"] = args.seed
    cfg = dataclasses.replace(cfg, **overrides).validate()
    report = run(cfg)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(args.output or cfg.resolved_output_dir()) / f"run-{stamp}-seed{cfg.run_seed}"
    write_run(report, cfg, run_dir)
    print(render_report(json.loads(json.dumps(report.to_dict(), default=_json_default))))
    print(f"\nartifacts written to {run_dir}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    rows, seconds = run_suite(args.suite)
    table = [{"check": r.name, "status": "PASS" if r.passed else "FAIL", "detail": r.detail} for r in rows]
    print(format_table(table, ("check", "status", "detail")))
    failed = sum(not r.passed for r in rows)
    print(f"\n{args.suite}: {len(rows) - failed}/{len(rows)} passed in {seconds:.2f}s")
    return 1 if failed else 0


def cmd_report(args) -> int:
    path = Path(args.run_dir) / "report.json"
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    print(render_report(data))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bmlmc", description="Budgeted multilevel Monte Carlo runs and checks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the budgeted estimator from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--cost", choices=COST_MODES)
    r.add_argument("--seed", type=int)
    r.add_argument("--output", help="output directory (overrides config and environment)")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("suite", choices=("moments", "scheduler", "pde", "driver", "covariance"))
    v.set_defaults(func=cmd_verify)
    rep = sub.add_parser("report", help="print the tables of a finished run")
    rep.add_argument("run_dir")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BMLMCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
