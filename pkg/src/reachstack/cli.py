"""Command line: ``brt compute``, ``sim run`` and ``report``.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 corrupt table,
5 missing table.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, to_dict
from .harness import SpawnError, run_episode
from .hji import SolverError, solve_brt
from .metrics import AggregateStats, MetricsRecord, aggregate, windowed_points
from .tablefile import TableFormatError, load_table, save_table

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CORRUPT, EXIT_MISSING = 0, 2, 3, 4, 5

CSV_COLUMNS = ["t", "ttc", "btn", "stn", "v_r", "abs_a_r", "intervened", "min_pair_value", "collision_event"]
TABLE_COLUMNS = ["frac_ttc_ge_3", "ttc_p10", "frac_btn_le_1", "btn_p90", "frac_stn_le_1", "stn_p90",
                 "mean_v", "mean_abs_a", "intervention_pct", "collision_count"]

log = logging.getLogger("reachstack")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.6f}"


def write_records_csv(path: Path, records: list[MetricsRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def _load_cfg(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"output.base_seed={args.seed}")
    if getattr(args, "episodes", None) is not None:
        overrides.append(f"output.episodes={args.episodes}")
    try:
        return load_config(args.config, overrides)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None


def _load_table(path: Path):
    if not path.exists():
        raise CliError(f"value table {path} not found (run `brt compute` first)", EXIT_MISSING)
    try:
        return load_table(path)
    except TableFormatError as exc:
        raise CliError(f"corrupt value table {path}: {exc}", EXIT_CORRUPT) from None


def cmd_brt_compute(args) -> int:
    cfg = _load_cfg(args)
    try:
        spec = cfg.grid.spec()
        solver_cfg = cfg.solver.solver_config()
    except ValueError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    out = Path(args.out) if args.out else cfg.table_path()
    log.info("grid %s nodes, shape %s, spacing %s", spec.size, spec.shape, np.round(spec.spacing, 4).tolist())
    t0 = time.perf_counter()
    try:
        result = solve_brt(cfg.dynamics_bounds, cfg.rss, spec, solver_cfg)
    except SolverError as exc:
        raise CliError(f"solver failure: {exc}", EXIT_SOLVER) from None
    save_table(result.table, out, cfg.solver.precision)
    data = result.table.data
    print(f"nodes={spec.size} steps={result.steps} dt={result.dt:.6g} "
          f"min={data.min():.6g} max={data.max():.6g} seconds={time.perf_counter() - t0:.1f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sim_run(args) -> int:
    cfg = _load_cfg(args)
    table = _load_table(cfg.table_path()) if cfg.needs_table else None
    out_dir = Path(cfg.output.dir) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    records, windows, seeds = [], [], []
    for i in range(cfg.output.episodes):
        seed = cfg.output.base_seed + i
        try:
            ep_cfg = cfg.episode_config(seed)
            result = run_episode(ep_cfg, table)
        except (SpawnError, ValueError) as exc:
            raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
        write_records_csv(out_dir / f"episode_{seed:04d}.csv", result.records)
        records.extend(result.records)
        windows.append(windowed_points(result.records))
        seeds.append(seed)
        log.info("%s seed %d: %s", cfg.name, seed, result.stats)
    stats = aggregate(records)
    payload = {"name": cfg.name, "seeds": seeds, "stats": stats.as_dict(), "windows": windows,
               "config": to_dict(cfg)}
    (out_dir / "aggregate.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"{cfg.name}: " + " ".join(f"{k}={_fmt(v)}" for k, v in stats.as_dict().items()))
    return EXIT_OK


def _read_aggregate(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
        AggregateStats.from_dict(data["stats"])
        name, windows = data["name"], data["windows"]
        if not isinstance(name, str) or not isinstance(windows, list):
            raise ValueError("bad name or windows")
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"schema mismatch in {path}: {exc}", EXIT_CONFIG) from None
    return data


def cmd_report(args) -> int:
    paths = sorted(set(p for pattern in args.inputs for p in glob.glob(pattern, recursive=True)))
    if not paths:
        raise CliError("no aggregate files matched", EXIT_CONFIG)
    rows = sorted((_read_aggregate(p) for p in paths), key=lambda d: d["name"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config"] + TABLE_COLUMNS)
        for d in rows:
            w.writerow([d["name"]] + [_fmt(d["stats"][c]) for c in TABLE_COLUMNS])
    width = max(len(d["name"]) for d in rows)
    lines = ["config".ljust(width) + "".join(c.rjust(18) for c in TABLE_COLUMNS)]
    for d in rows:
        lines.append(d["name"].ljust(width) + "".join(f"{d['stats'][c]:18.3f}" for c in TABLE_COLUMNS))
    (out / "table.txt").write_text("\n".join(lines) + "\n")

    with open(out / "plot_points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "episode", "window", "mean_v", "ttc_p1"])
        for d in rows:
            for e, episode in enumerate(d["windows"]):
                for k, (v, t) in enumerate(episode):
                    w.writerow([d["name"], e, k, _fmt(v), _fmt(t)])
    with open(out / "plot_covariance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "n", "mean_v", "mean_ttc_p1", "cov_vv", "cov_vt", "cov_tt"])
        for d in rows:
            pts = np.array([p for episode in d["windows"] for p in episode], dtype=float).reshape(-1, 2)
            cov = np.cov(pts.T) if len(pts) > 1 else np.zeros((2, 2))
            mean = pts.mean(axis=0) if len(pts) else np.full(2, np.nan)
            w.writerow([d["name"], len(pts), _fmt(mean[0]), _fmt(mean[1]),
                        _fmt(cov[0, 0]), _fmt(cov[0, 1]), _fmt(cov[1, 1])])
    print((out / "table.txt").read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reachstack", description=__doc__.splitlines()[0])
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true")
    verbosity.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=False):
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        if seeds:
            p.add_argument("--seed", type=int, help="base seed")
            p.add_argument("--episodes", type=int, help="episode count")

    brt = sub.add_parser("brt", help="value tables").add_subparsers(dest="brt_command", required=True)
    compute = brt.add_parser("compute", help="solve and write a value table")
    common(compute)
    compute.add_argument("--out", help="output file (default: table cache)")
    compute.set_defaults(func=cmd_brt_compute)

    sim = sub.add_parser("sim", help="closed-loop episodes").add_subparsers(dest="sim_command", required=True)
    run = sim.add_parser("run", help="run an episode batch")
    common(run, seeds=True)
    run.set_defaults(func=cmd_sim_run)

    report = sub.add_parser("report", help="summarize aggregate files")
    report.add_argument("--in", dest="inputs", nargs="+", required=True, help="aggregate JSON glob(s)")
    report.add_argument("--out", required=True, help="output directory")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
