"""Command-line front end: validate, run, sweep, gibbs, report.

Exit codes: 0 success, 1 validation failure, 2 I/O error, 3 internal
error. All data artifacts (JSON metadata, CSV series) are byte-identical
across reruns of the same config; wall-clock timings go to a separate
timings.json that is excluded from that guarantee.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__, engine, gibbs, metrics
from .config import (
    ExperimentConfig,
    apply_overrides,
    load_config,
    validate_experiment,
)

OUTPUT_ROOT_ENV = "NETANNEAL_OUT"


# ---------------------------------------------------------------------------
# Artifact IO


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_record(outdir: Path, record: engine.RunRecord) -> None:
    stem = outdir / f"run_{record.run_index:05d}"
    _dump_json(stem.with_suffix(".json"), record.to_json_payload())
    with open(stem.with_suffix(".csv"), "w", newline="") as handle:
        handle.write(f"# config_hash={record.config_hash}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(engine.record_csv_header(record))
        for row in engine.record_csv_rows(record):
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def load_record(json_path: Path) -> engine.RunRecord:
    """Rebuild a record from the JSON + CSV pair written by the run command."""
    payload = json.loads(Path(json_path).read_text())
    csv_path = Path(json_path).with_suffix(".csv")
    columns: dict[str, list[float]] = {}
    with open(csv_path) as handle:
        rows = [line for line in handle if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    data = list(reader)
    for i, name in enumerate(header):
        columns[name] = [float(r[i]) for r in data]
    xbar_cols = [name for name in header if name.startswith("xbar_")]
    xbar = np.stack([np.array(columns[c]) for c in xbar_cols], axis=1)
    return engine.RunRecord(
        config_hash=payload["config_hash"],
        master_seed=payload["master_seed"],
        run_index=payload["run_index"],
        mode=payload["mode"],
        n_agents=payload["n_agents"],
        dim=payload["dim"],
        steps=payload["steps"],
        stride=payload["stride"],
        tau=payload["tau"],
        times=np.array(columns["t"], dtype=np.int64),
        consensus_error=np.array(columns["consensus_error"]),
        breve_norm=np.array(columns["breve_norm"]),
        scaled_consensus_error=np.array(columns["scaled_consensus_error"]),
        u_of_mean=np.array(columns["u_of_mean"]),
        dist_to_minima=np.array(columns["dist_to_minima"]),
        xbar=xbar,
        final_t=payload["final_t"],
        final_state=np.array(payload["final_state"]),
        diverged=payload["diverged"],
        first_bad_t=payload["first_bad_t"],
        snapshots={int(k): np.array(v) for k, v in payload["snapshots"].items()},
        wall_time=0.0,
    )


def _run_experiment(cfg: ExperimentConfig, outdir: Path, parallelism: int | None = None) -> dict:
    run_config = cfg.run_config()
    n_runs = int(cfg.get("seeds", "n_runs"))
    if parallelism is None:
        parallelism = n_runs
    t0 = time.perf_counter()
    records = engine.run_batch(run_config, n_runs, parallelism=parallelism)
    elapsed = time.perf_counter() - t0

    outdir.mkdir(parents=True, exist_ok=True)
    runs_dir = outdir / "runs"
    runs_dir.mkdir(exist_ok=True)
    for record in records:
        _write_record(runs_dir, record)

    manifest = {
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "config": {s: dict(kv) for s, kv in sorted(cfg.sections.items())},
        "n_runs": n_runs,
        "master_seed": int(cfg.get("seeds", "master_seed")),
        "mode": cfg.get("run", "mode"),
        "runs": [r.run_index for r in records],
    }
    _dump_json(outdir / "manifest.json", manifest)
    (outdir / "config.ini").write_text(cfg.canonical_text())

    radius = float(cfg.get("metrics", "success_radius"))
    horizon = min(r.final_t for r in records) if records else 0
    with open(outdir / "aggregate.csv", "w", newline="") as handle:
        handle.write(f"# config_hash={cfg.config_hash()}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["run_index", "final_t", "diverged", "final_consensus_error",
             "final_dist_to_minima", "final_u_of_mean", "success"]
        )
        for r in records:
            success = int((not r.diverged) and r.dist_to_minima[-1] <= radius)
            writer.writerow(
                [r.run_index, r.final_t, int(r.diverged),
                 repr(float(r.consensus_error[-1])),
                 repr(float(r.dist_to_minima[-1])),
                 repr(float(r.u_of_mean[-1])), success]
            )
    _dump_json(
        outdir / "timings.json",
        {"total_wall_s": elapsed, "runs": {str(r.run_index): r.wall_time for r in records}},
    )
    return {"records": records, "manifest": manifest, "horizon": horizon}


# ---------------------------------------------------------------------------
# Subcommands


def cmd_validate(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    report = validate_experiment(cfg)
    width = max(len(c.name) for c in report.checks)
    for check in report.checks:
        print(f"{check.status.upper():4s}  {check.name:<{width}}  {check.detail}")
    if not report.ok:
        print(f"{len(report.hard_failures)} hard failure(s)")
        return 1
    print("configuration valid")
    return 0


def _resolve_outdir(arg_out: str | None, default_name: str) -> Path:
    if arg_out:
        return Path(arg_out)
    root = os.environ.get(OUTPUT_ROOT_ENV, ".")
    return Path(root) / default_name


def cmd_run(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    report = validate_experiment(cfg)
    if not report.ok:
        for check in report.hard_failures:
            print(f"FAIL  {check.name}  {check.detail}", file=sys.stderr)
        return 1
    outdir = _resolve_outdir(args.out, f"experiment_{cfg.config_hash()[:12]}")
    result = _run_experiment(cfg, outdir, args.parallelism)
    n_div = sum(r.diverged for r in result["records"])
    print(f"wrote {len(result['records'])} runs to {outdir} ({n_div} diverged)")
    return 0


def cmd_sweep(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    axes = []
    for spec in args.grid:
        target, _, values = spec.partition("=")
        if not values:
            raise ValueError(f"grid spec {spec!r} is not of the form section.key=v1,v2")
        axes.append([(target.strip(), v.strip()) for v in values.split(",")])
    outdir = _resolve_outdir(args.out, f"sweep_{cfg.config_hash()[:12]}")
    outdir.mkdir(parents=True, exist_ok=True)

    rows = []
    for cell in itertools.product(*axes):
        overrides = [f"{k}={v}" for k, v in cell]
        label = "__".join(f"{k.split('.', 1)[1]}={v}" for k, v in cell)
        cell_dir = outdir / label.replace("/", "_")
        cell_cfg = apply_overrides(cfg, overrides)
        row = {"cell": label, "status": "ok", "success_rate": "", "slope": ""}
        report = validate_experiment(cell_cfg)
        if not report.ok:
            row["status"] = "invalid: " + "; ".join(
                c.detail for c in report.hard_failures
            )
            rows.append(row)
            continue
        result = _run_experiment(cell_cfg, cell_dir)
        records = result["records"]
        radius = float(cell_cfg.get("metrics", "success_radius"))
        horizon = min(r.final_t for r in records)
        row["success_rate"] = repr(metrics.success_rate(records, radius, horizon))
        t_lo = float(cell_cfg.get("metrics", "slope_t_lo"))
        try:
            mean_err = np.mean([r.consensus_error for r in records], axis=0)
            row["slope"] = repr(
                metrics.consensus_decay_fit(records[0].times, mean_err, t_lo, horizon)
            )
        except ValueError:
            row["slope"] = ""
        rows.append(row)

    with open(outdir / "sweep.csv", "w", newline="") as handle:
        handle.write(f"# config_hash={cfg.config_hash()}\n")
        writer = csv.DictWriter(
            handle, fieldnames=["cell", "status", "success_rate", "slope"],
            lineterminator="\n",
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} cells to {outdir}")
    return 0


def cmd_gibbs(args) -> int:
    from .objectives import parse_objective

    obj = parse_objective(args.objective)
    epsilons = [float(v) for v in args.epsilons.split(",")]
    suite = metrics.make_f_suite(obj)
    bounds = None
    if args.bounds:
        lo, hi = (float(v) for v in args.bounds.split(","))
        bounds = (lo, hi)
    report = gibbs.weak_limit_check(obj, epsilons, suite, bounds=bounds, n_points=args.n_points)
    lines = ["epsilon,f_name,value"]
    for row in report.rows:
        lines.append(f"{row.epsilon!r},{row.f_name},{row.value!r}")
    seen = set()
    for row in report.rows:
        if row.f_name not in seen:
            seen.add(row.f_name)
            lines.append(f"0.0,{row.f_name},{row.limit_value!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    outdir = Path(args.dir)
    manifest = json.loads((outdir / "manifest.json").read_text())
    records = []
    for json_path in sorted((outdir / "runs").glob("run_*.json")):
        record = load_record(json_path)
        if record.config_hash != manifest["config_hash"]:
            print(
                f"record {json_path.name} has config hash {record.config_hash[:12]}, "
                f"manifest says {manifest['config_hash'][:12]}; refusing to mix configs",
                file=sys.stderr,
            )
            return 1
        records.append(record)
    if not records:
        print("no records found", file=sys.stderr)
        return 1

    from .config import ExperimentConfig

    cfg = ExperimentConfig(sections=manifest["config"])
    radius = float(cfg.get("metrics", "success_radius"))
    horizon = min(r.final_t for r in records)
    rate = metrics.success_rate(records, radius, horizon)

    t_lo = float(cfg.get("metrics", "slope_t_lo"))
    mean_err = np.mean([r.consensus_error for r in records], axis=0)
    try:
        slope = metrics.consensus_decay_fit(records[0].times, mean_err, t_lo, horizon)
    except ValueError:
        slope = None

    obj = cfg.objective()
    rows = []
    target_kind = None
    if obj.hessian is not None:
        try:
            target = gibbs.limit_measure(obj)
            target_kind = "atomic_limit"
            checkpoints = (
                [int(v) for v in args.checkpoints.split(",")]
                if args.checkpoints
                else [max(1, horizon // 10), horizon]
            )
            suite = metrics.make_f_suite(obj)
            rows = metrics.weak_convergence_stat(records, suite, checkpoints, target)
        except gibbs.DegenerateMinimum:
            pass

    with open(outdir / "report.csv", "w", newline="") as handle:
        handle.write(f"# config_hash={manifest['config_hash']}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["metric", "t", "estimate", "stderr", "target", "gap"])
        writer.writerow(["success_rate", horizon, repr(rate), "", "", ""])
        if slope is not None:
            writer.writerow(["consensus_decay_slope", horizon, repr(slope), "", "", ""])
        for row in rows:
            writer.writerow(
                [f"E[{row.f_name}({'xbar' if row.kind == 'mean' else 'x_agent'})]",
                 row.t, repr(row.estimate), repr(row.stderr), repr(row.target),
                 repr(row.gap)]
            )
    summary = {
        "config_hash": manifest["config_hash"],
        "n_records": len(records),
        "n_diverged": sum(r.diverged for r in records),
        "horizon": horizon,
        "success_radius": radius,
        "success_rate": rate,
        "consensus_decay_slope": slope,
        "weak_convergence_target": target_kind,
    }
    _dump_json(outdir / "summary.json", summary)
    print(f"success_rate = {rate:.3f} over {len(records)} runs; report in {outdir}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netanneal",
        description="Annealed consensus + gradient optimization experiments",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config against the model assumptions")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="execute a batch of runs and write artifacts")
    p.add_argument("config")
    p.add_argument("--out", "-o", default=None)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--parallelism", type=int, default=None,
                   help="runs advanced together per vectorized block (default: all)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid")
    p.add_argument("config")
    p.add_argument("--out", "-o", default=None)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--grid", action="append", required=True,
                   metavar="SECTION.KEY=V1,V2,...")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gibbs", help="tabulate the Gibbs measure over an epsilon sweep")
    p.add_argument("--objective", required=True)
    p.add_argument("--epsilons", required=True, help="comma-separated, decreasing")
    p.add_argument("--bounds", default=None, help="lo,hi shared by all axes")
    p.add_argument("--n-points", type=int, default=4001)
    p.add_argument("--out", "-o", default=None)
    p.set_defaults(func=cmd_gibbs)

    p = sub.add_parser("report", help="aggregate metrics from a run directory")
    p.add_argument("dir")
    p.add_argument("--checkpoints", default=None, help="comma-separated times")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (engine.ConfigError, ValueError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
