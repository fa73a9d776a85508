"""Command-line entry points.

Subcommands: run (one scenario, one controller, trace outputs), batch
(paired Monte Carlo with report files), compare (print the percent-change
table of an existing batch directory), export-scenario (scenario JSON for
replay). Exit codes: 0 success, 2 configuration error, 3 collision
detected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

from . import engine, harness, metrics
from .controllers import ccbf_config_from, fifo_config_from
from .engine import CCBF, FIFO
from .geometry import MERGE
from .scenario import (
    ConfigError,
    load_config,
    sample_scenario,
    scenario_to_json,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COLLISION = 3

_ROAD_NAMES = {0: "highway", 1: "merge"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mergesim",
        description="merge-coordination simulator: centralized barrier control vs FIFO",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario under one controller")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--controller", required=True, choices=[CCBF, FIFO])
    p_run.add_argument("--seed", type=int, default=None, help="scenario seed (default: base_seed)")
    p_run.add_argument("--homogeneous", action="store_true", help="fix every mass to the homogeneous value")
    p_run.add_argument("--out", required=True, help="output directory")

    p_batch = sub.add_parser("batch", help="paired Monte Carlo batch with reports")
    p_batch.add_argument("--config", required=True)
    p_batch.add_argument("--out", required=True)
    p_batch.add_argument("--runs", type=int, default=None, help="override config runs")
    p_batch.add_argument("--seed", type=int, default=None, help="override config base_seed")
    p_batch.add_argument("--homogeneous", action="store_true")
    p_batch.add_argument("--parallelism", type=int, default=None, help="worker processes (default: config, else MERGESIM_JOBS, else 1)")

    p_cmp = sub.add_parser("compare", help="print the summary table of a batch directory")
    p_cmp.add_argument("--out", required=True, help="directory written by batch")

    p_exp = sub.add_parser("export-scenario", help="write one sampled scenario as JSON")
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--homogeneous", action="store_true")
    p_exp.add_argument("--out", default=None, help="output file (default: stdout)")
    return parser


def _load(args) -> "MonteCarloConfig":
    config = load_config(args.config)
    overrides = {}
    if getattr(args, "runs", None) is not None:
        overrides["runs"] = args.runs
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
    if getattr(args, "homogeneous", False):
        overrides["homogeneous"] = True
    if getattr(args, "parallelism", None) is not None:
        overrides["parallelism"] = args.parallelism
    if overrides:
        config = dataclasses.replace(config, **overrides)
    from .scenario import validate_config

    validate_config(config)
    return config


def _cmd_run(args) -> int:
    config = _load(args)
    seed = args.seed if args.seed is not None else config.base_seed
    scenario = sample_scenario(config, seed)
    outcome = engine.run(
        scenario,
        args.controller,
        ccbf_cfg=ccbf_config_from(config),
        fifo_cfg=fifo_config_from(config),
    )
    os.makedirs(args.out, exist_ok=True)

    trace = outcome.trace
    lines = ["step,t,vid,road,s,v,u,a,in_cz"]
    for i in range(trace.step.shape[0]):
        lines.append(
            ",".join(
                [
                    str(int(trace.step[i])),
                    repr(float(trace.t[i])),
                    str(int(trace.vid[i])),
                    _ROAD_NAMES[int(trace.road[i])],
                    repr(float(trace.s[i])),
                    repr(float(trace.v[i])),
                    repr(float(trace.u[i])),
                    repr(float(trace.a[i])),
                    "1",
                ]
            )
        )
    harness._atomic_write(os.path.join(args.out, "trace.csv"), "\n".join(lines) + "\n")

    ev_lines = ["t,kind,vid,value"]
    for e in trace.events:
        ev_lines.append(f"{e.t!r},{e.kind},{e.vid},{e.value!r}")
    harness._atomic_write(os.path.join(args.out, "events.csv"), "\n".join(ev_lines) + "\n")

    diag_lines = ["step,n_agents,status,iterations,wall_time_s,active_rows,min_margin"]
    for d in trace.diagnostics:
        diag_lines.append(
            f"{d.step},{d.n_agents},{d.status},{d.iterations},{d.wall_time_s!r},{d.active_rows},{d.min_margin!r}"
        )
    harness._atomic_write(os.path.join(args.out, "diagnostics.csv"), "\n".join(diag_lines) + "\n")

    sysm = metrics.system_metrics(outcome, scenario)
    payload = {
        "controller": args.controller,
        "seed": seed,
        "completed": outcome.completed,
        "collision": outcome.collision,
        "h0_min": outcome.h0_min if math.isfinite(outcome.h0_min) else None,
        "steps": outcome.steps,
        "fallback_steps": outcome.fallback_steps,
        "system": dataclasses.asdict(sysm),
        "per_vehicle": [
            dataclasses.asdict(metrics.vehicle_metrics(trace, spec))
            for spec in scenario.vehicles
        ],
    }
    harness._atomic_write(
        os.path.join(args.out, "metrics.json"),
        json.dumps(payload, indent=1, sort_keys=True) + "\n",
    )

    print(
        f"{args.controller}: seed={seed} steps={outcome.steps} "
        f"completed={outcome.completed} collision={outcome.collision} "
        f"tel={sysm.total_loss_wh_per_km:.1f} Wh/km"
    )
    if outcome.collision:
        print("collision detected (h0_min < 0)", file=sys.stderr)
        return EXIT_COLLISION
    return EXIT_OK


def _cmd_batch(args) -> int:
    config = _load(args)
    result = harness.run_batch(config)
    paths = harness.write_reports(args.out, result)
    for p in paths:
        print(p)
    _print_table(result.report)
    if any(v > 0 for v in result.report.collisions.values()):
        print("collision detected in at least one run", file=sys.stderr)
        return EXIT_COLLISION
    return EXIT_OK


def _print_table(report) -> None:
    labels = {
        "pake": "PaKE [Wh/km]",
        "be": "Braking energy [Wh/km]",
        "tel": "Total energy loss [Wh/km]",
        "travel_time": "Travel time [s]",
        "avg_velocity": "Average velocity [m/s]",
    }
    print(
        f"{'metric':<26} {'fifo mean':>11} {'ccbf mean':>11} "
        f"{'mean %':>9} {'median %':>9}"
    )
    for name in harness.METRIC_NAMES:
        mean_f = report.means[name][FIFO]
        mean_c = report.means[name][CCBF]
        print(
            f"{labels[name]:<26} {mean_f:>11.2f} {mean_c:>11.2f} "
            f"{report.pct_change_mean[name]:>+9.1f} {report.pct_change_median[name]:>+9.1f}"
        )
    print(
        f"aggregated {report.n_aggregated}/{report.n_runs} runs; "
        f"incomplete {report.incomplete_runs}; collisions {report.collisions}"
    )


def _cmd_compare(args) -> int:
    runs_path = os.path.join(args.out, "runs.csv")
    summary_path = os.path.join(args.out, "summary.json")
    if not os.path.exists(runs_path):
        print(f"no runs.csv in {args.out}", file=sys.stderr)
        return EXIT_CONFIG
    records = harness.read_runs_csv(runs_path)
    bins = 30
    if os.path.exists(summary_path):
        with open(summary_path) as fh:
            bins = json.load(fh).get("config", {}).get("histogram_bins", 30)
    from .scenario import MonteCarloConfig

    report = harness.aggregate(records, MonteCarloConfig(histogram_bins=bins))
    _print_table(report)
    return EXIT_OK


def _cmd_export(args) -> int:
    config = _load(args)
    seed = args.seed if args.seed is not None else config.base_seed
    text = scenario_to_json(sample_scenario(config, seed))
    if args.out:
        harness._atomic_write(args.out, text + "\n")
        print(args.out)
    else:
        print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "batch":
            return _cmd_batch(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "export-scenario":
            return _cmd_export(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
