"""Paired Monte Carlo batches and their reports.

Run r draws its scenario from seed base_seed + r and simulates it under
both controllers, so every comparison is paired on identical traffic.
Aggregates cover runs completed under both controllers; runs that hit the
horizon under either are excluded and counted separately. Percent changes
are reported for cross-run means and medians alike. Report files are
written atomically (temp file, then rename): runs.csv with one row per
(run, controller), summary.json with aggregates plus the config echo, and
one shared-edge histogram CSV per metric.
"""

from __future__ import annotations

import csv
import datetime
import json
import math
import os
import statistics
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__, engine, metrics
from .controllers import ccbf_config_from, fifo_config_from
from .engine import CCBF, FIFO
from .scenario import MonteCarloConfig, config_to_dict, sample_scenario

METRIC_NAMES = ("pake", "be", "tel", "travel_time", "avg_velocity")

RUNS_CSV_COLUMNS = (
    "run_id",
    "controller",
    "pake",
    "be",
    "tel",
    "travel_time",
    "avg_velocity",
    "h0_min",
    "completed",
)


@dataclass(frozen=True)
class RunRecord:
    run_id: int
    controller: str
    completed: bool
    collision: bool
    h0_min: float
    pake: float
    be: float
    tel: float
    travel_time: float
    avg_velocity: float
    fallback_steps: int
    min_pair_margin: float
    full_fleet_wall_s: tuple[float, ...]  # per-step wall times at the largest fleet

    def metric(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class AggregateReport:
    n_runs: int
    n_aggregated: int
    incomplete_runs: dict[str, int]
    collisions: dict[str, int]
    means: dict[str, dict[str, float]]
    medians: dict[str, dict[str, float]]
    pct_change_mean: dict[str, float]
    pct_change_median: dict[str, float]
    histograms: dict[str, dict] = field(default_factory=dict)
    h0_min_overall: dict[str, float] = field(default_factory=dict)


@dataclass
class BatchResult:
    config: MonteCarloConfig
    records: list[RunRecord]
    report: AggregateReport


def run_pair(config: MonteCarloConfig, run_index: int) -> list[RunRecord]:
    """Simulate one scenario under both controllers."""
    seed = config.base_seed + run_index
    scenario = sample_scenario(config, seed)
    ccbf_cfg = ccbf_config_from(config)
    fifo_cfg = fifo_config_from(config)
    records = []
    for controller in (CCBF, FIFO):
        outcome = engine.run(
            scenario, controller, ccbf_cfg=ccbf_cfg, fifo_cfg=fifo_cfg
        )
        sysm = metrics.system_metrics(outcome, scenario)
        full = 2 * config.vehicles_per_road
        walls = tuple(
            d.wall_time_s for d in outcome.trace.diagnostics if d.n_agents == full
        )
        records.append(
            RunRecord(
                run_id=run_index,
                controller=controller,
                completed=outcome.completed,
                collision=outcome.collision,
                h0_min=outcome.h0_min,
                pake=sysm.pake_wh_per_km,
                be=sysm.braking_wh_per_km,
                tel=sysm.total_loss_wh_per_km,
                travel_time=sysm.travel_time_s,
                avg_velocity=sysm.avg_velocity_mps,
                fallback_steps=outcome.fallback_steps,
                min_pair_margin=outcome.min_pair_margin,
                full_fleet_wall_s=walls if controller == CCBF else (),
            )
        )
    return records


def _worker(args) -> list[RunRecord]:
    config, run_index = args
    return run_pair(config, run_index)


def run_batch(config: MonteCarloConfig) -> BatchResult:
    jobs = config.effective_parallelism()
    indices = list(range(config.runs))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_worker, [(config, r) for r in indices], chunksize=4))
    else:
        chunks = [run_pair(config, r) for r in indices]
    records = [rec for chunk in chunks for rec in chunk]
    report = aggregate(records, config)
    return BatchResult(config=config, records=records, report=report)


def _percent_change(benchmark: float, candidate: float) -> float:
    if benchmark == 0.0:
        return math.nan
    return 100.0 * (candidate - benchmark) / benchmark


def aggregate(records: list[RunRecord], config: MonteCarloConfig) -> AggregateReport:
    """Cross-run statistics over runs completed under both controllers."""
    by_run: dict[int, dict[str, RunRecord]] = {}
    for rec in records:
        by_run.setdefault(rec.run_id, {})[rec.controller] = rec
    paired_ok = [
        run_id
        for run_id, pair in sorted(by_run.items())
        if len(pair) == 2 and all(r.completed for r in pair.values())
    ]
    incomplete = {
        ctrl: sum(1 for rec in records if rec.controller == ctrl and not rec.completed)
        for ctrl in (CCBF, FIFO)
    }
    collisions = {
        ctrl: sum(1 for rec in records if rec.controller == ctrl and rec.collision)
        for ctrl in (CCBF, FIFO)
    }
    h0_overall = {
        ctrl: min(
            (rec.h0_min for rec in records if rec.controller == ctrl),
            default=math.inf,
        )
        for ctrl in (CCBF, FIFO)
    }

    means: dict[str, dict[str, float]] = {}
    medians: dict[str, dict[str, float]] = {}
    pct_mean: dict[str, float] = {}
    pct_median: dict[str, float] = {}
    histograms: dict[str, dict] = {}
    for name in METRIC_NAMES:
        values = {
            ctrl: [by_run[r][ctrl].metric(name) for r in paired_ok]
            for ctrl in (CCBF, FIFO)
        }
        if paired_ok:
            means[name] = {c: float(np.mean(vals)) for c, vals in values.items()}
            medians[name] = {
                c: float(statistics.median(vals)) for c, vals in values.items()
            }
            pct_mean[name] = _percent_change(means[name][FIFO], means[name][CCBF])
            pct_median[name] = _percent_change(medians[name][FIFO], medians[name][CCBF])
            histograms[name] = _histogram(
                values[FIFO], values[CCBF], config.histogram_bins
            )
        else:
            means[name] = {CCBF: math.nan, FIFO: math.nan}
            medians[name] = {CCBF: math.nan, FIFO: math.nan}
            pct_mean[name] = math.nan
            pct_median[name] = math.nan
    return AggregateReport(
        n_runs=len(by_run),
        n_aggregated=len(paired_ok),
        incomplete_runs=incomplete,
        collisions=collisions,
        means=means,
        medians=medians,
        pct_change_mean=pct_mean,
        pct_change_median=pct_median,
        histograms=histograms,
        h0_min_overall=h0_overall,
    )


def _histogram(fifo_vals: list[float], ccbf_vals: list[float], bins: int) -> dict:
    """Counts on shared equal-width edges spanning the pooled range."""
    pooled = np.array(fifo_vals + ccbf_vals, dtype=float)
    lo = float(pooled.min())
    hi = float(pooled.max())
    if hi <= lo:
        lo -= 0.5
        hi += 0.5
    edges = np.linspace(lo, hi, bins + 1)
    fifo_counts, _ = np.histogram(np.asarray(fifo_vals), bins=edges)
    ccbf_counts, _ = np.histogram(np.asarray(ccbf_vals), bins=edges)
    return {
        "edges": edges.tolist(),
        "fifo": fifo_counts.tolist(),
        "ccbf": ccbf_counts.tolist(),
    }


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def write_reports(out_dir: str, batch: BatchResult, timestamp: Optional[str] = None) -> list[str]:
    """Write runs.csv, summary.json, and hist_<metric>.csv; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    rows = [",".join(RUNS_CSV_COLUMNS)]
    for rec in sorted(batch.records, key=lambda r: (r.run_id, r.controller)):
        rows.append(
            ",".join(
                [
                    str(rec.run_id),
                    rec.controller,
                    _fmt(rec.pake),
                    _fmt(rec.be),
                    _fmt(rec.tel),
                    _fmt(rec.travel_time),
                    _fmt(rec.avg_velocity),
                    _fmt(rec.h0_min),
                    "1" if rec.completed else "0",
                ]
            )
        )
    runs_path = os.path.join(out_dir, "runs.csv")
    _atomic_write(runs_path, "\n".join(rows) + "\n")
    paths.append(runs_path)

    report = batch.report
    summary = {
        "version": __version__,
        "timestamp": timestamp
        or datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": config_to_dict(batch.config),
        "counts": {
            "runs": report.n_runs,
            "aggregated": report.n_aggregated,
            "incomplete": report.incomplete_runs,
            "collisions": report.collisions,
        },
        "h0_min_overall": {
            k: (v if math.isfinite(v) else None) for k, v in report.h0_min_overall.items()
        },
        "aggregates": {
            name: {
                "fifo_mean": report.means[name][FIFO],
                "ccbf_mean": report.means[name][CCBF],
                "fifo_median": report.medians[name][FIFO],
                "ccbf_median": report.medians[name][CCBF],
                "pct_change_mean": report.pct_change_mean[name],
                "pct_change_median": report.pct_change_median[name],
            }
            for name in METRIC_NAMES
        },
        "diagnostics": {
            "fallback_steps": {
                ctrl: sum(
                    rec.fallback_steps
                    for rec in batch.records
                    if rec.controller == ctrl
                )
                for ctrl in (CCBF, FIFO)
            },
            "min_pair_margin": min(
                (
                    rec.min_pair_margin
                    for rec in batch.records
                    if math.isfinite(rec.min_pair_margin)
                ),
                default=None,
            ),
        },
    }
    summary_path = os.path.join(out_dir, "summary.json")
    _atomic_write(summary_path, json.dumps(summary, indent=1, sort_keys=True, allow_nan=True) + "\n")
    paths.append(summary_path)

    for name in METRIC_NAMES:
        hist = report.histograms.get(name)
        if not hist:
            continue
        lines = ["bin_left,bin_right,fifo,ccbf"]
        edges = hist["edges"]
        for b in range(len(hist["fifo"])):
            lines.append(
                ",".join(
                    [
                        repr(float(edges[b])),
                        repr(float(edges[b + 1])),
                        str(hist["fifo"][b]),
                        str(hist["ccbf"][b]),
                    ]
                )
            )
        hist_path = os.path.join(out_dir, f"hist_{name}.csv")
        _atomic_write(hist_path, "\n".join(lines) + "\n")
        paths.append(hist_path)
    return paths


def read_runs_csv(path: str) -> list[RunRecord]:
    """Rehydrate records from a runs.csv written by write_reports."""
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                RunRecord(
                    run_id=int(row["run_id"]),
                    controller=row["controller"],
                    completed=row["completed"] == "1",
                    collision=(row["h0_min"] != "" and float(row["h0_min"]) < 0.0),
                    h0_min=float(row["h0_min"]) if row["h0_min"] else math.nan,
                    pake=float(row["pake"]) if row["pake"] else math.nan,
                    be=float(row["be"]) if row["be"] else math.nan,
                    tel=float(row["tel"]) if row["tel"] else math.nan,
                    travel_time=float(row["travel_time"]) if row["travel_time"] else math.nan,
                    avg_velocity=float(row["avg_velocity"]) if row["avg_velocity"] else math.nan,
                    fallback_steps=0,
                    min_pair_margin=math.nan,
                    full_fleet_wall_s=(),
                )
            )
    return records
