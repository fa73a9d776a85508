"""Powertrain-agnostic energy and flow metrics over a trace.

All energy metrics are distance-normalized to Wh/km (1 J/m equals 1000/3600
Wh/km) and use the realized speed series sampled at step starts, with
accelerations taken as forward differences of that series. For a vehicle of
mass m with road-load force F_rl(v) = A + B v + C v^2 over its in-zone
samples v_0 .. v_K covering distance s_N:

  positive-acceleration kinetic energy:
      sum_k m * max(0, v_{k+1}^2 - v_k^2) / s_N
  braking energy beyond road load, with a_k = (v_{k+1} - v_k) / ts:
      sum_k max(0, -m a_k - F_rl(v_k)) * v_k * ts / s_N
  total energy loss, F_brk = -min(0, a_k) * m:
      sum_k max(F_brk, F_rl(v_k)) * v_k * ts / s_N

Flow metrics: travel time is the latest merge-point crossing instant in the
run; average velocity pools every in-zone (step, vehicle) speed sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import RunOutcome, SimTrace, merge_crossing_times
from .scenario import Scenario, VehicleSpec

WH_PER_KM_PER_J_PER_M = 1000.0 / 3600.0


@dataclass(frozen=True)
class VehicleMetrics:
    vid: int
    pake_wh_per_km: float
    braking_wh_per_km: float
    total_loss_wh_per_km: float
    distance_m: float
    crossing_time_s: Optional[float]


@dataclass(frozen=True)
class SystemMetrics:
    """Fleet means of the energy metrics plus the run's flow numbers."""

    pake_wh_per_km: float
    braking_wh_per_km: float
    total_loss_wh_per_km: float
    travel_time_s: float
    avg_velocity_mps: float
    n_vehicles: int


def road_load_force(spec: VehicleSpec, v: float | np.ndarray):
    """Coast-down force A + B v + C v^2 in newtons."""
    return (
        spec.road_load_a_n
        + spec.road_load_b_n_per_mps * v
        + spec.road_load_c_n_per_mps2 * v * v
    )


def vehicle_metrics(trace: SimTrace, spec: VehicleSpec) -> VehicleMetrics:
    mask = trace.vid == spec.vid
    v = trace.v[mask]
    s = trace.s[mask]
    crossing = merge_crossing_times(trace).get(spec.vid)
    if v.shape[0] < 2:
        return VehicleMetrics(spec.vid, 0.0, 0.0, 0.0, 0.0, crossing)
    distance = float(s[-1] - s[0])
    if distance <= 0.0:
        return VehicleMetrics(spec.vid, 0.0, 0.0, 0.0, distance, crossing)
    ts = trace.ts
    v0 = v[:-1]
    v1 = v[1:]
    accel = (v1 - v0) / ts
    f_rl = road_load_force(spec, v0)

    pake_j = spec.mass_kg * float(np.maximum(0.0, v1 * v1 - v0 * v0).sum())
    brake_force = -np.minimum(0.0, accel) * spec.mass_kg
    be_j = float((np.maximum(0.0, brake_force - f_rl) * v0 * ts).sum())
    tel_j = float((np.maximum(brake_force, f_rl) * v0 * ts).sum())

    to_wh_km = WH_PER_KM_PER_J_PER_M / distance
    return VehicleMetrics(
        vid=spec.vid,
        pake_wh_per_km=pake_j * to_wh_km,
        braking_wh_per_km=be_j * to_wh_km,
        total_loss_wh_per_km=tel_j * to_wh_km,
        distance_m=distance,
        crossing_time_s=crossing,
    )


def pake(trace: SimTrace, spec: VehicleSpec) -> float:
    return vehicle_metrics(trace, spec).pake_wh_per_km


def braking_energy(trace: SimTrace, spec: VehicleSpec) -> float:
    return vehicle_metrics(trace, spec).braking_wh_per_km


def total_energy_loss(trace: SimTrace, spec: VehicleSpec) -> float:
    return vehicle_metrics(trace, spec).total_loss_wh_per_km


def flow_metrics(trace: SimTrace) -> tuple[float, float]:
    """(travel_time_s, avg_velocity_mps); travel time is NaN until every
    vehicle has crossed the merge point."""
    crossings = merge_crossing_times(trace)
    vids = np.unique(trace.vid) if trace.vid.size else np.zeros(0, dtype=np.int64)
    if vids.size and all(int(v) in crossings for v in vids):
        travel_time = max(crossings.values())
    else:
        travel_time = math.nan
    avg_velocity = float(trace.v.mean()) if trace.v.size else math.nan
    return travel_time, avg_velocity


def system_metrics(outcome: RunOutcome, scenario: Scenario) -> SystemMetrics:
    per_vehicle = [vehicle_metrics(outcome.trace, spec) for spec in scenario.vehicles]
    travel_time, avg_velocity = flow_metrics(outcome.trace)
    n = len(per_vehicle)
    return SystemMetrics(
        pake_wh_per_km=float(np.mean([m.pake_wh_per_km for m in per_vehicle])) if n else math.nan,
        braking_wh_per_km=float(np.mean([m.braking_wh_per_km for m in per_vehicle])) if n else math.nan,
        total_loss_wh_per_km=float(np.mean([m.total_loss_wh_per_km for m in per_vehicle])) if n else math.nan,
        travel_time_s=travel_time,
        avg_velocity_mps=avg_velocity,
        n_vehicles=n,
    )
