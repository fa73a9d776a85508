"""Scenario sampling, the vehicle catalog, and the experiment config file.

A scenario fixes everything random about one simulation run: per-road
injection rates, injection times, desired speeds, and vehicle bodies
(mass, footprint radius, road-load coefficients). Bodies interpolate
between two catalog anchors, a light compact car and a heavy electric
pickup at four times its mass; the anchors carry dynamometer coefficients
in their native units (lbf, lbf/mph, lbf/mph^2) and are converted to SI
here. Scenarios serialize to JSON and round-trip exactly, so a run can be
replayed byte-for-byte from its file.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import HIGHWAY, MERGE, MergeLayout

LBS_TO_KG = 0.453592
NEWTON_PER_LBF = 4.44822
MPS_PER_MPH = 0.44704

# radius endpoints assigned to the catalog anchor masses
RADIUS_LIGHT_M = 2.0
RADIUS_HEAVY_M = 4.0


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


def lbs_to_kg(lbs: float) -> float:
    return lbs * LBS_TO_KG


@dataclass(frozen=True)
class VehicleCatalogEntry:
    """Anchor body with dynamometer coefficients in native units."""

    name: str
    mass_lbs: float
    a_lbf: float
    b_lbf_per_mph: float
    c_lbf_per_mph2: float

    @property
    def mass_kg(self) -> float:
        return lbs_to_kg(self.mass_lbs)

    def coefficients_si(self) -> tuple[float, float, float]:
        """Road-load coefficients as (N, N/(m/s), N/(m/s)^2)."""
        a = self.a_lbf * NEWTON_PER_LBF
        b = self.b_lbf_per_mph * NEWTON_PER_LBF / MPS_PER_MPH
        c = self.c_lbf_per_mph2 * NEWTON_PER_LBF / MPS_PER_MPH**2
        return a, b, c


DEFAULT_CATALOG = (
    VehicleCatalogEntry("light", 2375.0, 19.9, 0.2256, 0.01655),
    VehicleCatalogEntry("heavy", 9500.0, 39.3, 0.391, 0.0274),
)


@dataclass(frozen=True)
class VehicleSpec:
    """One vehicle of a scenario; SI units throughout."""

    vid: int
    road: str
    injection_time_s: float
    desired_speed_mps: float
    mass_kg: float
    radius_m: float
    road_load_a_n: float
    road_load_b_n_per_mps: float
    road_load_c_n_per_mps2: float


@dataclass(frozen=True)
class Scenario:
    seed: int
    layout: MergeLayout
    ts: float
    horizon_max_s: float
    highway_rate_veh_per_hr: float
    merge_rate_veh_per_hr: float
    vehicles: tuple[VehicleSpec, ...]
    # injections are deferred while an opposite-road vehicle's predicted
    # merge-point arrival falls within this window of the entrant's
    entry_eta_window_s: float = 1.5


@dataclass(frozen=True)
class MonteCarloConfig:
    """Everything a batch needs; mirrors the JSON config file one to one."""

    runs: int = 200
    base_seed: int = 20260822
    vehicles_per_road: int = 10
    rate_low_veh_per_hr: float = 1100.0
    rate_high_veh_per_hr: float = 1200.0
    speed_low_mps: float = 20.0
    speed_high_mps: float = 25.0
    mass_low_lbs: float = 2375.0
    mass_high_lbs: float = 9500.0
    merge_angle_deg: float = 30.0
    cz_before_m: float = 200.0
    cz_after_m: float = 350.0
    ts: float = 0.1
    horizon_max_s: float = 120.0
    beta: float = 0.1
    ccbf_bandwidth: float = 2.5
    fifo_bandwidth1: float = 0.3
    fifo_bandwidth2: float = 2.0
    cross_eta_spacing_s: float = 1.0
    entry_eta_window_s: float = 1.5
    follow_gain: float = 0.5
    lane_margin_m: float = 2.0
    cross_yield_band_s: float = 0.5
    cross_release_mps_per_s: float = 30.0
    cross_sprint_mps: float = 2.0
    rate_penalty_per_kg: Optional[float] = None
    accel_min_mps2: float = -6.0
    accel_max_mps2: float = 5.0
    speed_gain: float = 0.5
    slack_weight: float = 1e6
    homogeneous: bool = False
    homogeneous_mass_lbs: float = 4500.0
    histogram_bins: int = 30
    parallelism: Optional[int] = None
    catalog: tuple[VehicleCatalogEntry, VehicleCatalogEntry] = DEFAULT_CATALOG

    def layout(self) -> MergeLayout:
        return MergeLayout(
            merge_angle_rad=math.radians(self.merge_angle_deg),
            cz_before_m=self.cz_before_m,
            cz_after_m=self.cz_after_m,
        )

    def rate_penalty(self) -> float:
        """Weight on squared command changes per kilogram of vehicle mass.

        Defaults to the reciprocal of the light anchor mass, so the lightest
        body contributes a unit weight."""
        if self.rate_penalty_per_kg is not None:
            return self.rate_penalty_per_kg
        return 1.0 / self.catalog[0].mass_kg

    def effective_parallelism(self) -> int:
        if self.parallelism is not None:
            return max(1, self.parallelism)
        env = os.environ.get("MERGESIM_JOBS")
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                pass
        return 1


def spec_from_mass(
    mass_kg: float,
    catalog: tuple[VehicleCatalogEntry, VehicleCatalogEntry] = DEFAULT_CATALOG,
) -> tuple[float, float, float, float]:
    """Radius and SI road-load coefficients for a mass between the anchors.

    Linear in mass: the light anchor maps to radius 2 m, the heavy one to
    4 m, coefficients interpolate between the converted anchor values.
    """
    light, heavy = catalog
    lo, hi = light.mass_kg, heavy.mass_kg
    if not lo < hi:
        raise ConfigError("catalog: light anchor mass must be below heavy anchor mass")
    if mass_kg < lo - 1e-9 or mass_kg > hi + 1e-9:
        raise ConfigError(
            f"mass {mass_kg:.1f} kg outside catalog range [{lo:.1f}, {hi:.1f}]"
        )
    f = (mass_kg - lo) / (hi - lo)
    radius = RADIUS_LIGHT_M + (RADIUS_HEAVY_M - RADIUS_LIGHT_M) * f
    a0, b0, c0 = light.coefficients_si()
    a1, b1, c1 = heavy.coefficients_si()
    return (
        radius,
        a0 + (a1 - a0) * f,
        b0 + (b1 - b0) * f,
        c0 + (c1 - c0) * f,
    )


# entry spacing floor: distance a follower covers before its own braking
# response catches up with a decelerating leader it was told nothing about
ENTRY_TIME_HEADWAY_S = 0.4


def entry_gap_required_m(
    beta: float,
    bandwidth: float,
    r_new: float,
    r_pred: float,
    v_new: float,
    v_pred: float,
) -> float:
    # the entry gap must clear the inflated disks, absorb the speed
    # differential within the constraint bandwidth, and leave reaction
    # room for leader braking the follower only observes one step late
    radius = (1.0 + beta) * (r_new + r_pred)
    q = max(0.0, v_new - v_pred) / bandwidth
    return max(q + math.hypot(q, radius), radius + ENTRY_TIME_HEADWAY_S * v_new)


def _min_headway_s(
    beta: float,
    bandwidth: float,
    r_new: float,
    r_pred: float,
    v_new: float,
    v_pred: float,
) -> float:
    # predecessor modeled at its desired speed
    gap = entry_gap_required_m(beta, bandwidth, r_new, r_pred, v_new, v_pred)
    return gap / v_pred


def _grid_ceil(t: float, ts: float) -> float:
    return math.ceil(t / ts - 1e-9) * ts


def _schedule_injections(
    draws: dict[str, tuple[list[float], list[float], list[float]]],
    beta: float,
    bandwidth: float,
    ts: float,
    cz_before_m: float,
    eta_spacing_s: float,
) -> dict[str, list[float]]:
    """Forward-only shifts to a fixpoint of three floors: the step grid,
    the same-road entry headway, and a minimum spacing between opposite
    roads' predicted merge-point arrivals.

    Vehicles cruise at their desired speed until pair constraints first
    activate, so arrival order and spacing at the merge point are decided
    at sampling time to good accuracy. Spacing those arrivals up front
    preempts the degenerate symmetric corner contests that either
    controller can only resolve by deep mutual slowdown. Keys are road
    names mapping to (raw times, radii, desired speeds); returns the
    shifted times, each on the step grid."""
    t = {road: [_grid_ceil(x, ts) for x in data[0]] for road, data in draws.items()}
    for _ in range(100_000):
        changed = False
        for road, (_, radii, speeds) in draws.items():
            seq = t[road]
            for k in range(1, len(seq)):
                gap = _min_headway_s(
                    beta, bandwidth, radii[k], radii[k - 1], speeds[k], speeds[k - 1]
                )
                lo = _grid_ceil(seq[k - 1] + gap, ts)
                if lo > seq[k] + 1e-9:
                    seq[k] = lo
                    changed = True
        if eta_spacing_s > 0.0:
            entries = []
            for road, (_, radii, speeds) in draws.items():
                eta_prev = -math.inf
                for k, tk in enumerate(t[road]):
                    eta = tk + cz_before_m / speeds[k]
                    if k:
                        # a follower that would outrun its predecessor
                        # arrives behind it instead, disk gap in trail
                        trail = (1.0 + beta) * (radii[k] + radii[k - 1])
                        eta = max(eta, eta_prev + trail / speeds[k - 1])
                    eta_prev = eta
                    entries.append((eta, road, k))
            entries.sort()
            last_eta: dict[str, float] = {}
            for eta, road, k in entries:
                floor = max(
                    (e + eta_spacing_s for r, e in last_eta.items() if r != road),
                    default=-math.inf,
                )
                if eta < floor - 1e-9:
                    t[road][k] = _grid_ceil(t[road][k] + (floor - eta), ts)
                    changed = True
                    eta = floor
                last_eta[road] = max(eta, last_eta.get(road, -math.inf))
        if not changed:
            return t
    raise AssertionError("injection scheduling did not reach a fixpoint")


def sample_scenario(config: MonteCarloConfig, seed: int) -> Scenario:
    """Draw one scenario; identical (config, seed) gives identical bytes.

    Draw order is part of the artifact contract: highway rate, merge rate,
    then per road and per vehicle the inter-arrival gap, mass, and desired
    speed.
    """
    rng = np.random.default_rng(seed)
    rate_hw = rng.uniform(config.rate_low_veh_per_hr, config.rate_high_veh_per_hr)
    rate_mg = rng.uniform(config.rate_low_veh_per_hr, config.rate_high_veh_per_hr)

    draws: dict[str, tuple[list[float], list[float], list[float]]] = {}
    per_road: dict[str, dict[str, list[float]]] = {}
    for road, rate in ((HIGHWAY, rate_hw), (MERGE, rate_mg)):
        times: list[float] = []
        masses: list[float] = []
        speeds: list[float] = []
        radii: list[float] = []
        t = 0.0
        for _ in range(config.vehicles_per_road):
            t += rng.exponential(3600.0 / rate)
            mass_lbs = rng.uniform(config.mass_low_lbs, config.mass_high_lbs)
            speed = rng.uniform(config.speed_low_mps, config.speed_high_mps)
            times.append(t)
            masses.append(lbs_to_kg(mass_lbs))
            speeds.append(speed)
            radii.append(spec_from_mass(masses[-1], config.catalog)[0])
        draws[road] = (times, radii, speeds)
        per_road[road] = {"masses": masses, "speeds": speeds}
    scheduled = _schedule_injections(
        draws,
        config.beta,
        min(config.ccbf_bandwidth, config.fifo_bandwidth1),
        config.ts,
        config.cz_before_m,
        config.cross_eta_spacing_s,
    )
    for road in (HIGHWAY, MERGE):
        per_road[road]["times"] = scheduled[road]

    pooled = []
    for road in (HIGHWAY, MERGE):
        data = per_road[road]
        for k in range(config.vehicles_per_road):
            pooled.append((data["times"][k], road, data["masses"][k], data["speeds"][k]))
    pooled.sort(key=lambda rec: (rec[0], rec[1]))

    vehicles = []
    for vid, (t, road, mass, speed) in enumerate(pooled):
        radius, a, b, c = spec_from_mass(mass, config.catalog)
        vehicles.append(
            VehicleSpec(
                vid=vid,
                road=road,
                injection_time_s=t,
                desired_speed_mps=speed,
                mass_kg=mass,
                radius_m=radius,
                road_load_a_n=a,
                road_load_b_n_per_mps=b,
                road_load_c_n_per_mps2=c,
            )
        )
    scenario = Scenario(
        seed=seed,
        layout=config.layout(),
        ts=config.ts,
        horizon_max_s=config.horizon_max_s,
        highway_rate_veh_per_hr=rate_hw,
        merge_rate_veh_per_hr=rate_mg,
        vehicles=tuple(vehicles),
        entry_eta_window_s=config.entry_eta_window_s,
    )
    if config.homogeneous:
        scenario = homogeneous_override(scenario, config)
    return scenario


def homogeneous_override(scenario: Scenario, config: MonteCarloConfig) -> Scenario:
    """Replace every body with the fixed homogeneous mass, recompute radius
    and coefficients, and re-apply the minimal injection shifts for the new
    radii. Idempotent: applying twice equals applying once."""
    mass = lbs_to_kg(config.homogeneous_mass_lbs)
    radius, a, b, c = spec_from_mass(mass, config.catalog)
    groups: dict[str, list[VehicleSpec]] = {}
    draws: dict[str, tuple[list[float], list[float], list[float]]] = {}
    for road in (HIGHWAY, MERGE):
        group = [v for v in scenario.vehicles if v.road == road]
        group.sort(key=lambda v: (v.injection_time_s, v.vid))
        groups[road] = group
        draws[road] = (
            [v.injection_time_s for v in group],
            [radius] * len(group),
            [v.desired_speed_mps for v in group],
        )
    scheduled = _schedule_injections(
        draws,
        config.beta,
        min(config.ccbf_bandwidth, config.fifo_bandwidth1),
        config.ts,
        config.cz_before_m,
        config.cross_eta_spacing_s,
    )
    vehicles = []
    for road in (HIGHWAY, MERGE):
        for v, t in zip(groups[road], scheduled[road]):
            vehicles.append(
                replace(
                    v,
                    injection_time_s=t,
                    mass_kg=mass,
                    radius_m=radius,
                    road_load_a_n=a,
                    road_load_b_n_per_mps=b,
                    road_load_c_n_per_mps2=c,
                )
            )
    vehicles.sort(key=lambda v: (v.injection_time_s, v.vid))
    return replace(scenario, vehicles=tuple(vehicles))


def scenario_to_json(scenario: Scenario) -> str:
    """Canonical JSON text; floats keep full round-trip precision."""
    payload = {
        "seed": scenario.seed,
        "layout": {
            "merge_angle_rad": scenario.layout.merge_angle_rad,
            "cz_before_m": scenario.layout.cz_before_m,
            "cz_after_m": scenario.layout.cz_after_m,
        },
        "ts": scenario.ts,
        "horizon_max_s": scenario.horizon_max_s,
        "highway_rate_veh_per_hr": scenario.highway_rate_veh_per_hr,
        "merge_rate_veh_per_hr": scenario.merge_rate_veh_per_hr,
        "entry_eta_window_s": scenario.entry_eta_window_s,
        "vehicles": [asdict(v) for v in scenario.vehicles],
    }
    return json.dumps(payload, sort_keys=True, indent=1)


def scenario_from_json(text: str) -> Scenario:
    payload = json.loads(text)
    layout = MergeLayout(**payload["layout"])
    vehicles = tuple(VehicleSpec(**v) for v in payload["vehicles"])
    return Scenario(
        seed=payload["seed"],
        layout=layout,
        ts=payload["ts"],
        horizon_max_s=payload["horizon_max_s"],
        highway_rate_veh_per_hr=payload["highway_rate_veh_per_hr"],
        merge_rate_veh_per_hr=payload["merge_rate_veh_per_hr"],
        vehicles=vehicles,
        entry_eta_window_s=payload.get("entry_eta_window_s", 1.5),
    )


_CATALOG_FIELDS = ("name", "mass_lbs", "a_lbf", "b_lbf_per_mph", "c_lbf_per_mph2")


def config_from_dict(raw: dict) -> MonteCarloConfig:
    known = {f for f in MonteCarloConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    kwargs = dict(raw)
    if "catalog" in kwargs:
        entries = kwargs["catalog"]
        if (
            not isinstance(entries, (list, tuple))
            or len(entries) != 2
            or any(not isinstance(e, dict) for e in entries)
        ):
            raise ConfigError("catalog: expected a list of two anchor objects")
        parsed = []
        for e in entries:
            missing = [f for f in _CATALOG_FIELDS if f not in e]
            extra = set(e) - set(_CATALOG_FIELDS)
            if missing or extra:
                raise ConfigError(
                    f"catalog entry: missing {missing or 'nothing'}, unknown {sorted(extra) or 'nothing'}"
                )
            parsed.append(VehicleCatalogEntry(**e))
        kwargs["catalog"] = (parsed[0], parsed[1])
    try:
        config = MonteCarloConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    validate_config(config)
    return config


def validate_config(config: MonteCarloConfig) -> None:
    def bail(msg: str):
        raise ConfigError(msg)

    if config.runs < 1:
        bail("runs must be at least 1")
    if config.vehicles_per_road < 1:
        bail("vehicles_per_road must be at least 1")
    if not 0.0 < config.rate_low_veh_per_hr <= config.rate_high_veh_per_hr:
        bail("injection rate bounds must satisfy 0 < low <= high")
    if not 0.0 < config.speed_low_mps <= config.speed_high_mps:
        bail("desired speed bounds must satisfy 0 < low <= high")
    if not 0.0 < config.mass_low_lbs <= config.mass_high_lbs:
        bail("mass bounds must satisfy 0 < low <= high")
    if not 0.0 < config.merge_angle_deg < 90.0:
        bail("merge_angle_deg must lie strictly between 0 and 90")
    if config.cz_before_m <= 0.0 or config.cz_after_m <= 0.0:
        bail("control-zone extents must be positive")
    if config.ts <= 0.0:
        bail("ts must be positive")
    if config.horizon_max_s <= 0.0:
        bail("horizon_max_s must be positive")
    if config.beta < 0.0:
        bail("beta must be nonnegative")
    if config.ccbf_bandwidth <= 0.0 or config.fifo_bandwidth1 <= 0.0 or config.fifo_bandwidth2 <= 0.0:
        bail("barrier bandwidths must be positive")
    if config.cross_eta_spacing_s < 0.0:
        bail("cross_eta_spacing_s must be nonnegative")
    if config.entry_eta_window_s < 0.0:
        bail("entry_eta_window_s must be nonnegative")
    if config.follow_gain <= 0.0:
        bail("follow_gain must be positive")
    if config.lane_margin_m < 0.0:
        bail("lane_margin_m must be nonnegative")
    if config.cross_yield_band_s < 0.0:
        bail("cross_yield_band_s must be nonnegative")
    if config.cross_release_mps_per_s <= 0.0:
        bail("cross_release_mps_per_s must be positive")
    if config.cross_sprint_mps < 0.0:
        bail("cross_sprint_mps must be nonnegative")
    if config.rate_penalty_per_kg is not None and config.rate_penalty_per_kg < 0.0:
        bail("rate_penalty_per_kg must be nonnegative")
    if not config.accel_min_mps2 < 0.0 < config.accel_max_mps2:
        bail("acceleration limits must satisfy accel_min < 0 < accel_max")
    if config.speed_gain <= 0.0:
        bail("speed_gain must be positive")
    if config.slack_weight < 1e4:
        bail("slack_weight must be at least 1e4")
    if config.histogram_bins < 1:
        bail("histogram_bins must be at least 1")
    if config.parallelism is not None and config.parallelism < 1:
        bail("parallelism must be at least 1")
    light, heavy = config.catalog
    if not 0.0 < light.mass_lbs < heavy.mass_lbs:
        bail("catalog: anchor masses must satisfy 0 < light < heavy")
    lo, hi = light.mass_lbs, heavy.mass_lbs
    if config.mass_low_lbs < lo - 1e-9 or config.mass_high_lbs > hi + 1e-9:
        bail("mass bounds must lie within the catalog anchor masses")
    if not lo <= config.homogeneous_mass_lbs <= hi:
        bail("homogeneous_mass_lbs must lie within the catalog anchor masses")


def load_config(path: str) -> MonteCarloConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    return config_from_dict(raw)


def config_to_dict(config: MonteCarloConfig) -> dict:
    out = asdict(config)
    out["catalog"] = [asdict(e) for e in config.catalog]
    return out
