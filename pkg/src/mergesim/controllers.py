"""The two merge coordinators.

ccbf_step: one centralized QP per step over every vehicle in the control
zone. Speeds are the decision variables; the cost pulls each vehicle toward
its desired speed and penalizes command changes in proportion to vehicle
mass, so heavy vehicles prefer to hold speed and light ones absorb the
adjustment. One speed-level barrier row per unordered pair keeps the
beta-inflated disks separated; speed boxes encode the acceleration limits
and a floor at zero. If the QP reports infeasible or hits its iteration cap
every vehicle brakes at the limit for that step and the event is logged.

fifo_step: the benchmark. Vehicles are served in control-zone entry order;
each solves its own scalar QP over (acceleration, slack) against the
acceleration-level barrier bounds induced by every higher-priority vehicle,
whose acceleration is assumed zero. The slack is shared across an ego's
rows and priced quadratically, so it only activates when the hard bounds
leave the acceleration box empty.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import qpsolver
from .geometry import MERGE, ROAD_CODE, MergeLayout, plane_states
from .scenario import DEFAULT_CATALOG, MonteCarloConfig

_TRIU_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}

_MERGE_CODE = ROAD_CODE[MERGE]

# junction-arrival cap internals: speed floor for time-to-junction
# estimates, and the denominator floor that turns a ghost already through
# the junction into a harmlessly huge cap
_CROSS_SPEED_EPS = 0.5
_CROSS_DEN_MIN_S = 0.05


def _pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _TRIU_CACHE:
        _TRIU_CACHE[n] = np.triu_indices(n, 1)
    return _TRIU_CACHE[n]


@dataclass(frozen=True)
class CcbfConfig:
    bandwidth: float = 2.5
    beta: float = 0.1
    rate_penalty_per_kg: float = 1.0 / DEFAULT_CATALOG[0].mass_kg
    accel_min: float = -6.0
    accel_max: float = 5.0
    ts: float = 0.1
    speed_floor: float = 0.0
    follow_gain: float = 0.5
    lane_margin_m: float = 2.0
    cross_yield_band_s: float = 0.5
    cross_release_mps_per_s: float = 30.0
    cross_sprint_mps: float = 2.0

    def __post_init__(self):
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        if self.rate_penalty_per_kg < 0.0:
            raise ValueError("rate penalty must be nonnegative")
        if not self.accel_min < 0.0 < self.accel_max:
            raise ValueError("acceleration limits must straddle zero")
        if self.ts <= 0.0:
            raise ValueError("ts must be positive")
        if self.follow_gain <= 0.0:
            raise ValueError("follow_gain must be positive")
        if self.lane_margin_m < 0.0:
            raise ValueError("lane_margin_m must be nonnegative")
        if self.cross_yield_band_s < 0.0:
            raise ValueError("cross_yield_band_s must be nonnegative")
        if self.cross_release_mps_per_s <= 0.0:
            raise ValueError("cross_release_mps_per_s must be positive")
        if self.cross_sprint_mps < 0.0:
            raise ValueError("cross_sprint_mps must be nonnegative")


@dataclass(frozen=True)
class FifoConfig:
    bandwidth1: float = 0.3
    bandwidth2: float = 2.0
    beta: float = 0.1
    speed_gain: float = 0.5
    slack_weight: float = 1e6
    accel_min: float = -6.0
    accel_max: float = 5.0

    def __post_init__(self):
        if self.bandwidth1 <= 0.0 or self.bandwidth2 <= 0.0:
            raise ValueError("bandwidths must be positive")
        if self.speed_gain <= 0.0:
            raise ValueError("speed_gain must be positive")
        if self.slack_weight < 1e4:
            raise ValueError("slack_weight must be at least 1e4")
        if not self.accel_min < 0.0 < self.accel_max:
            raise ValueError("acceleration limits must straddle zero")


def ccbf_config_from(mc: MonteCarloConfig) -> CcbfConfig:
    return CcbfConfig(
        bandwidth=mc.ccbf_bandwidth,
        beta=mc.beta,
        rate_penalty_per_kg=mc.rate_penalty(),
        accel_min=mc.accel_min_mps2,
        accel_max=mc.accel_max_mps2,
        ts=mc.ts,
        follow_gain=mc.follow_gain,
        lane_margin_m=mc.lane_margin_m,
        cross_yield_band_s=mc.cross_yield_band_s,
        cross_release_mps_per_s=mc.cross_release_mps_per_s,
        cross_sprint_mps=mc.cross_sprint_mps,
    )


def fifo_config_from(mc: MonteCarloConfig) -> FifoConfig:
    return FifoConfig(
        bandwidth1=mc.fifo_bandwidth1,
        bandwidth2=mc.fifo_bandwidth2,
        beta=mc.beta,
        speed_gain=mc.speed_gain,
        slack_weight=mc.slack_weight,
        accel_min=mc.accel_min_mps2,
        accel_max=mc.accel_max_mps2,
    )


@dataclass
class FleetState:
    """Struct of arrays for the vehicles currently inside the control zone.

    speed carries the last commanded speed under the centralized controller
    and the integrated speed under the benchmark.
    """

    ids: np.ndarray
    road_codes: np.ndarray
    s: np.ndarray
    speed: np.ndarray
    desired: np.ndarray
    mass: np.ndarray
    radius: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]


@dataclass(frozen=True)
class ControlCommand:
    vid: int
    value: float


@dataclass
class StepDiagnostics:
    status: str
    iterations: int
    wall_time_s: float
    active_rows: int
    fallback: bool
    min_margin: float  # worst post-solve constraint slack, +inf when no rows


def as_commands(ids: np.ndarray, values: np.ndarray) -> list[ControlCommand]:
    return [ControlCommand(int(i), float(v)) for i, v in zip(ids, values)]


def ccbf_rows(
    state: FleetState, layout: MergeLayout, beta: float, bandwidth: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pair constraint matrix: rows A with A @ u >= b, one per unordered
    pair, plus the pair index arrays. Matches the scalar route
    barriers.first_order_row elementwise."""
    n = len(state)
    iu, ju = _pair_indices(n)
    pos, head = plane_states(state.road_codes, state.s, layout)
    xi = pos[iu] - pos[ju]
    inflated = (1.0 + beta) * (state.radius[iu] + state.radius[ju])
    h = np.einsum("ij,ij->i", xi, xi) - inflated * inflated
    coeff_i = 2.0 * np.einsum("ij,ij->i", xi, head[iu])
    coeff_j = -2.0 * np.einsum("ij,ij->i", xi, head[ju])
    n_pairs = iu.shape[0]
    coeffs = np.zeros((n_pairs, n))
    rng = np.arange(n_pairs)
    coeffs[rng, iu] = coeff_i
    coeffs[rng, ju] = coeff_j
    bounds = -bandwidth * h
    return coeffs, bounds, iu, ju


def follow_references(state: FleetState, cfg: CcbfConfig) -> np.ndarray:
    """Speed reference per vehicle: desired speed, capped by two families
    of follow targets.

    Same-lane: constant-time-headway target against the nearest vehicle
    ahead on the same road, or anywhere past the merge point where the
    roads have joined. Queued vehicles then hold station instead of
    pressing their barrier rows against the vehicle ahead.

    Cross-road, before the merge point: a junction-arrival target that
    holds a vehicle one clearance interval behind any vehicle on the other
    road due to reach the junction first, so crossing order settles early
    and gently instead of at the last few meters. Near-simultaneous
    arrivals resolve by road priority: inside the tie band the merge road
    keeps yielding while the highway's cap lifts away, so dead heats break
    one way instead of degenerating into matched mutual braking. Each cap
    lifts linearly as its ghost falls behind in arrival time and every
    term varies continuously with the state."""
    n = len(state)
    refs = state.desired.copy()
    s = state.s
    v = state.speed
    for i in range(n):
        lane_cap = np.inf
        mates = (s > s[i]) & ((state.road_codes == state.road_codes[i]) | (s >= 0.0))
        mates[i] = False
        if mates.any():
            j = int(np.nonzero(mates)[0][np.argmin(s[mates])])
            gap = (s[j] - s[i]) - (1.0 + cfg.beta) * (state.radius[i] + state.radius[j])
            # track the leader down to a thin fixed margin: guards the
            # approach without imposing a wide service headway at speed
            lane_cap = max(0.0, v[j] + cfg.follow_gain * (gap - cfg.lane_margin_m))
        if s[i] >= 0.0:
            refs[i] = min(refs[i], lane_cap)
            continue
        on_merge_road = state.road_codes[i] == _MERGE_CODE
        band = cfg.cross_yield_band_s
        dist_i = -s[i]
        eta_i = dist_i / max(v[i], _CROSS_SPEED_EPS)
        cross_cap = np.inf
        sprint = 0.0
        for j in np.nonzero(state.road_codes != state.road_codes[i])[0]:
            vj = max(v[j], _CROSS_SPEED_EPS)
            eta_j = -s[j] / vj  # negative once j is through the junction
            # slot interval: physical clearance plus the lane-following
            # margin, with a modest allowance for the settling transient
            clearance = (1.0 + cfg.beta) * (state.radius[i] + state.radius[j])
            tau = 1.2 * (clearance + cfg.lane_margin_m) / vj
            vt = dist_i / max(eta_j + tau, _CROSS_DEN_MIN_S)
            # the cap fades in over one band width of arrival-time deficit:
            # the merge road is fully engaged at a dead heat while the
            # highway only engages once genuinely beaten, which breaks
            # simultaneous arrivals one way without any jump in the map
            delta = eta_i - eta_j
            gate = (delta + band) / band if on_merge_road else delta / band
            gate = min(1.0, max(0.0, gate))
            cross_cap = min(cross_cap, vt + (1.0 - gate) * cfg.cross_release_mps_per_s)
            # the winning side of a near-tie surges ahead to widen the
            # arrival separation from its own side; a triangular bump
            # keeps the surge local to genuine conflicts
            if on_merge_road:
                excess = min(-band - delta, delta + 3.0 * band) / band
            else:
                excess = 1.0 - abs(delta) / band
            sprint = max(sprint, min(1.0, max(0.0, excess)))
        base = refs[i] + sprint * cfg.cross_sprint_mps
        refs[i] = max(0.0, min(base, lane_cap, cross_cap))
    return refs


def ccbf_step(
    state: FleetState,
    layout: MergeLayout,
    cfg: CcbfConfig,
    warm_speeds: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, StepDiagnostics]:
    """One centralized solve; returns commanded speeds for the fleet."""
    t_start = time.perf_counter()
    n = len(state)
    weight = cfg.rate_penalty_per_kg * state.mass
    hessian = np.diag(2.0 * (1.0 + weight))
    gradient = -2.0 * (follow_references(state, cfg) + weight * state.speed)
    lower = np.maximum(cfg.speed_floor, state.speed + cfg.accel_min * cfg.ts)
    upper = state.speed + cfg.accel_max * cfg.ts
    coeffs, bounds, _, _ = ccbf_rows(state, layout, cfg.beta, cfg.bandwidth)
    problem = qpsolver.QPProblem(hessian, gradient, coeffs, bounds, lower, upper)
    point = state.speed if warm_speeds is None else warm_speeds
    sol = qpsolver.solve(problem, warm_start=qpsolver.WarmStart(point=point))

    if sol.status == qpsolver.OPTIMAL:
        speeds = sol.u
        fallback = False
    else:
        # proportional fleet braking at the fastest vehicle's rate limit:
        # pair rows are homogeneous in the speeds, so scaling toward rest
        # shrinks closing rates and restores feasibility, where a uniform
        # rate-limit brake would preserve closing rates and let barely
        # infeasible co-linear pairs grind into contact
        u_top = float(state.speed.max()) if n else 0.0
        if u_top > 1e-12:
            kappa = max(0.0, 1.0 + cfg.accel_min * cfg.ts / u_top)
        else:
            kappa = 0.0
        speeds = np.maximum(cfg.speed_floor, kappa * state.speed)
        fallback = True
    if bounds.size:
        margin = float((coeffs @ speeds - bounds).min())
        active = int(np.count_nonzero(sol.duals[: bounds.size] > 1e-9))
    else:
        margin = float("inf")
        active = 0
    wall = time.perf_counter() - t_start
    return speeds, StepDiagnostics(
        status=sol.status,
        iterations=sol.iterations,
        wall_time_s=wall,
        active_rows=active,
        fallback=fallback,
        min_margin=margin,
    )


def fifo_priority(entry_times: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Service order: ascending control-zone entry time, ties to lower id.
    Returns positions into the fleet arrays, highest priority first."""
    return np.lexsort((ids, entry_times))


def fifo_step(
    state: FleetState,
    layout: MergeLayout,
    cfg: FifoConfig,
    entry_times: np.ndarray,
) -> tuple[np.ndarray, StepDiagnostics]:
    """Per-vehicle solves in priority order; returns commanded accelerations."""
    t_start = time.perf_counter()
    n = len(state)
    order = fifo_priority(entry_times, state.ids)
    pos, head = plane_states(state.road_codes, state.s, layout)
    vel = state.speed[:, None] * head

    accel = np.empty(n)
    iterations = 0
    active = 0
    fallback = False
    min_margin = float("inf")
    bw1, bw2 = cfg.bandwidth1, cfg.bandwidth2
    hessian = np.array([[2.0, 0.0], [0.0, 2.0 * cfg.slack_weight]])
    box_lo = np.array([cfg.accel_min, 0.0])
    box_hi = np.array([cfg.accel_max, np.inf])

    for rank in range(n):
        idx = order[rank]
        base = float(
            np.clip(
                cfg.speed_gain * (state.desired[idx] - state.speed[idx]),
                cfg.accel_min,
                cfg.accel_max,
            )
        )
        if rank == 0:
            accel[idx] = base
            continue
        hp = order[:rank]
        xi = pos[idx] - pos[hp]
        vrel = vel[idx] - vel[hp]
        inflated = (1.0 + cfg.beta) * (state.radius[idx] + state.radius[hp])
        h = np.einsum("ij,ij->i", xi, xi) - inflated * inflated
        h_dot = 2.0 * np.einsum("ij,ij->i", xi, vrel)
        coeff = 2.0 * (xi @ head[idx])
        const = (
            2.0 * np.einsum("ij,ij->i", vrel, vrel)
            + (bw1 + bw2) * h_dot
            + bw1 * bw2 * h
        )
        k = coeff.shape[0]
        rows = np.empty((k, 2))
        rows[:, 0] = coeff
        rows[:, 1] = 1.0
        bounds = -const
        gradient = np.array([-2.0 * base, 0.0])
        # ego's base command plus enough slack is always feasible
        slack0 = float(max(0.0, np.max(bounds - coeff * base)))
        problem = qpsolver.QPProblem(hessian, gradient, rows, bounds, box_lo, box_hi)
        sol = qpsolver.solve(
            problem, warm_start=qpsolver.WarmStart(point=np.array([base, slack0]))
        )
        iterations += sol.iterations
        if sol.status == qpsolver.OPTIMAL:
            accel[idx] = sol.u[0]
            slack = sol.u[1]
        else:
            accel[idx] = cfg.accel_min
            slack = slack0
            fallback = True
        min_margin = min(min_margin, float(np.min(coeff * accel[idx] + slack - bounds)))
        active += int(np.count_nonzero(sol.duals[:k] > 1e-9))

    wall = time.perf_counter() - t_start
    status = "fallback" if fallback else qpsolver.OPTIMAL
    return accel, StepDiagnostics(
        status=status,
        iterations=iterations,
        wall_time_s=wall,
        active_rows=active,
        fallback=fallback,
        min_margin=min_margin,
    )
