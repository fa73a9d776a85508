"""Fixed-step simulation of one scenario under one controller.

Vehicles appear at the control-zone entry at their injection times, are
controlled while inside the zone, and are dropped the step after they pass
the zone exit. The centralized controller commands speeds directly
(s advances by u * ts; the recorded acceleration is the command difference
over ts). The benchmark commands accelerations integrated semi-implicitly
with the speed floored at zero. The safety record h0_min is the smallest
uninflated disk barrier over every step and co-present pair; a negative
value is a collision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controllers import (
    CcbfConfig,
    FifoConfig,
    FleetState,
    StepDiagnostics,
    ccbf_step,
    fifo_step,
)
from .geometry import ROAD_CODE, plane_states
from .scenario import Scenario, entry_gap_required_m

CCBF = "ccbf"
FIFO = "fifo"
CONTROLLERS = (CCBF, FIFO)


@dataclass(frozen=True)
class Event:
    t: float
    kind: str  # inject | cross | exit | fallback
    vid: int
    value: float


@dataclass
class StepRecord:
    step: int
    n_agents: int
    status: str
    iterations: int
    wall_time_s: float
    active_rows: int
    min_margin: float


@dataclass
class SimTrace:
    """Flat per-(step, vehicle) arrays in step order, plus events and
    per-step solver diagnostics."""

    controller: str
    ts: float
    step: np.ndarray
    t: np.ndarray
    vid: np.ndarray
    road: np.ndarray  # road codes
    s: np.ndarray
    v: np.ndarray  # speed at the step start
    u: np.ndarray  # speed holding over [t, t + ts)
    a: np.ndarray  # commanded acceleration for the step
    in_cz: np.ndarray
    events: list[Event] = field(default_factory=list)
    diagnostics: list[StepRecord] = field(default_factory=list)


@dataclass
class RunOutcome:
    scenario: Scenario
    controller: str
    trace: SimTrace
    completed: bool
    collision: bool
    h0_min: float
    steps: int
    fallback_steps: int
    min_pair_margin: float  # worst post-solve constraint slack over optimal steps


def _pair_min_h0(pos: np.ndarray, radius: np.ndarray) -> float:
    n = pos.shape[0]
    iu, ju = np.triu_indices(n, 1)
    diff = pos[iu] - pos[ju]
    rsum = radius[iu] + radius[ju]
    h0 = np.einsum("ij,ij->i", diff, diff) - rsum * rsum
    return float(h0.min())


def run(
    scenario: Scenario,
    controller: str,
    ccbf_cfg: Optional[CcbfConfig] = None,
    fifo_cfg: Optional[FifoConfig] = None,
) -> RunOutcome:
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}, expected one of {CONTROLLERS}")
    if controller == CCBF and ccbf_cfg is None:
        ccbf_cfg = CcbfConfig()
    if controller == FIFO and fifo_cfg is None:
        fifo_cfg = FifoConfig()

    layout = scenario.layout
    ts = scenario.ts
    vehicles = scenario.vehicles
    n = len(vehicles)
    ids = np.array([v.vid for v in vehicles], dtype=np.int64)
    roads = np.array([ROAD_CODE[v.road] for v in vehicles], dtype=np.int64)
    inj_time = np.array([v.injection_time_s for v in vehicles])
    desired = np.array([v.desired_speed_mps for v in vehicles])
    mass = np.array([v.mass_kg for v in vehicles])
    radius = np.array([v.radius_m for v in vehicles])

    s = np.zeros(n)
    speed = np.zeros(n)
    injected = np.zeros(n, dtype=bool)
    removed = np.zeros(n, dtype=bool)
    active = np.zeros(0, dtype=np.int64)
    # actual control-zone entry instants; deferral can push them past the
    # scheduled times, and passage priority follows actual entry
    entered_time = np.full(n, np.inf)

    # same-road predecessor in injection order; -1 for the first on a road
    prev_idx = np.full(n, -1, dtype=np.int64)
    last_on_road: dict[int, int] = {}
    for i in np.argsort(inj_time, kind="stable"):
        r = int(roads[i])
        prev_idx[i] = last_on_road.get(r, -1)
        last_on_road[r] = int(i)
    if controller == CCBF:
        gate_bandwidth = ccbf_cfg.bandwidth
        gate_beta = ccbf_cfg.beta
    else:
        gate_bandwidth = fifo_cfg.bandwidth1
        gate_beta = fifo_cfg.beta

    eta_window = scenario.entry_eta_window_s

    def entry_admissible(i: int, now: float) -> bool:
        """Entry gap to the same-road predecessor must clear the inflated
        disks, absorb any speed excess, and leave reaction headway;
        otherwise the newcomer's rate-limited command box makes the
        constraint set unsatisfiable (or erodible by predecessor braking it
        cannot see). Entry also waits out predicted merge-point ties with
        opposite-road traffic: those contests degenerate into deep mutual
        slowdown, which metering at the boundary avoids entirely."""
        p = prev_idx[i]
        if p >= 0 and not removed[p]:
            if not injected[p]:
                return False
            pts, _ = plane_states(
                np.array([roads[p], roads[i]]),
                np.array([s[p], -layout.cz_before_m]),
                layout,
            )
            gap = float(np.hypot(*(pts[0] - pts[1])))
            need = entry_gap_required_m(
                gate_beta, gate_bandwidth, radius[i], radius[p], desired[i], speed[p]
            )
            if gap + 1e-9 < need:
                return False
        if eta_window > 0.0:
            eta_i = now + layout.cz_before_m / desired[i]
            live = injected & ~removed & (roads != roads[i]) & (s < 0.0)
            for j in np.nonzero(live)[0]:
                eta_j = now + (-s[j]) / max(speed[j], 0.1)
                if abs(eta_i - eta_j) < eta_window - 1e-9:
                    return False
        return True

    cols: dict[str, list[np.ndarray]] = {
        key: [] for key in ("step", "t", "vid", "road", "s", "v", "u", "a")
    }
    events: list[Event] = []
    diagnostics: list[StepRecord] = []
    h0_min = float("inf")
    fallback_steps = 0
    min_pair_margin = float("inf")
    completed = False

    k = 0
    while True:
        t = k * ts
        due = ~injected & (inj_time <= t + 1e-9)
        if due.any():
            entered = False
            for i in np.nonzero(due)[0]:
                if not entry_admissible(int(i), t):
                    continue
                injected[i] = True
                s[i] = -layout.cz_before_m
                speed[i] = desired[i]
                entered_time[i] = t
                events.append(Event(t, "inject", int(ids[i]), -layout.cz_before_m))
                entered = True
            if entered:
                active = np.nonzero(injected & ~removed)[0]

        if active.size >= 2:
            pos, _ = plane_states(roads[active], s[active], layout)
            h0_min = min(h0_min, _pair_min_h0(pos, radius[active]))

        if injected.all() and removed.all():
            completed = True
            break
        if t > scenario.horizon_max_s + 1e-9:
            break

        if active.size:
            state = FleetState(
                ids=ids[active],
                road_codes=roads[active],
                s=s[active],
                speed=speed[active],
                desired=desired[active],
                mass=mass[active],
                radius=radius[active],
            )
            if controller == CCBF:
                commands, diag = ccbf_step(state, layout, ccbf_cfg)
                new_speed = commands
                accel = (commands - speed[active]) / ts
            else:
                commands, diag = fifo_step(state, layout, fifo_cfg, entered_time[active])
                accel = commands
                new_speed = np.maximum(0.0, speed[active] + commands * ts)

            m = active.size
            cols["step"].append(np.full(m, k, dtype=np.int64))
            cols["t"].append(np.full(m, t))
            cols["vid"].append(ids[active])
            cols["road"].append(roads[active])
            cols["s"].append(s[active].copy())
            cols["v"].append(speed[active].copy())
            cols["u"].append(new_speed.copy())
            cols["a"].append(accel.copy())

            diagnostics.append(
                StepRecord(
                    step=k,
                    n_agents=m,
                    status=diag.status,
                    iterations=diag.iterations,
                    wall_time_s=diag.wall_time_s,
                    active_rows=diag.active_rows,
                    min_margin=diag.min_margin,
                )
            )
            if diag.fallback:
                fallback_steps += 1
                events.append(Event(t, "fallback", -1, float(diag.iterations)))
            elif np.isfinite(diag.min_margin):
                min_pair_margin = min(min_pair_margin, diag.min_margin)

            s_old = s[active].copy()
            s[active] = s_old + new_speed * ts
            speed[active] = new_speed

            crossed = (s_old < 0.0) & (s[active] >= 0.0)
            for pos_i in np.nonzero(crossed)[0]:
                i = active[pos_i]
                frac_den = s[i] - s_old[pos_i]
                frac = (0.0 - s_old[pos_i]) / frac_den if frac_den > 0.0 else 1.0
                events.append(Event(t + frac * ts, "cross", int(ids[i]), t + frac * ts))

            exited = s[active] > layout.cz_after_m
            if exited.any():
                for pos_i in np.nonzero(exited)[0]:
                    i = active[pos_i]
                    events.append(Event(t + ts, "exit", int(ids[i]), float(s[i])))
                removed[active[exited]] = True
                active = np.nonzero(injected & ~removed)[0]

        k += 1

    trace = SimTrace(
        controller=controller,
        ts=ts,
        step=_cat(cols["step"], np.int64),
        t=_cat(cols["t"], float),
        vid=_cat(cols["vid"], np.int64),
        road=_cat(cols["road"], np.int64),
        s=_cat(cols["s"], float),
        v=_cat(cols["v"], float),
        u=_cat(cols["u"], float),
        a=_cat(cols["a"], float),
        in_cz=np.ones(sum(x.shape[0] for x in cols["step"]), dtype=bool),
        events=events,
        diagnostics=diagnostics,
    )
    return RunOutcome(
        scenario=scenario,
        controller=controller,
        trace=trace,
        completed=completed,
        collision=bool(h0_min < 0.0),
        h0_min=h0_min if np.isfinite(h0_min) else float("inf"),
        steps=k,
        fallback_steps=fallback_steps,
        min_pair_margin=min_pair_margin,
    )


def _cat(chunks: list[np.ndarray], dtype) -> np.ndarray:
    if not chunks:
        return np.zeros(0, dtype=dtype)
    return np.concatenate(chunks).astype(dtype, copy=False)


def merge_crossing_times(trace: SimTrace) -> dict[int, float]:
    """Merge-point crossing instant per vehicle, linearly interpolated
    within the step where s changes sign."""
    return {e.vid: e.value for e in trace.events if e.kind == "cross"}
