"""Dense strictly convex quadratic programming by a primal active-set method.

Solves  min 0.5 u'Hu + g'u  subject to  A u >= b  and box bounds, with H
symmetric positive definite. Box bounds are handled as ordinary rows, so the
dual vector has m + 2n entries ordered (general rows, lower bounds, upper
bounds). General rows are L2-normalized internally; multipliers are mapped
back to the caller's scaling on exit.

A solve starts from the warm point (or the clamped unconstrained minimum).
If that point already satisfies every row, the kernel runs directly on the
problem. Otherwise a single elastic variable t is added (rows become
a.u + t >= b with t >= 0, objective gains M t + 0.5 rho t^2) and the same
kernel runs on the extended problem from a trivially feasible start; t* = 0
at the elastic optimum certifies feasibility, and a short polish run then
yields the exact solution and clean multipliers. M escalates twice before
the problem is declared infeasible, reporting the residual violation.

Two interchangeable kernels implement the iteration: a compiled extension
and a pure numpy twin. The extension is preferred at import;
MERGESIM_PURE_PYTHON=1 forces the fallback.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

_FEAS_SLACK = 1e-9       # violation treated as "already feasible"
_ACTIVE_SEED = 1e-11     # residual below which a row seeds the working set


class QPStructureError(ValueError):
    """Malformed problem: bad shapes, asymmetric or indefinite Hessian."""


def _pick_kernel():
    if not os.environ.get("MERGESIM_PURE_PYTHON"):
        try:
            from . import _native

            return _native.solve_kernel, "native"
        except ImportError:
            pass
    from . import _python

    return _python.solve_kernel, "python"


_KERNEL, _KERNEL_NAME = _pick_kernel()


def kernel_name() -> str:
    """Which kernel this process selected at import: 'native' or 'python'."""
    return _KERNEL_NAME


def available_kernels() -> dict:
    """All importable kernels, for benchmarks and cross-checks."""
    out = {}
    from . import _python

    out["python"] = _python.solve_kernel
    try:
        from . import _native

        out["native"] = _native.solve_kernel
    except ImportError:
        pass
    return out


@dataclass
class QPProblem:
    """min 0.5 u'Hu + g'u  s.t.  ineq_coeffs @ u >= ineq_bounds, lower <= u <= upper."""

    hessian: np.ndarray
    gradient: np.ndarray
    ineq_coeffs: np.ndarray
    ineq_bounds: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.hessian = np.asarray(self.hessian, dtype=float)
        self.gradient = np.asarray(self.gradient, dtype=float)
        n = self.gradient.shape[0] if self.gradient.ndim == 1 else 0
        self.ineq_coeffs = np.asarray(self.ineq_coeffs, dtype=float).reshape(-1, n)
        self.ineq_bounds = np.asarray(self.ineq_bounds, dtype=float).reshape(-1)
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)

    @property
    def n(self) -> int:
        return self.gradient.shape[0]

    @property
    def m(self) -> int:
        return self.ineq_bounds.shape[0]


@dataclass
class WarmStart:
    point: Optional[np.ndarray] = None
    active_rows: Sequence[int] = ()


@dataclass
class QPSolution:
    u: np.ndarray
    duals: np.ndarray
    status: str
    iterations: int
    max_violation: float = 0.0


@dataclass(frozen=True)
class KKTResidual:
    stationarity: float
    feasibility: float
    complementarity: float


def _validate(problem: QPProblem) -> np.ndarray:
    H = problem.hessian
    n = problem.n
    if n == 0 or H.shape != (n, n):
        raise QPStructureError(f"hessian shape {H.shape} does not match n={n}")
    if problem.lower.shape[0] != n or problem.upper.shape[0] != n:
        raise QPStructureError("box bounds must have one entry per variable")
    if problem.ineq_coeffs.shape != (problem.m, n):
        raise QPStructureError("ineq_coeffs shape does not match bounds/variables")
    if float(np.abs(H - H.T).max()) > 1e-10:
        raise QPStructureError("hessian is not symmetric within 1e-10")
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise QPStructureError("hessian is not positive definite") from exc
    if not (np.all(np.isfinite(problem.gradient)) and np.all(np.isfinite(H))):
        raise QPStructureError("hessian/gradient must be finite")
    if np.any(np.isnan(problem.lower)) or np.any(np.isnan(problem.upper)):
        raise QPStructureError("box bounds must not be NaN")
    if not np.all(np.isfinite(problem.ineq_coeffs)):
        raise QPStructureError("constraint rows must be finite")
    return H


def _build_rows(problem: QPProblem):
    """Normalized general rows plus finite box rows, with dual slot/scale maps."""
    n, m = problem.n, problem.m
    rows_list = []
    bounds_list = []
    slots = []
    scales = []
    for r in range(m):
        a = problem.ineq_coeffs[r]
        nrm = float(np.linalg.norm(a))
        if nrm <= 1e-300:
            if problem.ineq_bounds[r] > 1e-12:
                return None, None, None, None, r  # zero row, positive bound
            continue
        rows_list.append(a / nrm)
        bounds_list.append(problem.ineq_bounds[r] / nrm)
        slots.append(r)
        scales.append(nrm)
    for i in range(n):
        if np.isfinite(problem.lower[i]):
            e = np.zeros(n)
            e[i] = 1.0
            rows_list.append(e)
            bounds_list.append(problem.lower[i])
            slots.append(m + i)
            scales.append(1.0)
    for i in range(n):
        if np.isfinite(problem.upper[i]):
            e = np.zeros(n)
            e[i] = -1.0
            rows_list.append(e)
            bounds_list.append(-problem.upper[i])
            slots.append(m + n + i)
            scales.append(1.0)
    if rows_list:
        rows = np.ascontiguousarray(np.stack(rows_list))
        bounds = np.asarray(bounds_list)
    else:
        rows = np.zeros((0, n))
        bounds = np.zeros(0)
    return rows, bounds, np.asarray(slots, dtype=np.int64), np.asarray(scales), -1


def _map_duals(problem: QPProblem, slots, scales, lam) -> np.ndarray:
    duals = np.zeros(problem.m + 2 * problem.n)
    if lam.size:
        np.add.at(duals, slots, lam / scales)
    return duals


def solve(
    problem: QPProblem,
    warm_start: Union[WarmStart, np.ndarray, None] = None,
) -> QPSolution:
    """Solve the QP. Raises QPStructureError on malformed input; returns a
    solution with status 'infeasible' or 'max_iter' instead of raising when
    the constraint set is empty or the iteration budget runs out."""
    H = _validate(problem)
    n = problem.n
    g = problem.gradient
    lower, upper = problem.lower, problem.upper

    if np.any(lower > upper):
        return QPSolution(
            u=np.clip(np.zeros(n), lower, np.maximum(lower, upper)),
            duals=np.zeros(problem.m + 2 * n),
            status=INFEASIBLE,
            iterations=0,
            max_violation=float(np.max(lower - upper)),
        )

    rows, bounds, slots, scales, bad_row = _build_rows(problem)
    if bad_row >= 0:
        return QPSolution(
            u=np.zeros(n),
            duals=np.zeros(problem.m + 2 * n),
            status=INFEASIBLE,
            iterations=0,
            max_violation=float(problem.ineq_bounds[bad_row]),
        )

    if isinstance(warm_start, np.ndarray):
        warm_start = WarmStart(point=warm_start)
    elif warm_start is None:
        warm_start = WarmStart()

    if warm_start.point is not None:
        x0 = np.clip(np.asarray(warm_start.point, dtype=float), lower, upper)
    else:
        x0 = np.clip(np.linalg.solve(H, -g), lower, upper)

    n_rows = rows.shape[0]
    budget = 50 * (n + n_rows)
    resid0 = rows @ x0 - bounds if n_rows else np.zeros(0)
    violation = float(-resid0.min()) if n_rows else 0.0

    if violation <= _FEAS_SLACK:
        seeds = _seed_rows(warm_start, slots, resid0)
        x, lam, code, iters = _KERNEL(H, g, rows, bounds, x0, seeds, budget)
        return _finish(problem, rows, bounds, slots, scales, x, lam, code, iters)

    return _elastic_solve(problem, H, g, rows, bounds, slots, scales, x0, budget)


def _seed_rows(warm_start: WarmStart, slots, resid0) -> np.ndarray:
    seeds = []
    if warm_start.active_rows:
        wanted = set(int(r) for r in warm_start.active_rows)
        for pos, slot in enumerate(slots):
            if int(slot) in wanted and resid0[pos] <= 1e-8:
                seeds.append(pos)
    for pos in np.nonzero(resid0 <= _ACTIVE_SEED)[0]:
        if pos not in seeds:
            seeds.append(int(pos))
    return np.asarray(seeds, dtype=np.int64)


def _finish(problem, rows, bounds, slots, scales, x, lam, code, iters, extra_iters=0):
    from . import _python

    status = OPTIMAL if code == _python.STATUS_OPTIMAL else MAX_ITER
    resid = rows @ x - bounds if rows.shape[0] else np.zeros(0)
    violation = float(max(0.0, -resid.min())) if resid.size else 0.0
    return QPSolution(
        u=x,
        duals=_map_duals(problem, slots, scales, lam),
        status=status,
        iterations=iters + extra_iters,
        max_violation=violation,
    )


def _elastic_solve(problem, H, g, rows, bounds, slots, scales, x0, budget):
    """Feasibility-seeking pass with one elastic variable, then a polish run."""
    n = problem.n
    n_rows = rows.shape[0]
    general = slots < problem.m  # only caller rows are elastic; boxes stay hard

    h_scale = float(np.max(np.diag(H)))
    rho = max(1.0, h_scale)
    x_scale = 1.0 + float(np.abs(x0).max())
    m0 = 1e4 * (1.0 + float(np.abs(g).max()) + h_scale * x_scale)

    He = np.zeros((n + 1, n + 1))
    He[:n, :n] = H
    He[n, n] = rho
    rows_e = np.zeros((n_rows + 1, n + 1))
    rows_e[:n_rows, :n] = rows
    rows_e[:n_rows, n] = np.where(general, 1.0, 0.0)
    rows_e[n_rows, n] = 1.0  # t >= 0
    bounds_e = np.concatenate([bounds, [0.0]])
    rows_e = np.ascontiguousarray(rows_e)

    resid0 = rows @ x0 - bounds
    t0 = float(-(resid0[general]).min()) * (1.0 + 1e-9) + 1e-9
    x0e = np.concatenate([x0, [t0]])
    budget_e = 50 * (n + 1 + n_rows + 1)

    total_iters = 0
    penalty = m0
    for _ in range(3):
        ge = np.concatenate([g, [penalty]])
        xe, lam_e, code, iters = _KERNEL(
            He, ge, rows_e, bounds_e, x0e, np.empty(0, dtype=np.int64), budget_e
        )
        total_iters += iters
        from . import _python

        if code != _python.STATUS_OPTIMAL:
            x = xe[:n]
            return _finish(
                problem, rows, bounds, slots, scales, x, lam_e[:n_rows], code, total_iters
            )
        t_star = float(xe[n])
        if t_star <= _FEAS_SLACK:
            x = np.clip(xe[:n], problem.lower, problem.upper)
            resid = rows @ x - bounds
            seeds = np.nonzero(resid <= _ACTIVE_SEED)[0].astype(np.int64)
            x, lam, code, iters = _KERNEL(H, g, rows, bounds, x, seeds, budget)
            total_iters += iters
            return _finish(
                problem, rows, bounds, slots, scales, x, lam, code, iters,
                extra_iters=total_iters - iters,
            )
        penalty *= 100.0
    x = xe[:n]
    resid = rows @ x - bounds
    return QPSolution(
        u=x,
        duals=np.zeros(problem.m + 2 * n),
        status=INFEASIBLE,
        iterations=total_iters,
        max_violation=float(max(0.0, -resid.min())) if resid.size else 0.0,
    )


def kkt_residual(problem: QPProblem, solution: QPSolution) -> KKTResidual:
    """Stationarity, primal feasibility, and complementarity residuals of a
    solution, all as max norms in the caller's row scaling."""
    n, m = problem.n, problem.m
    x = solution.u
    lam = solution.duals
    lam_rows, lam_lo, lam_hi = lam[:m], lam[m : m + n], lam[m + n :]
    grad = problem.hessian @ x + problem.gradient
    if m:
        grad = grad - problem.ineq_coeffs.T @ lam_rows
    grad = grad - lam_lo + lam_hi
    stationarity = float(np.abs(grad).max())

    feas = 0.0
    comp = 0.0
    if m:
        resid = problem.ineq_coeffs @ x - problem.ineq_bounds
        feas = max(feas, float(np.max(-resid, initial=0.0)))
        comp = max(comp, float(np.max(np.abs(lam_rows * resid), initial=0.0)))
    lo_resid = np.where(np.isfinite(problem.lower), x - problem.lower, np.inf)
    hi_resid = np.where(np.isfinite(problem.upper), problem.upper - x, np.inf)
    feas = max(feas, float(np.max(-np.minimum(lo_resid, hi_resid), initial=0.0)))
    with np.errstate(invalid="ignore"):
        comp_lo = np.where(np.isfinite(lo_resid), np.abs(lam_lo * lo_resid), 0.0)
        comp_hi = np.where(np.isfinite(hi_resid), np.abs(lam_hi * hi_resid), 0.0)
    comp = max(comp, float(np.max(comp_lo, initial=0.0)), float(np.max(comp_hi, initial=0.0)))
    return KKTResidual(stationarity, feas, comp)


def dump_problem(problem: QPProblem, path: str, note: str = "") -> None:
    """Write a problem as JSON for offline reproduction."""
    payload = {
        "note": note,
        "hessian": problem.hessian.tolist(),
        "gradient": problem.gradient.tolist(),
        "ineq_coeffs": problem.ineq_coeffs.tolist(),
        "ineq_bounds": problem.ineq_bounds.tolist(),
        "lower": problem.lower.tolist(),
        "upper": problem.upper.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_problem(path: str) -> QPProblem:
    with open(path) as fh:
        payload = json.load(fh)
    return QPProblem(
        hessian=payload["hessian"],
        gradient=payload["gradient"],
        ineq_coeffs=payload["ineq_coeffs"],
        ineq_bounds=payload["ineq_bounds"],
        lower=payload["lower"],
        upper=payload["upper"],
    )
