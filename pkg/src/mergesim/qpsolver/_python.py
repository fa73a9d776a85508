"""Pure numpy twin of the compiled active-set kernel.

Same iteration as _native.pyx: primal active set on
min 0.5 x'Hx + g'x subject to rows @ x >= bounds, starting from a point that
satisfies every row up to a tiny slack. Each pass solves the
equality-constrained subproblem on the current working set through the dense
KKT system, takes the longest feasible step, and adds the blocking row, or
drops the row with the most negative multiplier once the step vanishes.
Ties break toward the lowest row index so both kernels walk the same path.
"""

from __future__ import annotations

import numpy as np

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1

_STEP_TOL = 1e-10
_DUAL_TOL = 1e-9
_RES_TOL = 1e-13     # cancellation floor per unit of gradient scale
_BLAND_AFTER = 25    # zero-progress iterations before lowest-index drops


def _independent(cols: list[np.ndarray], a: np.ndarray) -> bool:
    if not cols:
        return True
    basis = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(basis, a, rcond=None)
    return float(np.linalg.norm(a - basis @ coef)) > 1e-10 * max(1.0, float(np.linalg.norm(a)))


def solve_kernel(
    H: np.ndarray,
    g: np.ndarray,
    rows: np.ndarray,
    bounds: np.ndarray,
    x0: np.ndarray,
    w0: np.ndarray,
    max_iter: int,
) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Returns (x, row_multipliers, status, iterations)."""
    n = g.shape[0]
    n_rows = rows.shape[0]
    x = np.array(x0, dtype=float, copy=True)
    lam = np.zeros(n_rows)
    in_w: np.ndarray = np.zeros(n_rows, dtype=bool)
    working: list[int] = []
    # steps below the roundoff floor of the factored solve count as zero
    pivot2 = float(np.diag(np.linalg.cholesky(H)).min()) ** 2

    # seed the working set, skipping dependent rows
    seeded: list[np.ndarray] = []
    for j in w0:
        j = int(j)
        if in_w[j] or len(working) >= n:
            continue
        if _independent(seeded, rows[j]):
            seeded.append(rows[j])
            working.append(j)
            in_w[j] = True

    status = STATUS_MAX_ITER
    it = 0
    stall = 0
    # a full unblocked step lands exactly on the working-set stationary
    # point, so the next pass must check duals: any new p it computes is
    # roundoff, however an ill-conditioned active set inflates it
    free_prev = False
    while it < max_iter:
        it += 1
        grad = H @ x + g
        k = len(working)
        if k:
            aw = rows[working]
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = H
            kkt[:n, n:] = -aw.T
            kkt[n:, :n] = aw
            rhs = np.concatenate([-grad, np.zeros(k)])
            sol = np.linalg.solve(kkt, rhs)
            p = sol[:n]
            lam_w = sol[n:]
        else:
            p = -np.linalg.solve(H, grad)
            lam_w = np.empty(0)

        gmax = float(np.abs(grad).max())
        ptol = _STEP_TOL * (1.0 + np.abs(x).max()) + _RES_TOL * gmax / pivot2
        if free_prev or np.abs(p).max() <= ptol:
            free_prev = False
            lmax = float(np.abs(lam_w).max()) if k else 0.0
            if k == 0 or lam_w.min() >= -_DUAL_TOL * (1.0 + lmax):
                lam[:] = 0.0
                if k:
                    lam[working] = lam_w
                status = STATUS_OPTIMAL
                break
            # drop the most negative multiplier, lowest row index on ties;
            # after a stall streak, lowest violating index breaks cycles
            dtol = _DUAL_TOL * (1.0 + lmax)
            if stall > _BLAND_AFTER:
                drop_pos = min(
                    (pos for pos in range(k) if lam_w[pos] < -dtol),
                    key=lambda pos: working[pos],
                )
            else:
                drop_pos = 0
                drop_key = (lam_w[0], working[0])
                for pos in range(1, k):
                    key = (lam_w[pos], working[pos])
                    if key < drop_key:
                        drop_key = key
                        drop_pos = pos
            in_w[working.pop(drop_pos)] = False
            stall += 1
            continue

        step_dir = rows @ p
        resid = rows @ x - bounds
        dir_tol = -1e-12 * (1.0 + np.abs(p).max())
        alpha = 1.0
        block = -1
        for j in np.nonzero(~in_w & (step_dir < dir_tol))[0]:
            rj = resid[j]
            if rj < 0.0:
                rj = 0.0  # start-point slack, treat as active
            step_j = rj / -step_dir[j]
            if step_j < alpha:
                alpha = step_j
                block = int(j)
        x += alpha * p
        if alpha * np.abs(p).max() > 1e-14 * (1.0 + np.abs(x).max()):
            stall = 0
        else:
            stall += 1
        if block >= 0:
            working.append(block)
            in_w[block] = True
        else:
            free_prev = True

    if status != STATUS_OPTIMAL and working:
        lam[:] = 0.0
        lam[working] = lam_w if len(lam_w) == len(working) else 0.0
    return x, lam, status, it
