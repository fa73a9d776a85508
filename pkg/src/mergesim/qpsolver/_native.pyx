# cython: language_level=3
"""Compiled active-set kernel.

Same iteration and tie-breaking as _python.solve_kernel, organized around a
range-space factorization: with H = L L' and working rows Aw, the step solves
S lam = Aw H^-1 grad and p = H^-1 (Aw' lam - grad) where S = B'B,
B = L^-1 Aw'. Adding a row extends the Cholesky factor of S by one bordered
column; dropping a row rebuilds the small factor from the retained columns.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1

cdef double STEP_TOL = 1e-10
cdef double DUAL_TOL = 1e-9
cdef double RES_TOL = 1e-13   # cancellation floor per unit of gradient scale
cdef int BLAND_AFTER = 25     # zero-progress iterations before lowest-index drops


cdef int _cholesky(double[:, ::1] a, int n) noexcept:
    """In-place lower Cholesky; returns -1 on a nonpositive pivot."""
    cdef int i, j, k
    cdef double s
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= a[j, k] * a[j, k]
        if s <= 0.0:
            return -1
        a[j, j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= a[i, k] * a[j, k]
            a[i, j] = s / a[j, j]
        for i in range(j):
            a[i, j] = 0.0
    return 0


cdef void _forward(double[:, ::1] l, double[::1] b, double[::1] out, int n) noexcept:
    cdef int i, k
    cdef double s
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= l[i, k] * out[k]
        out[i] = s / l[i, i]


cdef void _backward(double[:, ::1] l, double[::1] b, double[::1] out, int n) noexcept:
    # solves l' out = b with l lower triangular
    cdef int i, k
    cdef double s
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= l[k, i] * out[k]
        out[i] = s / l[i, i]


def solve_kernel(H, g, rows, bounds, x0, w0, max_iter):
    """Returns (x, row_multipliers, status, iterations); see _python twin."""
    cdef cnp.ndarray[double, ndim=2] h_arr = np.array(H, dtype=np.float64, order="C")
    cdef cnp.ndarray[double, ndim=1] g_arr = np.ascontiguousarray(g, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] rows_arr = np.ascontiguousarray(rows, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] bounds_arr = np.ascontiguousarray(bounds, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] x_arr = np.array(x0, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] w0_arr = np.ascontiguousarray(w0, dtype=np.int64)

    cdef int n = g_arr.shape[0]
    cdef int n_rows = rows_arr.shape[0]
    cdef int cap = int(max_iter)

    cdef cnp.ndarray[double, ndim=2] chol = h_arr.copy()
    if _cholesky(chol, n) != 0:
        raise ValueError("kernel requires a positive definite hessian")
    cdef double pivot2 = chol[0, 0]
    cdef int pi
    for pi in range(1, n):
        if chol[pi, pi] < pivot2:
            pivot2 = chol[pi, pi]
    pivot2 = pivot2 * pivot2

    cdef cnp.ndarray[double, ndim=1] lam_out = np.zeros(n_rows, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] bmat = np.zeros((n, n), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] ls = np.zeros((n, n), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] wrows = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] in_w = np.zeros(n_rows, dtype=np.uint8)

    cdef double[:, ::1] hv = h_arr
    cdef double[::1] gv = g_arr
    cdef double[:, ::1] rv = rows_arr
    cdef double[::1] bv = bounds_arr
    cdef double[::1] xv = x_arr
    cdef double[:, ::1] lv = chol
    cdef double[:, ::1] bm = bmat
    cdef double[:, ::1] lsv = ls
    cdef cnp.int64_t[::1] wr = wrows
    cdef cnp.uint8_t[::1] inw = in_w
    cdef double[::1] lamv = lam_out

    cdef cnp.ndarray[double, ndim=1] scratch = np.zeros(6 * n + 2 * n_rows, dtype=np.float64)
    cdef double[::1] grad = scratch[0:n]
    cdef double[::1] t1 = scratch[n:2 * n]
    cdef double[::1] work1 = scratch[2 * n:3 * n]
    cdef double[::1] work2 = scratch[3 * n:4 * n]
    cdef double[::1] lam_w = scratch[4 * n:5 * n]
    cdef double[::1] pvec = scratch[5 * n:6 * n]
    cdef double[::1] dirs = scratch[6 * n:6 * n + n_rows]
    cdef double[::1] resid = scratch[6 * n + n_rows:6 * n + 2 * n_rows]

    cdef int k = 0
    cdef int it = 0
    cdef int stall = 0
    # a full unblocked step lands exactly on the working-set stationary
    # point; the next pass goes straight to the dual check since any new
    # step it computes is roundoff
    cdef int free_prev = 0
    cdef int status = STATUS_MAX_ITER
    cdef int i, j, q, c, drop_pos, block
    cdef cnp.int64_t jj
    cdef double s, dsq, vv, pmax, xmax, gmax, lmax, alpha, step_j, rj, dir_tol, drop_val

    # seed the working set; the bordered update rejects dependent rows
    for i in range(w0_arr.shape[0]):
        jj = w0_arr[i]
        if inw[jj] or k >= n:
            continue
        if _try_add(rv, lv, bm, lsv, work1, work2, jj, k, n) == 0:
            wr[k] = jj
            inw[jj] = 1
            k += 1

    while it < cap:
        it += 1
        gmax = 0.0
        for i in range(n):
            s = gv[i]
            for j in range(n):
                s += hv[i, j] * xv[j]
            grad[i] = s
            if s > gmax:
                gmax = s
            elif -s > gmax:
                gmax = -s
        _forward(lv, grad, t1, n)

        if k > 0:
            # lam solves (B'B) lam = B' t1
            for q in range(k):
                s = 0.0
                for i in range(n):
                    s += bm[i, q] * t1[i]
                work1[q] = s
            _forward(lsv, work1, work2, k)
            _backward(lsv, work2, lam_w, k)
            for i in range(n):
                s = -t1[i]
                for q in range(k):
                    s += bm[i, q] * lam_w[q]
                work1[i] = s
            _backward(lv, work1, pvec, n)
        else:
            for i in range(n):
                work1[i] = -t1[i]
            _backward(lv, work1, pvec, n)

        pmax = 0.0
        xmax = 0.0
        for i in range(n):
            if pvec[i] > pmax:
                pmax = pvec[i]
            elif -pvec[i] > pmax:
                pmax = -pvec[i]
            if xv[i] > xmax:
                xmax = xv[i]
            elif -xv[i] > xmax:
                xmax = -xv[i]

        if free_prev or pmax <= STEP_TOL * (1.0 + xmax) + RES_TOL * gmax / pivot2:
            free_prev = 0
            lmax = 0.0
            for q in range(k):
                if lam_w[q] > lmax:
                    lmax = lam_w[q]
                elif -lam_w[q] > lmax:
                    lmax = -lam_w[q]
            # most negative multiplier, lowest row index on ties; after a
            # stall streak, lowest violating index breaks cycles
            drop_pos = -1
            drop_val = -DUAL_TOL * (1.0 + lmax)
            if stall > BLAND_AFTER:
                for q in range(k):
                    if lam_w[q] < drop_val and (
                        drop_pos < 0 or wr[q] < wr[drop_pos]
                    ):
                        drop_pos = q
            else:
                for q in range(k):
                    if lam_w[q] < drop_val or (
                        lam_w[q] == drop_val and drop_pos >= 0 and wr[q] < wr[drop_pos]
                    ):
                        drop_val = lam_w[q]
                        drop_pos = q
            if drop_pos < 0:
                for j in range(n_rows):
                    lamv[j] = 0.0
                for q in range(k):
                    lamv[wr[q]] = lam_w[q]
                status = STATUS_OPTIMAL
                break
            inw[wr[drop_pos]] = 0
            k = _rebuild(rv, lv, bm, lsv, wr, inw, work1, work2, drop_pos, k, n)
            stall += 1
            continue

        dir_tol = -1e-12 * (1.0 + pmax)
        alpha = 1.0
        block = -1
        for j in range(n_rows):
            s = 0.0
            for i in range(n):
                s += rv[j, i] * pvec[i]
            dirs[j] = s
            s = -bv[j]
            for i in range(n):
                s += rv[j, i] * xv[i]
            resid[j] = s
        for j in range(n_rows):
            if inw[j] or dirs[j] >= dir_tol:
                continue
            rj = resid[j]
            if rj < 0.0:
                rj = 0.0
            step_j = rj / (-dirs[j])
            if step_j < alpha:
                alpha = step_j
                block = j
        xmax = 0.0
        for i in range(n):
            xv[i] += alpha * pvec[i]
            if xv[i] > xmax:
                xmax = xv[i]
            elif -xv[i] > xmax:
                xmax = -xv[i]
        if alpha * pmax > 1e-14 * (1.0 + xmax):
            stall = 0
        else:
            stall += 1
        if block >= 0:
            if k < n and _try_add(rv, lv, bm, lsv, work1, work2, block, k, n) == 0:
                wr[k] = block
                inw[block] = 1
                k += 1
        else:
            free_prev = 1

    return x_arr, lam_out, status, it


cdef int _try_add(
    double[:, ::1] rv,
    double[:, ::1] lv,
    double[:, ::1] bm,
    double[:, ::1] lsv,
    double[::1] vbuf,
    double[::1] wbuf,
    cnp.int64_t row,
    int k,
    int n,
) noexcept:
    """Border the factors with one row; returns -1 if nearly dependent."""
    cdef int i, q
    cdef double s, vv, dsq
    for i in range(n):
        vbuf[i] = rv[row, i]
    # forward solve in place: vbuf = L^-1 a_row
    for i in range(n):
        s = vbuf[i]
        for q in range(i):
            s -= lv[i, q] * vbuf[q]
        vbuf[i] = s / lv[i, i]
    vv = 0.0
    for i in range(n):
        vv += vbuf[i] * vbuf[i]
    dsq = vv
    if k > 0:
        for q in range(k):
            s = 0.0
            for i in range(n):
                s += bm[i, q] * vbuf[i]
            wbuf[q] = s
        for q in range(k):
            s = wbuf[q]
            for i in range(q):
                s -= lsv[q, i] * wbuf[i]
            wbuf[q] = s / lsv[q, q]
        for q in range(k):
            dsq -= wbuf[q] * wbuf[q]
    if dsq <= 1e-12 * (1.0 + vv):
        return -1
    for i in range(n):
        bm[i, k] = vbuf[i]
    for q in range(k):
        lsv[k, q] = wbuf[q]
    lsv[k, k] = sqrt(dsq)
    return 0


cdef int _rebuild(
    double[:, ::1] rv,
    double[:, ::1] lv,
    double[:, ::1] bm,
    double[:, ::1] lsv,
    cnp.int64_t[::1] wr,
    cnp.uint8_t[::1] inw,
    double[::1] vbuf,
    double[::1] wbuf,
    int pos,
    int k,
    int n,
) noexcept:
    """Drop working-set position pos and refactor from the rows themselves;
    a retained row that roundoff has made dependent is dropped too."""
    cdef int q, kk = 0
    cdef cnp.int64_t row
    for q in range(pos, k - 1):
        wr[q] = wr[q + 1]
    k -= 1
    for q in range(k):
        row = wr[q]
        if _try_add(rv, lv, bm, lsv, vbuf, wbuf, row, kk, n) == 0:
            wr[kk] = row
            kk += 1
        else:
            inw[row] = 0
    return kk
