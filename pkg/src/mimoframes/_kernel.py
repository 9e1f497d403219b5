"""Compiled inner loop for the bounded-variable simplex.

Mirrors the vectorized implementation in milp.py exactly (same pivoting
rules, tolerances and tie-breaks) but as tight loops that numba compiles to
machine code. When numba is unavailable the pure-numpy path in milp.py is
used instead; results are identical either way, only speed differs.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


BASIC, AT_LOWER, AT_UPPER, FREE = 0, 1, 2, 3
K_OPTIMAL, K_INFEASIBLE, K_UNBOUNDED, K_NUMERICAL = 0, 1, 2, 3

INF = np.inf


@njit(cache=True)
def _refactor(AT, b, x, vstat, basis, Binv):
    """Rebuild the inverse from basis columns; recompute basic values."""
    m = b.shape[0]
    n = AT.shape[0]
    B = np.zeros((m, m))
    for i in range(m):
        j = basis[i]
        if j < n:
            for r in range(m):
                B[r, i] = AT[j, r]
        else:
            B[j - n, i] = 1.0
    det_ok = True
    Bi = np.linalg.inv(B)
    for i in range(m):
        for t in range(m):
            v = Bi[i, t]
            if not np.isfinite(v):
                det_ok = False
    if not det_ok:
        return False
    for i in range(m):
        for t in range(m):
            Binv[i, t] = Bi[i, t]
    # basic values: x_B = Binv @ (b - sum of nonbasic columns * values)
    rhs = b.copy()
    for j in range(n):
        if vstat[j] != BASIC and x[j] != 0.0:
            xj = x[j]
            for r in range(m):
                rhs[r] -= AT[j, r] * xj
    for i in range(m):
        j = n + i
        if vstat[j] != BASIC and x[j] != 0.0:
            rhs[i] -= x[j]
    xb = Binv @ rhs
    for i in range(m):
        x[basis[i]] = xb[i]
    return True


@njit(cache=True)
def _duals(c, basis, Binv):
    m = basis.shape[0]
    cb = np.empty(m)
    for i in range(m):
        cb[i] = c[basis[i]]
    return cb @ Binv


@njit(cache=True)
def _choose_entering(AT, c, lo, hi, vstat, y, dj_tol, bland):
    """Best (or first, under Bland) improving nonbasic column."""
    n, m = AT.shape
    dA = AT @ y
    best = -1
    best_score = dj_tol
    direction = 0.0
    for j in range(n + m):
        s = vstat[j]
        if s == BASIC:
            continue
        if lo[j] == hi[j]:
            continue
        if j < n:
            dj = c[j] - dA[j]
        else:
            dj = c[j] - y[j - n]
        if s == AT_LOWER:
            sc = -dj
            dr = 1.0
        elif s == AT_UPPER:
            sc = dj
            dr = -1.0
        else:
            sc = abs(dj)
            dr = 1.0 if dj < 0 else -1.0
        if sc > best_score:
            best = j
            best_score = sc
            direction = dr
            if bland:
                break
    return best, direction


@njit(cache=True)
def _ftran(AT, Binv, q):
    n, m = AT.shape
    if q < n:
        return Binv @ AT[q]
    w = np.empty(m)
    for i in range(m):
        w[i] = Binv[i, q - n]
    return w


@njit(cache=True)
def _step(AT, b, c, lo, hi, x, vstat, basis, Binv, q, direction, phase1, ftol, piv_tol, pivots):
    """One ratio-tested move of entering column q; mirrors milp._Simplex._step.

    Returns 1 on success, 0 for numerical trouble, -1 for unbounded.
    """
    n, m = AT.shape
    w = _ftran(AT, Binv, q)
    t_best = INF
    r_best = -1
    r_at_lower = False
    for i in range(m):
        rate = -direction * w[i]
        if rate > piv_tol:
            xi = x[basis[i]]
            lob = lo[basis[i]]
            hib = hi[basis[i]]
            if phase1 and xi < lob - ftol:
                ti = (lob - xi) / rate
                to_lower = True
            elif np.isfinite(hib) and not (phase1 and xi > hib + ftol):
                ti = (hib - xi) / rate
                to_lower = False
            else:
                continue
            if ti < 0.0:
                ti = 0.0
            if ti < t_best:
                t_best = ti
                r_best = i
                r_at_lower = to_lower
        elif rate < -piv_tol:
            xi = x[basis[i]]
            lob = lo[basis[i]]
            hib = hi[basis[i]]
            if phase1 and xi > hib + ftol:
                ti = (hib - xi) / rate
                to_lower = False
            elif np.isfinite(lob) and not (phase1 and xi < lob - ftol):
                ti = (lob - xi) / rate
                to_lower = True
            else:
                continue
            if ti < 0.0:
                ti = 0.0
            if ti < t_best:
                t_best = ti
                r_best = i
                r_at_lower = to_lower
    if direction > 0:
        t_self = hi[q] - x[q]
    else:
        t_self = x[q] - lo[q]
    if not np.isfinite(t_self):
        t_self = INF

    if t_self <= t_best:
        if not np.isfinite(t_self):
            return 0 if phase1 else -1
        for i in range(m):
            x[basis[i]] -= direction * t_self * w[i]
        x[q] += direction * t_self
        vstat[q] = AT_UPPER if direction > 0 else AT_LOWER
        return 1

    if r_best < 0:
        return 0 if phase1 else -1
    if abs(w[r_best]) <= piv_tol:
        return 2  # ask caller to refactor and retry

    t = t_best
    for i in range(m):
        x[basis[i]] -= direction * t * w[i]
    x[q] += direction * t
    leaving = basis[r_best]
    x[leaving] = lo[leaving] if r_at_lower else hi[leaving]
    vstat[leaving] = AT_LOWER if r_at_lower else AT_UPPER
    vstat[q] = BASIC
    basis[r_best] = q

    wr = w[r_best]
    piv = Binv[r_best] / wr
    for i in range(m):
        if i == r_best:
            continue
        wi = w[i]
        if wi != 0.0:
            for tcol in range(m):
                Binv[i, tcol] -= wi * piv[tcol]
    for tcol in range(m):
        Binv[r_best, tcol] = piv[tcol]
    pivots[0] += 1
    return 1


@njit(cache=True)
def _phase1_cost_and_viol(x, lo, hi, basis, ftol, c1):
    m = basis.shape[0]
    viol = 0.0
    for i in range(c1.shape[0]):
        c1[i] = 0.0
    for i in range(m):
        j = basis[i]
        xj = x[j]
        if xj < lo[j] - ftol:
            c1[j] = -1.0
            viol += lo[j] - xj
        elif xj > hi[j] + ftol:
            c1[j] = 1.0
            viol += xj - hi[j]
    return viol


@njit(cache=True)
def solve_kernel(
    AT, b, c, lo, hi, x, vstat, basis, Binv,
    max_iter, ftol, dj_tol, piv_tol, stall_limit, refactor_every,
):
    """Two-phase primal simplex; returns (status, iterations).

    Ends with a refactorized, re-verified optimal basis (up to four
    polish rounds), matching milp._Simplex.solve.
    """
    n, m = AT.shape
    iters = 0
    pivots = np.zeros(1, dtype=np.int64)
    c1 = np.zeros(n + m)
    thresh = ftol * (1.0 + np.sqrt(m))

    for _ in range(4):
        # phase 1
        stall = 0
        last_viol = INF
        while True:
            viol = _phase1_cost_and_viol(x, lo, hi, basis, ftol, c1)
            if viol <= thresh:
                break
            if iters >= max_iter:
                return K_NUMERICAL, iters
            if viol < last_viol - 1e-12:
                stall = 0
            else:
                stall += 1
            last_viol = viol
            bland = stall > stall_limit
            y = _duals(c1, basis, Binv)
            q, direction = _choose_entering(AT, c1, lo, hi, vstat, y, dj_tol, bland)
            if q < 0:
                return K_INFEASIBLE, iters
            iters += 1
            rc = _step(AT, b, c, lo, hi, x, vstat, basis, Binv, q, direction, True, ftol, piv_tol, pivots)
            if rc == 0:
                return K_NUMERICAL, iters
            if rc == 2 or pivots[0] >= refactor_every:
                pivots[0] = 0
                if not _refactor(AT, b, x, vstat, basis, Binv):
                    return K_NUMERICAL, iters

        # phase 2
        stall = 0
        last_obj = INF
        while True:
            if iters >= max_iter:
                return K_NUMERICAL, iters
            obj = 0.0
            for j in range(n + m):
                if c[j] != 0.0:
                    obj += c[j] * x[j]
            if obj < last_obj - 1e-12 * (1.0 + abs(last_obj)):
                stall = 0
            else:
                stall += 1
            last_obj = obj
            bland = stall > stall_limit
            y = _duals(c, basis, Binv)
            q, direction = _choose_entering(AT, c, lo, hi, vstat, y, dj_tol, bland)
            if q < 0:
                break
            iters += 1
            rc = _step(AT, b, c, lo, hi, x, vstat, basis, Binv, q, direction, False, ftol, piv_tol, pivots)
            if rc == -1:
                return K_UNBOUNDED, iters
            if rc == 0:
                return K_NUMERICAL, iters
            if rc == 2 or pivots[0] >= refactor_every:
                pivots[0] = 0
                if not _refactor(AT, b, x, vstat, basis, Binv):
                    return K_NUMERICAL, iters

        # verify on a fresh factorization before trusting the optimum
        if not _refactor(AT, b, x, vstat, basis, Binv):
            return K_NUMERICAL, iters
        viol = _phase1_cost_and_viol(x, lo, hi, basis, ftol, c1)
        if viol > thresh:
            continue
        y = _duals(c, basis, Binv)
        q, _ = _choose_entering(AT, c, lo, hi, vstat, y, dj_tol, False)
        if q < 0:
            return K_OPTIMAL, iters
    return K_NUMERICAL, iters
