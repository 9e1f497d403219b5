"""Self-contained LP/MIP solver used by the master, pricing and frame problems.

The LP engine is a dense bounded-variable revised simplex with an explicit
basis inverse, two phases (sum-of-infeasibilities phase 1), Dantzig pricing
with a Bland's-rule fallback when cycling is suspected, and row/column
equilibration. Duals come straight from the final basis. The MIP engine is a
depth-first branch-and-bound on top of it, diving in place and warm-starting
child nodes from the parent basis.

Problem sizes here are desk scale (hundreds of rows and columns), which a
dense inverse handles comfortably; determinism is favoured over speed
everywhere (fixed tie-breaks, no randomized perturbation).

An adapter protocol at the bottom lets a drop-in external solver replace the
built-in engine behind the same data types; the built-in engine is the
default.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from . import _kernel

INF = float("inf")

# Default tolerances: primal feasibility after row scaling, reduced-cost
# optimality, and integrality snapping.
FEAS_TOL = 1e-7
DJ_TOL = 1e-9
PIV_TOL = 1e-9
INT_TOL = 1e-6


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL = "numerical"


class MipStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    TIMEOUT = "timeout"
    NUMERICAL = "numerical"
    CUTOFF = "cutoff"  # proven: no solution better than the supplied cutoff


class RowSense(Enum):
    LE = "<="
    GE = ">="
    EQ = "="


@dataclass
class LinearProgram:
    """min/max obj @ x subject to row senses and variable bounds (dense)."""

    obj: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: np.ndarray
    senses: list[RowSense]
    rhs: np.ndarray
    maximize: bool = False
    var_names: Optional[list[str]] = None
    row_names: Optional[list[str]] = None

    @property
    def num_vars(self) -> int:
        return self.obj.shape[0]

    @property
    def num_rows(self) -> int:
        return self.rhs.shape[0]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.obj)):
            raise ValueError("objective coefficients must be finite")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("constraint coefficients must be finite")
        if not np.all(np.isfinite(self.rhs)):
            raise ValueError("right-hand sides must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("bounds may be infinite but not NaN")
        if np.any(self.lb > self.ub):
            raise ValueError("found lower bound above upper bound")
        if np.any(self.lb == INF) or np.any(self.ub == -INF):
            raise ValueError("bounds of +inf below / -inf above are not meaningful")
        if self.A.shape != (self.num_rows, self.num_vars):
            raise ValueError("A shape mismatch")


@dataclass
class LpSolution:
    status: LpStatus
    x: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    obj: float = math.nan
    iterations: int = 0
    basis: Optional[tuple[np.ndarray, np.ndarray]] = None  # (basis, vstat)

    def dual_objective(self, lp: LinearProgram) -> float:
        """b'y plus the reduced-cost contribution of nonbasic bounds.

        Equals the primal objective at an optimal basis (strong duality for
        bounded-variable LPs).
        """
        if self.duals is None or self.reduced_costs is None:
            return math.nan
        val = float(self.duals @ lp.rhs)
        d = self.reduced_costs
        sign = -1.0 if lp.maximize else 1.0
        dmin = sign * d  # minimization-convention reduced costs
        for j in range(lp.num_vars):
            if dmin[j] > DJ_TOL and np.isfinite(lp.lb[j]):
                val += d[j] * lp.lb[j]
            elif dmin[j] < -DJ_TOL and np.isfinite(lp.ub[j]):
                val += d[j] * lp.ub[j]
        return val


@dataclass
class MipProblem:
    lp: LinearProgram
    integer: np.ndarray  # bool mask per variable

    def validate(self) -> None:
        self.lp.validate()
        if self.integer.shape != (self.lp.num_vars,):
            raise ValueError("integer mask shape mismatch")


@dataclass
class MipOptions:
    time_limit_s: Optional[float] = None
    integrality_tol: float = INT_TOL
    abs_gap: float = 0.0
    objective_integral: bool = False
    max_nodes: Optional[int] = None
    cutoff: Optional[float] = None  # only solutions strictly better matter
    start: Optional[np.ndarray] = None  # warm incumbent (checked before use)
    node_order: str = "dfs-best"  # "dfs-best": best bound after 1st incumbent
    log: Optional[Callable[[str], None]] = None


@dataclass
class MipSolution:
    status: MipStatus
    x: Optional[np.ndarray] = None
    obj: float = math.nan
    bound: float = math.nan
    gap: float = math.nan
    nodes: int = 0


# --- builder -----------------------------------------------------------------


class LpBuilder:
    """Incremental construction of a LinearProgram/MipProblem."""

    def __init__(self, maximize: bool = False):
        self.maximize = maximize
        self._obj: list[float] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._int: list[bool] = []
        self._names: list[str] = []
        self._rows: list[dict[int, float]] = []
        self._senses: list[RowSense] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []

    def add_var(
        self,
        lb: float = 0.0,
        ub: float = INF,
        obj: float = 0.0,
        integer: bool = False,
        name: str = "",
    ) -> int:
        self._obj.append(obj)
        self._lb.append(lb)
        self._ub.append(ub)
        self._int.append(integer)
        self._names.append(name or f"x{len(self._obj) - 1}")
        return len(self._obj) - 1

    def add_row(
        self, coeffs: dict[int, float], sense: RowSense, rhs: float, name: str = ""
    ) -> int:
        self._rows.append(dict(coeffs))
        self._senses.append(sense)
        self._rhs.append(rhs)
        self._row_names.append(name or f"r{len(self._rows) - 1}")
        return len(self._rows) - 1

    @property
    def num_vars(self) -> int:
        return len(self._obj)

    def build_lp(self) -> LinearProgram:
        n = len(self._obj)
        m = len(self._rows)
        A = np.zeros((m, n))
        for i, row in enumerate(self._rows):
            for j, v in row.items():
                A[i, j] = v
        lp = LinearProgram(
            obj=np.asarray(self._obj, dtype=float),
            lb=np.asarray(self._lb, dtype=float),
            ub=np.asarray(self._ub, dtype=float),
            A=A,
            senses=list(self._senses),
            rhs=np.asarray(self._rhs, dtype=float),
            maximize=self.maximize,
            var_names=list(self._names),
            row_names=list(self._row_names),
        )
        lp.validate()
        return lp

    def build_mip(self) -> MipProblem:
        prob = MipProblem(lp=self.build_lp(), integer=np.asarray(self._int, dtype=bool))
        prob.validate()
        return prob


# --- scaling -----------------------------------------------------------------


def _row_scales(A: np.ndarray) -> np.ndarray:
    """Per-row divisors equilibrating the largest absolute entry to 1."""
    mx = np.max(np.abs(A), axis=1)
    mx[mx == 0] = 1.0
    return mx


# --- simplex core ------------------------------------------------------------

_BASIC, _AT_LOWER, _AT_UPPER, _FREE = 0, 1, 2, 3


class _Simplex:
    """Bounded-variable revised simplex over rows A x + s = b.

    Slack s_i carries the row sense: [0, inf) for <=, (-inf, 0] for >=, and
    [0, 0] for =. Columns 0..n-1 are structural, n..n+m-1 the unit slack
    columns. The basis inverse is dense and updated by elementary row
    operations with periodic refactorization.
    """

    REFACTOR_EVERY = 150
    STALL_LIMIT = 60

    def __init__(self, lp: LinearProgram, row_scale: Optional[np.ndarray] = None):
        m, n = lp.num_rows, lp.num_vars
        self.m, self.n = m, n
        scale = row_scale if row_scale is not None else np.ones(m)
        self.A = lp.A / scale[:, None]
        self.AT = np.ascontiguousarray(self.A.T)
        self.b = lp.rhs / scale
        self.row_scale = scale
        self.sign = -1.0 if lp.maximize else 1.0
        self.c = np.concatenate([self.sign * lp.obj, np.zeros(m)])
        lo = np.concatenate([lp.lb, np.zeros(m)])
        hi = np.concatenate([lp.ub, np.zeros(m)])
        for i, s in enumerate(lp.senses):
            if s is RowSense.LE:
                hi[n + i] = INF
            elif s is RowSense.GE:
                lo[n + i] = -INF
        self.lo, self.hi = lo, hi
        self.x = np.zeros(n + m)
        self.vstat = np.empty(n + m, dtype=np.int8)
        self.basis = np.arange(n, n + m)
        self.Binv = np.eye(m)
        self.iterations = 0
        self._pivots_since_refactor = 0
        self._set_default_nonbasic()

    # -- state management

    def _set_default_nonbasic(self) -> None:
        for j in range(self.n):
            if np.isfinite(self.lo[j]):
                self.vstat[j] = _AT_LOWER
                self.x[j] = self.lo[j]
            elif np.isfinite(self.hi[j]):
                self.vstat[j] = _AT_UPPER
                self.x[j] = self.hi[j]
            else:
                self.vstat[j] = _FREE
                self.x[j] = 0.0
        self.vstat[self.n:] = _BASIC
        self.basis = np.arange(self.n, self.n + self.m)
        self.Binv = np.eye(self.m)
        self._recompute_basics()

    def load_basis(self, basis: np.ndarray, vstat: np.ndarray) -> bool:
        """Adopt an externally saved basis; returns False if it is singular."""
        B = self._column_block(basis)
        try:
            Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(Binv)):
            return False
        self.basis = basis.copy()
        self.vstat = vstat.copy()
        self.Binv = Binv
        nb = self.vstat != _BASIC
        idx = np.where(nb)[0]
        for j in idx:
            if self.vstat[j] == _AT_LOWER:
                self.x[j] = self.lo[j]
            elif self.vstat[j] == _AT_UPPER:
                self.x[j] = self.hi[j]
            else:
                self.x[j] = 0.0
        self._recompute_basics()
        return True

    def save_basis(self) -> tuple[np.ndarray, np.ndarray]:
        return self.basis.copy(), self.vstat.copy()

    def set_bound(self, j: int, lo: float, hi: float) -> None:
        """Tighten/replace bounds of structural variable j (branching)."""
        self.lo[j], self.hi[j] = lo, hi
        if self.vstat[j] == _BASIC:
            return
        if self.vstat[j] == _AT_LOWER:
            target = lo if np.isfinite(lo) else (hi if np.isfinite(hi) else 0.0)
        elif self.vstat[j] == _AT_UPPER:
            target = hi if np.isfinite(hi) else (lo if np.isfinite(lo) else 0.0)
        else:
            target = 0.0
        delta = target - self.x[j]
        if delta != 0.0:
            self.x[self.basis] -= delta * (self.Binv @ self._column(j))
            self.x[j] = target
        if np.isfinite(lo) and abs(self.x[j] - lo) <= 1e-12:
            self.vstat[j] = _AT_LOWER
        elif np.isfinite(hi) and abs(self.x[j] - hi) <= 1e-12:
            self.vstat[j] = _AT_UPPER
        else:
            self.vstat[j] = _FREE

    def _column(self, j: int) -> np.ndarray:
        if j < self.n:
            return self.A[:, j]
        col = np.zeros(self.m)
        col[j - self.n] = 1.0
        return col

    def _column_block(self, idxs: np.ndarray) -> np.ndarray:
        B = np.zeros((self.m, len(idxs)))
        struct = idxs < self.n
        B[:, struct] = self.A[:, idxs[struct]]
        for pos in np.where(~struct)[0]:
            B[idxs[pos] - self.n, pos] = 1.0
        return B

    def _recompute_basics(self) -> None:
        rhs = self.b.copy()
        nb = np.where(self.vstat[: self.n] != _BASIC)[0]
        vals = self.x[nb]
        nz = vals != 0.0
        if np.any(nz):
            rhs -= self.A[:, nb[nz]] @ vals[nz]
        for i in range(self.m):
            j = self.n + i
            if self.vstat[j] != _BASIC and self.x[j] != 0.0:
                rhs[i] -= self.x[j]
        self.x[self.basis] = self.Binv @ rhs

    def _refactor(self) -> bool:
        B = self._column_block(self.basis)
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        self._recompute_basics()
        self._pivots_since_refactor = 0
        return True

    # -- pricing helpers

    def _duals_for(self, cvec: np.ndarray) -> np.ndarray:
        return cvec[self.basis] @ self.Binv

    def _reduced_costs(self, cvec: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = cvec.copy()
        d[: self.n] -= y @ self.A
        d[self.n:] -= y
        return d

    def _phase1_cost(self, ftol: float) -> tuple[np.ndarray, float]:
        c1 = np.zeros(self.n + self.m)
        xb = self.x[self.basis]
        below = xb < self.lo[self.basis] - ftol
        above = xb > self.hi[self.basis] + ftol
        c1[self.basis[below]] = -1.0
        c1[self.basis[above]] = 1.0
        viol = float(
            np.sum((self.lo[self.basis] - xb)[below]) + np.sum((xb - self.hi[self.basis])[above])
        )
        return c1, viol

    # -- main loops

    def solve(self, max_iter: int = 50000, ftol: float = 1e-9) -> LpStatus:
        self.iterations = 0  # per-solve budget; warm restarts start afresh
        if _kernel.HAVE_NUMBA:
            try:
                code, iters = _kernel.solve_kernel(
                    self.AT, self.b, self.c, self.lo, self.hi,
                    self.x, self.vstat, self.basis, self.Binv,
                    max_iter, ftol, DJ_TOL, PIV_TOL, self.STALL_LIMIT, self.REFACTOR_EVERY,
                )
            except Exception:  # singular refactorization raises inside numba
                return LpStatus.NUMERICAL
            self.iterations = int(iters)
            return (
                LpStatus.OPTIMAL,
                LpStatus.INFEASIBLE,
                LpStatus.UNBOUNDED,
                LpStatus.NUMERICAL,
            )[code]
        for _ in range(4):
            status = self._phase1(max_iter, ftol)
            if status is not LpStatus.OPTIMAL:
                return status
            status = self._phase2(max_iter, ftol)
            if status is not LpStatus.OPTIMAL:
                return status
            # Rebuild the inverse and basic values before trusting the
            # optimum: drift accumulated over pivots can hide residual
            # infeasibility or an eligible entering column.
            if not self._refactor():
                return LpStatus.NUMERICAL
            _, viol = self._phase1_cost(ftol)
            if viol > ftol * (1.0 + math.sqrt(self.m)):
                continue
            y = self._duals_for(self.c)
            d = self._reduced_costs(self.c, y)
            q, _ = self._choose_entering(d, bland=False)
            if q < 0:
                return LpStatus.OPTIMAL
        return LpStatus.NUMERICAL

    def _phase1(self, max_iter: int, ftol: float) -> LpStatus:
        stall = 0
        last_viol = INF
        while True:
            c1, viol = self._phase1_cost(ftol)
            if viol <= ftol * (1.0 + math.sqrt(self.m)):
                return LpStatus.OPTIMAL
            if self.iterations >= max_iter:
                return LpStatus.NUMERICAL
            if viol < last_viol - 1e-12:
                stall = 0
            else:
                stall += 1
            last_viol = viol
            bland = stall > self.STALL_LIMIT
            y = self._duals_for(c1)
            d = self._reduced_costs(c1, y)
            q, direction = self._choose_entering(d, bland)
            if q < 0:
                # No improving direction: the remaining infeasibility is real.
                return LpStatus.INFEASIBLE
            ok = self._step(q, direction, phase1=True, ftol=ftol)
            if not ok:
                return LpStatus.NUMERICAL

    def _phase2(self, max_iter: int, ftol: float) -> LpStatus:
        stall = 0
        last_obj = INF
        while True:
            if self.iterations >= max_iter:
                return LpStatus.NUMERICAL
            obj = float(self.c @ self.x)
            if obj < last_obj - 1e-12 * (1.0 + abs(last_obj)):
                stall = 0
            else:
                stall += 1
            last_obj = obj
            bland = stall > self.STALL_LIMIT
            y = self._duals_for(self.c)
            d = self._reduced_costs(self.c, y)
            q, direction = self._choose_entering(d, bland)
            if q < 0:
                return LpStatus.OPTIMAL
            ok = self._step(q, direction, phase1=False, ftol=ftol)
            if ok is None:
                return LpStatus.UNBOUNDED
            if not ok:
                return LpStatus.NUMERICAL

    def _choose_entering(self, d: np.ndarray, bland: bool) -> tuple[int, float]:
        """Return (entering column, +1/-1 direction of its move), or (-1, 0)."""
        fixed = self.lo == self.hi
        score = np.zeros(self.n + self.m)
        at_lo = (self.vstat == _AT_LOWER) & ~fixed
        at_hi = (self.vstat == _AT_UPPER) & ~fixed
        free = self.vstat == _FREE
        score[at_lo] = -d[at_lo]
        score[at_hi] = d[at_hi]
        score[free] = np.abs(d[free])
        eligible = score > DJ_TOL
        if not np.any(eligible):
            return -1, 0.0
        if bland:
            q = int(np.argmax(eligible))  # lowest eligible index
        else:
            q = int(np.argmax(np.where(eligible, score, -INF)))
        if self.vstat[q] == _AT_LOWER:
            return q, 1.0
        if self.vstat[q] == _AT_UPPER:
            return q, -1.0
        return q, (1.0 if d[q] < 0 else -1.0)

    def _step(self, q: int, direction: float, phase1: bool, ftol: float):
        """One pivot or bound flip; True on success, None for unbounded."""
        w = self.Binv @ self._column(q)
        rate = -direction * w  # d(x_B)/dt for entering step t >= 0
        xb = self.x[self.basis]
        lo_b = self.lo[self.basis]
        hi_b = self.hi[self.basis]

        block_t = np.full(self.m, INF)
        block_at_lower = np.zeros(self.m, dtype=bool)
        up = rate > PIV_TOL
        dn = rate < -PIV_TOL
        if phase1:
            below = xb < lo_b - ftol
            above = xb > hi_b + ftol
            inside = ~below & ~above
            # Feasible basics block at the bound they move toward; infeasible
            # ones block where they re-enter their range (gradient break).
            sel = up & inside & np.isfinite(hi_b)
            block_t[sel] = (hi_b[sel] - xb[sel]) / rate[sel]
            sel = up & below
            block_t[sel] = (lo_b[sel] - xb[sel]) / rate[sel]
            block_at_lower[sel] = True
            sel = dn & inside & np.isfinite(lo_b)
            block_t[sel] = (lo_b[sel] - xb[sel]) / rate[sel]
            block_at_lower[sel] = True
            sel = dn & above
            block_t[sel] = (hi_b[sel] - xb[sel]) / rate[sel]
        else:
            sel = up & np.isfinite(hi_b)
            block_t[sel] = (hi_b[sel] - xb[sel]) / rate[sel]
            sel = dn & np.isfinite(lo_b)
            block_t[sel] = (lo_b[sel] - xb[sel]) / rate[sel]
            block_at_lower[sel] = True
        block_t = np.maximum(block_t, 0.0)

        r = int(np.argmin(block_t))
        t_basic = block_t[r]
        if direction > 0:
            t_self = self.hi[q] - self.x[q]
        else:
            t_self = self.x[q] - self.lo[q]
        if not np.isfinite(t_self):
            t_self = INF

        t = min(t_basic, t_self)
        if not np.isfinite(t):
            if phase1:
                return False
            return None

        self.iterations += 1
        if t_self <= t_basic:
            # Bound flip: entering variable traverses to its opposite bound.
            self.x[self.basis] = xb - direction * t_self * w
            self.x[q] += direction * t_self
            self.vstat[q] = _AT_UPPER if direction > 0 else _AT_LOWER
            return True

        if abs(w[r]) <= PIV_TOL:
            return self._refactor()

        self.x[self.basis] = xb - direction * t * w
        self.x[q] += direction * t
        leaving = self.basis[r]
        self.x[leaving] = lo_b[r] if block_at_lower[r] else hi_b[r]
        self.vstat[leaving] = _AT_LOWER if block_at_lower[r] else _AT_UPPER
        self.vstat[q] = _BASIC
        self.basis[r] = q

        piv_row = self.Binv[r] / w[r]
        corr = np.outer(w, piv_row)
        corr[r] = self.Binv[r] - piv_row
        self.Binv -= corr
        self._pivots_since_refactor += 1
        if self._pivots_since_refactor >= self.REFACTOR_EVERY:
            if not self._refactor():
                return False
        return True

    # -- extraction

    def solution(self, lp: LinearProgram) -> LpSolution:
        y = self._duals_for(self.c)
        d = self._reduced_costs(self.c, y)
        duals = self.sign * (y / self.row_scale)
        x = self.x[: self.n].copy()
        obj = float(lp.obj @ x)
        return LpSolution(
            status=LpStatus.OPTIMAL,
            x=x,
            duals=duals,
            reduced_costs=self.sign * d[: self.n],
            obj=obj,
            iterations=self.iterations,
            basis=self.save_basis(),
        )


def solve_lp(
    lp: LinearProgram,
    max_iter: int = 50000,
    warm_basis: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> LpSolution:
    """Solve a linear program with the built-in simplex engine.

    ``warm_basis`` (basis, vstat arrays as returned in LpSolution.basis,
    matching this program's variable count) seeds the solve; an unusable
    basis silently falls back to a cold start.
    """
    lp.validate()
    sx = _Simplex(lp, row_scale=_row_scales(lp.A))
    if warm_basis is not None:
        basis, vstat = warm_basis
        if len(vstat) == lp.num_vars + lp.num_rows and not sx.load_basis(basis, vstat):
            sx._set_default_nonbasic()
    status = sx.solve(max_iter=max_iter)
    if status is not LpStatus.OPTIMAL and warm_basis is not None:
        sx._set_default_nonbasic()
        status = sx.solve(max_iter=max_iter)
    if status is not LpStatus.OPTIMAL:
        return LpSolution(status=status, iterations=sx.iterations)
    sol = sx.solution(lp)
    resid = primal_residual(lp, sol.x)
    if resid > FEAS_TOL * 10:
        return LpSolution(status=LpStatus.NUMERICAL, iterations=sx.iterations)
    return sol


def primal_residual(lp: LinearProgram, x: np.ndarray) -> float:
    """Max scaled violation of rows and bounds at x."""
    scale = _row_scales(lp.A)
    ax = lp.A @ x
    resid = 0.0
    for i, s in enumerate(lp.senses):
        gap = (ax[i] - lp.rhs[i]) / scale[i]
        if s is RowSense.LE:
            resid = max(resid, gap)
        elif s is RowSense.GE:
            resid = max(resid, -gap)
        else:
            resid = max(resid, abs(gap))
    lb_viol = np.max(np.maximum(lp.lb - x, 0.0), initial=0.0)
    ub_viol = np.max(np.maximum(x - lp.ub, 0.0), initial=0.0)
    return float(max(resid, lb_viol, ub_viol))


def complementary_slackness_residual(lp: LinearProgram, sol: LpSolution) -> float:
    """Max |dual * slack| over rows plus |reduced cost * bound slack| over vars."""
    if sol.x is None or sol.duals is None:
        return math.nan
    scale = _row_scales(lp.A)
    ax = lp.A @ sol.x
    worst = 0.0
    for i in range(lp.num_rows):
        slack = (lp.rhs[i] - ax[i]) / scale[i]
        worst = max(worst, abs(sol.duals[i] * scale[i] * slack))
    for j in range(lp.num_vars):
        d = sol.reduced_costs[j]
        lo_gap = sol.x[j] - lp.lb[j] if np.isfinite(lp.lb[j]) else 0.0
        hi_gap = lp.ub[j] - sol.x[j] if np.isfinite(lp.ub[j]) else 0.0
        gap = min(abs(lo_gap), abs(hi_gap)) if np.isfinite(lp.ub[j]) else abs(lo_gap)
        scale_j = 1.0 + abs(sol.x[j])
        worst = max(worst, abs(d) * gap / scale_j)
    return worst


# --- branch and bound ----------------------------------------------------------


@dataclass
class _Node:
    node_id: int
    depth: int
    bound: float  # parent LP objective (minimization convention)
    patches: dict[int, tuple[float, float]]
    basis: Optional[tuple[np.ndarray, np.ndarray]]


def _select_branch_var(x: np.ndarray, int_mask: np.ndarray, tol: float) -> int:
    """Most-fractional integer variable, ties broken by lowest index."""
    frac = x - np.floor(x)
    dist = np.minimum(frac, 1.0 - frac)
    dist[~int_mask] = -1.0
    j = int(np.argmax(dist))
    if dist[j] <= tol:
        return -1
    return j


def solve_mip(prob: MipProblem, opts: Optional[MipOptions] = None) -> MipSolution:
    """Depth-first branch and bound with floor/ceil bound splitting.

    Child subproblems restrict one fractional variable to [lb, floor] and
    [ceil, ub]; nodes are pruned when their relaxation bound cannot beat the
    incumbent. After the first incumbent the open-node selection switches to
    best bound. Gap tolerance is zero: the tree is exhausted unless the time
    or node limit intervenes.
    """
    opts = opts or MipOptions()
    prob.validate()
    lp = prob.lp
    sign = -1.0 if lp.maximize else 1.0
    int_mask = prob.integer
    t0 = time.monotonic()

    def timed_out() -> bool:
        return opts.time_limit_s is not None and time.monotonic() - t0 > opts.time_limit_s

    def lift(bound: float) -> float:
        # Integral objectives allow rounding the relaxation bound up.
        if opts.objective_integral:
            return math.ceil(bound - 1e-6)
        return bound

    row_scale = _row_scales(lp.A)
    sx = _Simplex(lp, row_scale=row_scale)
    status = sx.solve()
    if status is LpStatus.INFEASIBLE:
        return MipSolution(status=MipStatus.INFEASIBLE, nodes=1)
    if status is not LpStatus.OPTIMAL:
        return MipSolution(status=MipStatus.NUMERICAL, nodes=1)

    # Base bounds for the tree; tightened below by reduced-cost fixing.
    base_lb = lp.lb.copy()
    base_ub = lp.ub.copy()

    incumbent_x: Optional[np.ndarray] = None
    incumbent_obj = INF  # minimization convention
    if opts.cutoff is not None:
        incumbent_obj = sign * opts.cutoff
    if opts.start is not None:
        xs = opts.start.copy()
        xs[int_mask] = np.round(xs[int_mask])
        frac_ok = np.max(np.abs(opts.start[int_mask] - xs[int_mask]), initial=0.0)
        if frac_ok <= opts.integrality_tol and primal_residual(lp, xs) <= FEAS_TOL * 10:
            obj_s = sign * float(lp.obj @ xs)
            if obj_s < incumbent_obj - 1e-12:
                incumbent_x = xs
                incumbent_obj = obj_s
    open_nodes: list[_Node] = []
    node_counter = 0
    explored = 0
    root_bound = sign * float(lp.obj @ sx.x[: lp.num_vars])

    if incumbent_obj < INF:
        # Reduced-cost fixing at the root: a nonbasic integer variable whose
        # unit move already pushes the relaxation past the incumbent can be
        # pinned at its bound for the whole tree.
        y_root = sx._duals_for(sx.c)
        d_root = sx._reduced_costs(sx.c, y_root)
        for j in np.where(int_mask)[0]:
            dj = d_root[j]
            if sx.vstat[j] == _AT_LOWER and dj > 0:
                if lift(root_bound + dj) >= incumbent_obj - opts.abs_gap - 1e-9:
                    base_ub[j] = base_lb[j]
                    sx.set_bound(j, base_lb[j], base_lb[j])
            elif sx.vstat[j] == _AT_UPPER and dj < 0:
                if lift(root_bound - dj) >= incumbent_obj - opts.abs_gap - 1e-9:
                    base_lb[j] = base_ub[j]
                    sx.set_bound(j, base_ub[j], base_ub[j])

    current_patches: dict[int, tuple[float, float]] = {}
    current_state_valid = True
    pending: Optional[_Node] = None

    def snap(x: np.ndarray) -> np.ndarray:
        out = x.copy()
        out[int_mask] = np.round(out[int_mask])
        return out

    def best_open_bound() -> float:
        vals = [n.bound for n in open_nodes]
        if pending is not None:
            vals.append(pending.bound)
        return min(vals) if vals else INF

    # The dive works on sx in place; backtracking reloads bounds and basis.
    node = _Node(node_id=0, depth=0, bound=-INF, patches={}, basis=None)
    pending = node
    while True:
        if pending is None:
            if not open_nodes:
                break
            if incumbent_x is None or opts.node_order == "dfs":
                idx = len(open_nodes) - 1  # pure depth-first
            else:
                idx = min(
                    range(len(open_nodes)), key=lambda i: (open_nodes[i].bound, -open_nodes[i].node_id)
                )
            node = open_nodes.pop(idx)
            if lift(node.bound) >= incumbent_obj - opts.abs_gap - 1e-9:
                continue
            # Reload bounds for this node.
            for j in set(current_patches) | set(node.patches):
                lo, hi = node.patches.get(j, (base_lb[j], base_ub[j]))
                sx.set_bound(j, lo, hi)
            current_patches = dict(node.patches)
            if node.basis is not None:
                if not sx.load_basis(*node.basis):
                    sx._set_default_nonbasic()
            current_state_valid = True
        else:
            node = pending
            pending = None
            if node.node_id > 0:
                for j, (lo, hi) in node.patches.items():
                    if current_patches.get(j) != (lo, hi):
                        sx.set_bound(j, lo, hi)
                current_patches = dict(node.patches)

        explored += 1
        if opts.max_nodes is not None and explored > opts.max_nodes:
            pending = node  # still open; keeps the reported bound honest
            break
        if timed_out():
            pending = node
            break

        if node.node_id > 0 or not current_state_valid:
            status = sx.solve()
        # Root already solved before the loop.
        if status is LpStatus.INFEASIBLE:
            continue
        if status is not LpStatus.OPTIMAL:
            # Retry cold once before giving up on the node.
            sx._set_default_nonbasic()
            status = sx.solve()
            if status is LpStatus.INFEASIBLE:
                continue
            if status is not LpStatus.OPTIMAL:
                return MipSolution(status=MipStatus.NUMERICAL, nodes=explored)

        x = sx.x[: lp.num_vars].copy()
        node_obj = sign * float(lp.obj @ x)
        if lift(node_obj) >= incumbent_obj - opts.abs_gap - 1e-9:
            continue

        j = _select_branch_var(x, int_mask, opts.integrality_tol)
        if j < 0:
            # Polish: pin every integer variable at its snapped value and
            # re-solve, so the continuous part is an exact vertex (raw node
            # solutions carry the integrality tolerance into the products).
            xi = snap(x)
            for jj in np.where(int_mask)[0]:
                sx.set_bound(jj, xi[jj], xi[jj])
            pstat = sx.solve()
            if pstat is LpStatus.OPTIMAL:
                xi = snap(sx.x[: lp.num_vars])
            for jj in np.where(int_mask)[0]:
                lo, hi = current_patches.get(jj, (base_lb[jj], base_ub[jj]))
                sx.set_bound(jj, lo, hi)
            if pstat is LpStatus.INFEASIBLE:
                # The snap was not genuinely feasible; resolve the ambiguity
                # by branching on the least-integral variable anyway.
                frac_gap = np.abs(x - np.round(x))
                frac_gap[~int_mask] = -1.0
                j = int(np.argmax(frac_gap))
                if frac_gap[j] <= 0:
                    continue
            else:
                obj_i = sign * float(lp.obj @ xi)
                if obj_i < incumbent_obj:
                    incumbent_obj = obj_i
                    incumbent_x = xi
                    if opts.log:
                        opts.log(f"incumbent {sign * incumbent_obj:.6f} at node {explored}")
                continue

        frac = x[j] - math.floor(x[j])
        lo_j, hi_j = current_patches.get(j, (base_lb[j], base_ub[j]))
        down = dict(current_patches)
        down[j] = (lo_j, math.floor(x[j]))
        up = dict(current_patches)
        up[j] = (math.ceil(x[j]), hi_j)
        basis_snapshot = sx.save_basis()
        node_counter += 2
        child_down = _Node(node_counter - 1, node.depth + 1, node_obj, down, basis_snapshot)
        child_up = _Node(node_counter, node.depth + 1, node_obj, up, basis_snapshot)
        if frac <= 0.5:
            near, far = child_down, child_up
        else:
            near, far = child_up, child_down
        open_nodes.append(far)
        pending = near  # dive continues in place from the current basis

    exhausted = pending is None and not open_nodes
    if incumbent_x is None:
        if exhausted:
            status_none = MipStatus.CUTOFF if opts.cutoff is not None else MipStatus.INFEASIBLE
            return MipSolution(status=status_none, nodes=explored, bound=sign * incumbent_obj)
        return MipSolution(status=MipStatus.TIMEOUT, nodes=explored, bound=sign * best_open_bound())

    if exhausted:
        bound_min = incumbent_obj
    else:
        bound_min = min(best_open_bound(), incumbent_obj)
        if opts.objective_integral:
            bound_min = min(incumbent_obj, lift(bound_min))
    gap = incumbent_obj - bound_min
    status_out = MipStatus.OPTIMAL if exhausted or gap <= opts.abs_gap + 1e-9 else MipStatus.TIMEOUT
    return MipSolution(
        status=status_out,
        x=incumbent_x,
        obj=sign * incumbent_obj,
        bound=sign * bound_min,
        gap=gap,
        nodes=explored,
    )


# --- MPS dump ------------------------------------------------------------------


def write_mps(prob: MipProblem | LinearProgram, name: str = "MIMOFRAMES") -> str:
    """Fixed-format MPS rendering of an LP or MIP, for external cross-checks.

    Objective sense is encoded by negating coefficients for maximization
    (MPS has no portable OBJSENSE), which is noted in a comment line.
    """
    if isinstance(prob, MipProblem):
        lp, int_mask = prob.lp, prob.integer
    else:
        lp, int_mask = prob, np.zeros(prob.num_vars, dtype=bool)
    vn = lp.var_names or [f"X{j}" for j in range(lp.num_vars)]
    rn = lp.row_names or [f"R{i}" for i in range(lp.num_rows)]
    vn = [s.replace(" ", "_")[:8] for s in vn]
    rn = [s.replace(" ", "_")[:8] for s in rn]

    lines = [f"* sense: {'MAX (coefficients negated)' if lp.maximize else 'MIN'}"]
    lines.append(f"NAME          {name}")
    lines.append("ROWS")
    lines.append(" N  COST")
    sense_char = {RowSense.LE: "L", RowSense.GE: "G", RowSense.EQ: "E"}
    for i, s in enumerate(lp.senses):
        lines.append(f" {sense_char[s]}  {rn[i]:<8}")
    lines.append("COLUMNS")
    obj = -lp.obj if lp.maximize else lp.obj
    in_int = False
    marker = 0
    for j in range(lp.num_vars):
        if int_mask[j] != in_int:
            kind = "INTORG" if int_mask[j] else "INTEND"
            lines.append(f"    MARKER    {'':<8}  'MARKER'                 '{kind}'")
            in_int = bool(int_mask[j])
            marker += 1
        entries = []
        if obj[j] != 0.0:
            entries.append(("COST", obj[j]))
        entries.extend((rn[i], lp.A[i, j]) for i in np.nonzero(lp.A[:, j])[0])
        for a in range(0, len(entries), 2):
            pair = entries[a : a + 2]
            line = f"    {vn[j]:<8}  {pair[0][0]:<8}  {pair[0][1]:< .6E}"
            if len(pair) == 2:
                line += f"   {pair[1][0]:<8}  {pair[1][1]:< .6E}"
            lines.append(line)
    if in_int:
        lines.append(f"    MARKER    {'':<8}  'MARKER'                 'INTEND'")
    lines.append("RHS")
    for i in range(lp.num_rows):
        if lp.rhs[i] != 0.0:
            lines.append(f"    RHS       {rn[i]:<8}  {lp.rhs[i]:< .6E}")
    lines.append("BOUNDS")
    for j in range(lp.num_vars):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == 0.0 and not np.isfinite(hi):
            continue
        if lo == hi:
            lines.append(f" FX BND       {vn[j]:<8}  {lo:< .6E}")
            continue
        if np.isfinite(lo) and lo != 0.0:
            lines.append(f" LO BND       {vn[j]:<8}  {lo:< .6E}")
        elif not np.isfinite(lo):
            lines.append(f" MI BND       {vn[j]:<8}")
        if np.isfinite(hi):
            lines.append(f" UP BND       {vn[j]:<8}  {hi:< .6E}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


# --- external solver adapter -----------------------------------------------------


class SolverAdapter(Protocol):
    """Drop-in solver contract: same problem and solution types as built-in."""

    def solve_lp(self, lp: LinearProgram) -> LpSolution: ...

    def solve_mip(self, prob: MipProblem, opts: Optional[MipOptions]) -> MipSolution: ...


class BuiltinSolver:
    """Adapter facade over the built-in simplex and branch-and-bound."""

    def solve_lp(self, lp: LinearProgram) -> LpSolution:
        return solve_lp(lp)

    def solve_mip(self, prob: MipProblem, opts: Optional[MipOptions] = None) -> MipSolution:
        return solve_mip(prob, opts)


DEFAULT_SOLVER = BuiltinSolver()
