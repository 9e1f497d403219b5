"""Two-phase frame minimization: column generation, then an integer solve.

Phase 1 solves the linear relaxation of the frame-minimization problem by
compatible-set generation: starting from singleton sets, the covering LP
(master) is solved, its duals price a new compatible set, and the set is
added while its price exceeds 1. On termination the master optimum equals
the relaxation optimum over the family of all compatible sets.

Phase 2 solves the integer frame problem restricted to the generated pool
(price-and-branch). A cheaper variant restricts further to the columns with
positive fractional value, which number at most twice the device count.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import milp
from .milp import LpBuilder, MipOptions, MipStatus, RowSense
from .model import CompatibleSet, Instance, ModelError, Precoder
from .powerctl import PowerScheme
from .pricing import (
    Candidate,
    DualPrices,
    PricingOptions,
    build_pricing,
    membership_feasible,
    solve_pricing,
    verify_candidate,
)


class InstanceInfeasibleError(ModelError):
    """A device cannot meet its threshold even alone under the given scheme."""


class ColumnPool:
    """Ordered, deduplicated collection of compatible sets (master columns)."""

    def __init__(self):
        self.csets: list[CompatibleSet] = []
        self._members_seen: set[tuple] = set()

    def __len__(self) -> int:
        return len(self.csets)

    def __iter__(self):
        return iter(self.csets)

    def contains_membership(self, cset: CompatibleSet) -> bool:
        return cset.membership_key() in self._members_seen

    def add(self, cset: CompatibleSet) -> bool:
        """Add a column; returns False for a duplicate membership.

        Two columns with identical (tx, rx) are the same master column no
        matter their power details, so membership is the dedup key.
        """
        key = cset.membership_key()
        if key in self._members_seen:
            return False
        self._members_seen.add(key)
        self.csets.append(cset)
        return True


@dataclass
class MasterSolution:
    t_star: np.ndarray  # fractional block counts per pool column
    duals: DualPrices
    objective: float

    def support(self, tol: float = 1e-9) -> list[int]:
        return [j for j, v in enumerate(self.t_star) if v > tol]


@dataclass
class Schedule:
    csets: list[CompatibleSet]
    counts: list[int]
    frame_size: int
    total_power: float
    max_node_power: float
    status: MipStatus
    gap: float = 0.0

    def to_dict(self) -> dict:
        return {
            "csets": [
                {
                    "tx": sorted(c.tx),
                    "rx": sorted(c.rx),
                    "eta_up": {str(k): c.eta_up[k] for k in sorted(c.tx)},
                    "eta_down": {str(k): c.eta_dn[k] for k in sorted(c.rx)},
                    "blocks": n,
                }
                for c, n in zip(self.csets, self.counts)
                if n > 0
            ],
            "frame": self.frame_size,
            "metrics": {
                "total_power": self.total_power,
                "max_node_power": self.max_node_power,
            },
        }


@dataclass
class CgOptions:
    eps_rc: float = 1e-6
    iter_cap: int = 2000
    pricing_time_limit_s: Optional[float] = 60.0
    ip_time_limit_s: Optional[float] = 300.0
    early_stop: bool = False
    early_stop_delta: float = 1e-3
    early_stop_window: int = 10
    log: Optional[Callable[[str], None]] = None


@dataclass
class CgResult:
    pool: ColumnPool
    master: MasterSolution
    iterations: int
    proven: bool
    history: list[dict] = field(default_factory=list)
    master_seconds: float = 0.0
    pricing_seconds: float = 0.0
    stalled: bool = False


def initial_pool(inst: Instance, precoder: Precoder, scheme: PowerScheme) -> ColumnPool:
    """Singleton compatible sets: each device alone, in its demanded roles.

    A lone device needs one pilot and sees no interference, so this pool is
    always compatible provided each device can meet its threshold by itself;
    if one cannot, the instance is infeasible under the scheme and that
    device is named.
    """
    pool = ColumnPool()
    for d in inst.devices:
        tx = [d.id] if d.up_demand > 0 else []
        rx = [d.id] if d.down_demand > 0 else []
        pv = membership_feasible(inst, precoder, scheme, tx, rx)
        if pv is None:
            raise InstanceInfeasibleError(
                f"device {d.id} cannot meet its SINR threshold alone "
                f"({precoder.value}/{scheme.value}); no schedule exists"
            )
        pool.add(
            CompatibleSet(
                tx=frozenset(tx), rx=frozenset(rx), eta_up=pv.eta_up, eta_dn=pv.eta_dn
            )
        )
    return pool


def _master_rows(inst: Instance) -> tuple[list[int], list[int]]:
    up_rows = [d.id for d in inst.devices if d.up_demand > 0]
    dn_rows = [d.id for d in inst.devices if d.down_demand > 0]
    return up_rows, dn_rows


def solve_master(
    inst: Instance,
    pool: ColumnPool,
    warm: Optional[dict] = None,
) -> MasterSolution:
    """Covering LP over the pool; duals priced from the demand rows.

    Zero-demand directions have no row and get dual price 0. The returned
    duals satisfy the dual constraint (price <= 1) for every pooled column
    up to LP tolerance. ``warm`` is a mutable dict carrying the previous
    basis between calls; appended columns enter nonbasic at zero, so the
    old basis stays feasible and re-solves take a handful of pivots.
    """
    up_rows, dn_rows = _master_rows(inst)
    b = LpBuilder(maximize=False)
    cols = [b.add_var(0.0, milp.INF, obj=1.0, name=f"T{j}") for j in range(len(pool))]
    row_of_up = {}
    row_of_dn = {}
    coeffs_up = {k: {} for k in up_rows}
    coeffs_dn = {k: {} for k in dn_rows}
    for j, cset in enumerate(pool):
        for k in cset.tx:
            if k in coeffs_up:
                coeffs_up[k][cols[j]] = 1.0
        for k in cset.rx:
            if k in coeffs_dn:
                coeffs_dn[k][cols[j]] = 1.0
    for k in up_rows:
        row_of_up[k] = b.add_row(
            coeffs_up[k], RowSense.GE, float(inst.devices[k].up_demand), name=f"up{k}"
        )
    for k in dn_rows:
        row_of_dn[k] = b.add_row(
            coeffs_dn[k], RowSense.GE, float(inst.devices[k].down_demand), name=f"dn{k}"
        )
    warm_basis = None
    if warm is not None and "basis" in warm:
        old_basis, old_vstat, old_n = warm["basis"]
        shift = len(pool) - old_n
        if shift >= 0:
            basis = old_basis + np.where(old_basis >= old_n, shift, 0)
            vstat = np.concatenate(
                [old_vstat[:old_n], np.ones(shift, dtype=old_vstat.dtype), old_vstat[old_n:]]
            )
            warm_basis = (basis, vstat)
    sol = milp.solve_lp(b.build_lp(), warm_basis=warm_basis)
    if sol.status is not milp.LpStatus.OPTIMAL:
        raise ModelError(f"master LP did not solve: {sol.status.value}")
    if warm is not None and sol.basis is not None:
        warm["basis"] = (sol.basis[0], sol.basis[1], len(pool))
    K = inst.num_devices
    pi_up = np.zeros(K)
    pi_dn = np.zeros(K)
    for k, r in row_of_up.items():
        pi_up[k] = max(sol.duals[r], 0.0)
    for k, r in row_of_dn.items():
        pi_dn[k] = max(sol.duals[r], 0.0)
    duals = DualPrices(pi_up=pi_up, pi_down=pi_dn)
    for cset in pool:
        if duals.price(cset.tx, cset.rx) > 1.0 + 1e-7:
            raise ModelError("master duals violate a pooled column's dual constraint")
    return MasterSolution(t_star=sol.x.copy(), duals=duals, objective=sol.obj)


def run_cg(
    inst: Instance,
    precoder: Precoder,
    scheme: PowerScheme,
    opts: Optional[CgOptions] = None,
) -> CgResult:
    """Column generation loop: master, pricing, add, repeat while price > 1."""
    opts = opts or CgOptions()
    pool = initial_pool(inst, precoder, scheme)
    history: list[dict] = []
    t_master = 0.0
    t_pricing = 0.0
    proven = False
    stalled = False
    master: Optional[MasterSolution] = None
    last_obj = math.inf
    recent: list[float] = []
    iters = 0

    popts = PricingOptions(eps_rc=opts.eps_rc, time_limit_s=opts.pricing_time_limit_s)
    warm: dict = {}
    while iters < opts.iter_cap:
        iters += 1
        t0 = time.monotonic()
        master = solve_master(inst, pool, warm=warm)
        t_master += time.monotonic() - t0
        if master.objective > last_obj + 1e-9:
            raise ModelError(
                f"master objective increased: {last_obj} -> {master.objective}"
            )
        last_obj = master.objective
        recent.append(master.objective)
        if (
            opts.early_stop
            and len(recent) > opts.early_stop_window
            and recent[-1 - opts.early_stop_window] - recent[-1] < opts.early_stop_delta
        ):
            break

        t0 = time.monotonic()
        model = build_pricing(inst, precoder, scheme, master.duals)
        cand = solve_pricing(model, popts)
        dt = time.monotonic() - t0
        t_pricing += dt
        history.append(
            {
                "iteration": iters,
                "master_obj": master.objective,
                "price": cand.price if cand else None,
                "cset_size": len(cand.cset.members) if cand else 0,
                "pricing_s": dt,
            }
        )
        if opts.log:
            btxt = f"B={cand.price:.6f} |c|={len(cand.cset.members)}" if cand else "B<=1"
            opts.log(
                f"iter {iters:4d}  obj={master.objective:.6f}  {btxt}  ({dt:.2f}s)"
            )
        if cand is None:
            proven = True
            break
        if not pool.add(cand.cset):
            # Regenerating a pooled membership with price > 1 means the last
            # pricing solve was inexact (timeout incumbent); stop honestly.
            stalled = True
            if opts.log:
                opts.log("warning: duplicate column regenerated, stopping")
            break

    if master is None or (not proven and not stalled):
        # Stopped with columns added after the last master solve (iteration
        # cap or early stop): refresh the master so the reported relaxation
        # matches the returned pool.
        t0 = time.monotonic()
        master = solve_master(inst, pool, warm=warm)
        t_master += time.monotonic() - t0

    return CgResult(
        pool=pool,
        master=master,
        iterations=iters,
        proven=proven,
        history=history,
        master_seconds=t_master,
        pricing_seconds=t_pricing,
        stalled=stalled,
    )


def _schedule_from_counts(
    inst: Instance, csets: list[CompatibleSet], counts: list[int], status: MipStatus, gap: float
) -> Schedule:
    used = [(c, n) for c, n in zip(csets, counts) if n > 0]
    total_power = 0.0
    node_power = np.zeros(inst.num_devices)
    for c, n in used:
        block = sum(c.eta_up.values()) + sum(c.eta_dn.values())
        total_power += n * block
        for k in c.tx:
            node_power[k] += n * c.eta_up[k]
        for k in c.rx:
            node_power[k] += n * c.eta_dn[k]
    return Schedule(
        csets=[c for c, _ in used],
        counts=[n for _, n in used],
        frame_size=int(sum(n for _, n in used)),
        total_power=float(total_power),
        max_node_power=float(node_power.max(initial=0.0)),
        status=status,
        gap=gap,
    )


def _frame_mip(inst: Instance, csets: list[CompatibleSet]) -> milp.MipProblem:
    up_rows, dn_rows = _master_rows(inst)
    b = LpBuilder(maximize=False)
    cols = [
        b.add_var(0.0, milp.INF, obj=1.0, integer=True, name=f"T{j}")
        for j in range(len(csets))
    ]
    coeffs_up = {k: {} for k in up_rows}
    coeffs_dn = {k: {} for k in dn_rows}
    for j, cset in enumerate(csets):
        for k in cset.tx:
            if k in coeffs_up:
                coeffs_up[k][cols[j]] = 1.0
        for k in cset.rx:
            if k in coeffs_dn:
                coeffs_dn[k][cols[j]] = 1.0
    for k in up_rows:
        b.add_row(coeffs_up[k], RowSense.GE, float(inst.devices[k].up_demand), name=f"up{k}")
    for k in dn_rows:
        b.add_row(coeffs_dn[k], RowSense.GE, float(inst.devices[k].down_demand), name=f"dn{k}")
    return b.build_mip()


def solve_frame_ip(
    inst: Instance,
    pool: ColumnPool,
    time_limit_s: Optional[float] = 300.0,
) -> Schedule:
    """Integer frame minimization over the pooled compatible sets."""
    prob = _frame_mip(inst, pool.csets)
    sol = milp.solve_mip(
        prob,
        MipOptions(time_limit_s=time_limit_s, objective_integral=True),
    )
    if sol.status in (MipStatus.INFEASIBLE, MipStatus.NUMERICAL) or sol.x is None:
        raise ModelError(f"frame integer solve failed: {sol.status.value}")
    counts = [int(round(v)) for v in sol.x]
    gap = float(sol.obj - sol.bound) if sol.status is MipStatus.TIMEOUT else 0.0
    return _schedule_from_counts(inst, pool.csets, counts, sol.status, gap)


def heuristic_frame_ip(
    inst: Instance,
    pool: ColumnPool,
    master: MasterSolution,
    time_limit_s: Optional[float] = 300.0,
) -> Schedule:
    """Frame solve restricted to the master's support columns (at most 2K)."""
    support = master.support()
    csets = [pool.csets[j] for j in support]
    prob = _frame_mip(inst, csets)
    sol = milp.solve_mip(
        prob, MipOptions(time_limit_s=time_limit_s, objective_integral=True)
    )
    if sol.status in (MipStatus.INFEASIBLE, MipStatus.NUMERICAL) or sol.x is None:
        raise ModelError(f"heuristic frame solve failed: {sol.status.value}")
    counts = [int(round(v)) for v in sol.x]
    gap = float(sol.obj - sol.bound) if sol.status is MipStatus.TIMEOUT else 0.0
    return _schedule_from_counts(inst, csets, counts, sol.status, gap)


def round_up_schedule(inst: Instance, pool: ColumnPool, master: MasterSolution) -> Schedule:
    """Ceiling of the fractional master solution; always feasible, gap <= 2K."""
    counts = [int(math.ceil(v - 1e-9)) if v > 1e-9 else 0 for v in master.t_star]
    return _schedule_from_counts(inst, pool.csets, counts, MipStatus.OPTIMAL, 0.0)


def lower_bounds(inst: Instance, lr_objective: Optional[float] = None) -> dict:
    """Pigeonhole bound from the pilot budget, plus the rounded LP bound.

    Every device occupies a pilot in at least max(h_up, h_down) blocks and
    each block offers P pilots, so the frame cannot be shorter than the
    ceiling of their ratio.
    """
    total = inst.max_demand_sum()
    out = {"pigeonhole": math.ceil(total / inst.params.num_pilots)}
    if lr_objective is not None:
        out["lp_bound"] = math.ceil(lr_objective - 1e-6)
    return out


@dataclass
class ScheduleReport:
    ok: bool
    violations: list[str] = field(default_factory=list)


def validate_schedule(
    inst: Instance, precoder: Precoder, scheme: PowerScheme, schedule: Schedule
) -> ScheduleReport:
    """End-to-end gate: demand covering plus per-set compatibility."""
    v: list[str] = []
    up_cover = np.zeros(inst.num_devices)
    dn_cover = np.zeros(inst.num_devices)
    for cset, n in zip(schedule.csets, schedule.counts):
        if n < 0:
            v.append("negative block count")
        rep = verify_candidate(inst, precoder, scheme, cset)
        if not rep.ok:
            v.extend(f"cset {sorted(cset.members)}: {msg}" for msg in rep.violations)
        for k in cset.tx:
            up_cover[k] += n
        for k in cset.rx:
            dn_cover[k] += n
    for d in inst.devices:
        if up_cover[d.id] < d.up_demand:
            v.append(
                f"device {d.id}: uplink demand {d.up_demand} not covered "
                f"(got {int(up_cover[d.id])})"
            )
        if dn_cover[d.id] < d.down_demand:
            v.append(
                f"device {d.id}: downlink demand {d.down_demand} not covered "
                f"(got {int(dn_cover[d.id])})"
            )
    if schedule.frame_size != sum(schedule.counts):
        v.append("frame size does not match block counts")
    return ScheduleReport(ok=not v, violations=v)


@dataclass
class RunReport:
    """Everything one configuration run produces, ready for serialization."""

    precoder: str
    scheme: str
    lr_objective: float
    pool_size: int
    frame: int
    heuristic_frame: int
    heuristic_pool_size: int
    schedule: Schedule
    heuristic_schedule: Schedule
    bounds: dict
    iterations: int
    proven: bool
    validation: ScheduleReport
    timings: dict
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = self.schedule.to_dict()
        doc["bounds"] = dict(self.bounds)
        doc["iterations"] = self.iterations
        doc["timings"] = dict(self.timings)
        doc.update(
            {
                "precoder": self.precoder,
                "scheme": self.scheme,
                "lr_objective": self.lr_objective,
                "pool_size": self.pool_size,
                "heuristic_frame": self.heuristic_frame,
                "heuristic_pool_size": self.heuristic_pool_size,
                "proven": self.proven,
                "valid": self.validation.ok,
                "violations": list(self.validation.violations),
            }
        )
        return doc


def solve_instance(
    inst: Instance,
    precoder: Precoder,
    scheme: PowerScheme,
    opts: Optional[CgOptions] = None,
) -> RunReport:
    """Full pipeline: CG relaxation, integer solve, support heuristic, checks."""
    opts = opts or CgOptions()
    cg = run_cg(inst, precoder, scheme, opts)
    t0 = time.monotonic()
    schedule = solve_frame_ip(inst, cg.pool, time_limit_s=opts.ip_time_limit_s)
    ip_seconds = time.monotonic() - t0
    t0 = time.monotonic()
    heur = heuristic_frame_ip(inst, cg.pool, cg.master, time_limit_s=opts.ip_time_limit_s)
    heur_seconds = time.monotonic() - t0
    report = validate_schedule(inst, precoder, scheme, schedule)
    bounds = lower_bounds(inst, cg.master.objective if cg.proven else None)
    return RunReport(
        precoder=precoder.value,
        scheme=scheme.value,
        lr_objective=cg.master.objective,
        pool_size=len(cg.pool),
        frame=schedule.frame_size,
        heuristic_frame=heur.frame_size,
        heuristic_pool_size=len(cg.master.support()),
        schedule=schedule,
        heuristic_schedule=heur,
        bounds=bounds,
        iterations=cg.iterations,
        proven=cg.proven,
        validation=report,
        timings={
            "master_s": cg.master_seconds,
            "pricing_s": cg.pricing_seconds,
            "ip_s": ip_seconds,
            "heuristic_ip_s": heur_seconds,
        },
        history=cg.history,
    )
