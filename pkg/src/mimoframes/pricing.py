"""Pricing problems: find the compatible set that most violates the master duals.

For dual prices (pi_up, pi_down) the pricing problem maximizes

    B(c) = sum_{k in tx} pi_up[k] + sum_{k in rx} pi_down[k]

over all compatible sets, as a mixed-integer program per precoder and power
scheme. SINR constraints are deactivated for excluded devices through a big-M
constant Delta = max_mu * (K * ul_snr * max_beta + 1), enlarged automatically
if it fails the numeric domination check.

Bilinear terms are linearized exactly at integral points:

* power * activity products use McCormick triples (with a -Delta*(1-u) slack
  on the lower bound wherever fair coefficients may exceed 1);
* the ZF array-gain product (M - L) * eta uses per-count indicator rows over
  the possible active counts L (the pilot budget keeps that grid small);
* fair power control enters through the common-SINR closed forms: a single
  phi variable ties all uplink powers together, and downlink feasibility
  reduces to one linear row per device.

Devices whose dual price is zero for a role, or that cannot meet their
threshold even alone, are fixed out of that role before the MIP is built;
this never changes the optimal value. Every returned candidate is
re-verified against the exact effective-SINR expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import milp
from .milp import LpBuilder, MipOptions, MipStatus, RowSense
from .model import CompatibleSet, Direction, Instance, ModelError, Precoder, effective_sinr
from .powerctl import PowerScheme, PowerVector, fair_common_sinr, resolve_power, static_coeffs

DUAL_TOL = 1e-9
EPS_RC = 1e-6  # default slack on the B > 1 test
SINR_VERIFY_TOL = 1e-6
PRODUCT_TOL = 1e-7


class PricingError(RuntimeError):
    """Internal inconsistency in a pricing solve (should never trigger)."""


@dataclass(frozen=True)
class DualPrices:
    pi_up: np.ndarray
    pi_down: np.ndarray

    def __post_init__(self):
        if np.any(self.pi_up < -DUAL_TOL) or np.any(self.pi_down < -DUAL_TOL):
            raise ModelError("dual prices must be non-negative")

    def price(self, tx, rx) -> float:
        return float(sum(self.pi_up[k] for k in tx) + sum(self.pi_down[k] for k in rx))


@dataclass
class PricingModel:
    inst: Instance
    precoder: Precoder
    scheme: PowerScheme
    duals: DualPrices
    mip: milp.MipProblem
    delta: float
    gamma_max: float
    mu_max: float
    beta_max: float
    delta_enlarged: bool
    allowed_up: list[int]
    allowed_dn: list[int]
    cols: dict[str, dict] = field(default_factory=dict)

    def col(self, group: str, key) -> int:
        return self.cols[group][key]

    def has(self, group: str, key) -> bool:
        return group in self.cols and key in self.cols[group]


@dataclass
class Candidate:
    cset: CompatibleSet
    price: float
    mip_status: MipStatus
    proven: bool


@dataclass
class PricingOptions:
    eps_rc: float = EPS_RC
    time_limit_s: Optional[float] = 60.0
    use_cutoff: bool = True
    max_nodes: Optional[int] = None
    # First pass runs with this node cap; an improving incumbent is returned
    # immediately (flagged non-proven, which column generation tolerates) and
    # only inconclusive solves escalate to the full search. None disables.
    quick_nodes: Optional[int] = 500


@dataclass
class VerifyReport:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def require(self) -> None:
        if not self.ok:
            raise PricingError("candidate failed verification: " + "; ".join(self.violations))


def _beta_eff(inst: Instance, precoder: Precoder, k: int) -> float:
    b = inst.beta(k)
    return b if precoder is Precoder.MRC else b - inst.gamma(k)


def singleton_feasible(
    inst: Instance, precoder: Precoder, scheme: PowerScheme, k: int, direction: Direction
) -> bool:
    """Can device k meet its threshold alone, with the scheme's allowed power?

    All schemes give a lone device eta = 1 except STATIC, which pins it to
    min(gamma)/gamma(k). Interference monotonicity makes this a necessary
    condition for membership in any compatible set.
    """
    p = inst.params
    if scheme is PowerScheme.STATIC:
        eta = static_coeffs(inst).up(k)
    else:
        eta = 1.0
    gain = p.num_antennas if precoder is Precoder.MRC else p.num_antennas - 1
    bt = _beta_eff(inst, precoder, k)
    if direction is Direction.UP:
        sinr = gain * p.ul_snr * inst.gamma(k) * eta / (1.0 + p.ul_snr * bt * eta)
    else:
        sinr = gain * p.dl_snr * inst.gamma(k) * eta / (1.0 + p.dl_snr * bt * eta)
    return sinr >= inst.mu(k) * (1.0 - SINR_VERIFY_TOL)


def compute_delta(inst: Instance) -> tuple[float, float, float, float]:
    """Big-M constant and its ingredients: Delta = N*(K*ul_snr*B + 1)."""
    K = inst.num_devices
    beta_max = max(inst.beta(k) for k in range(K))
    mu_max = max(inst.mu(k) for k in range(K))
    gamma_max = max(inst.gamma(k) for k in range(K))
    delta = mu_max * (K * inst.params.ul_snr * beta_max + 1.0)
    return delta, gamma_max, mu_max, beta_max


def _delta_required(inst: Instance, precoder: Precoder, scheme: PowerScheme) -> float:
    """Smallest big-M that dominates every SINR-row right-hand side.

    Active-device power coefficients never exceed 1 in any scheme, so the
    uplink interference is at most ul_snr * sum(beta_eff) and the downlink
    one at most dl_snr * beta_eff(k) (the base-station budget caps the sum
    of downlink coefficients at 1).
    """
    p = inst.params
    K = inst.num_devices
    eta_cap = static_coeffs(inst).eta_up if scheme is PowerScheme.STATIC else None
    up_sum = sum(
        _beta_eff(inst, precoder, k) * (eta_cap[k] if eta_cap else 1.0) for k in range(K)
    )
    worst = 0.0
    for k in range(K):
        worst = max(worst, inst.mu(k) * (1.0 + p.ul_snr * up_sum))
        worst = max(worst, inst.mu(k) * (1.0 + p.dl_snr * _beta_eff(inst, precoder, k)))
    return worst


def build_pricing(
    inst: Instance,
    precoder: Precoder,
    scheme: PowerScheme,
    duals: DualPrices,
    dual_tol: float = DUAL_TOL,
) -> PricingModel:
    """Assemble the pricing MIP for one precoder/power-scheme combination."""
    K = inst.num_devices
    p = inst.params
    if len(duals.pi_up) != K or len(duals.pi_down) != K:
        raise ModelError("dual price vectors must have one entry per device")
    delta, gamma_max, mu_max, beta_max = compute_delta(inst)
    needed = _delta_required(inst, precoder, scheme)
    enlarged = False
    if delta < needed:
        delta = needed * (1.0 + 1e-6)
        enlarged = True

    allowed_up = [
        k
        for k in range(K)
        if duals.pi_up[k] > dual_tol and singleton_feasible(inst, precoder, scheme, k, Direction.UP)
    ]
    allowed_dn = [
        k
        for k in range(K)
        if duals.pi_down[k] > dual_tol
        and singleton_feasible(inst, precoder, scheme, k, Direction.DOWN)
    ]
    members = sorted(set(allowed_up) | set(allowed_dn))
    zf = precoder is Precoder.ZF
    static = static_coeffs(inst) if scheme is PowerScheme.STATIC else None
    rho_u, rho_d, M = p.ul_snr, p.dl_snr, p.num_antennas
    if zf and p.num_pilots >= M:
        raise ModelError("ZF pricing needs M > P")

    b = LpBuilder(maximize=True)
    cols: dict[str, dict] = {
        "u_up": {},
        "u_dn": {},
        "u": {},
        "eta_up": {},
        "eta_dn": {},
        "x_up": {},
        "x_dn": {},
        "z": {},
        "y_sel": {},
        "w_up": {},
        "w_dn": {},
        "v_up": {},
    }
    for k in allowed_up:
        cols["u_up"][k] = b.add_var(0, 1, obj=float(duals.pi_up[k]), integer=True, name=f"uu{k}")
    for k in allowed_dn:
        cols["u_dn"][k] = b.add_var(0, 1, obj=float(duals.pi_down[k]), integer=True, name=f"ud{k}")
    for k in members:
        # Membership is forced to max(u_up, u_dn) by the coupling rows once
        # the role variables are integral, so it needs no integrality of its
        # own (fewer branching candidates).
        cols["u"][k] = b.add_var(0, 1, name=f"u{k}")

    # Role coupling and the pilot budget.
    for k in members:
        uk = cols["u"][k]
        terms = {}
        if k in cols["u_up"]:
            terms[cols["u_up"][k]] = 1.0
            b.add_row({uk: 1.0, cols["u_up"][k]: -1.0}, RowSense.GE, 0.0, name=f"cup{k}")
        if k in cols["u_dn"]:
            terms[cols["u_dn"][k]] = 1.0
            b.add_row({uk: 1.0, cols["u_dn"][k]: -1.0}, RowSense.GE, 0.0, name=f"cdn{k}")
        terms[uk] = terms.get(uk, 0.0) - 1.0
        b.add_row(terms, RowSense.GE, 0.0, name=f"cin{k}")
    if members:
        b.add_row({cols["u"][k]: 1.0 for k in members}, RowSense.LE, float(p.num_pilots), name="pilots")

    free_power = scheme in (PowerScheme.OPTIMAL, PowerScheme.DOWNLINK)
    uplink_power_var = scheme is PowerScheme.OPTIMAL

    if uplink_power_var:
        for k in allowed_up:
            cols["eta_up"][k] = b.add_var(0, 1, name=f"eu{k}")
            cols["x_up"][k] = b.add_var(0, 1, name=f"xu{k}")
    if free_power:
        for k in allowed_dn:
            cols["eta_dn"][k] = b.add_var(0, 1, name=f"ed{k}")
            cols["x_dn"][k] = b.add_var(0, 1, name=f"xd{k}")

    fair = scheme is PowerScheme.FAIR
    if fair and allowed_up:
        cols["phi"] = {0: b.add_var(0, gamma_max, name="phi")}
        for k in allowed_up:
            # The phi floor machinery always has an integral completion for
            # integral roles (put z on the weakest active device), and the
            # uplink SINR is monotone in phi, so relaxing z keeps the
            # optimal membership exact while shrinking the search tree.
            cols["z"][k] = b.add_var(0, 1, name=f"z{k}")
            cols["y_sel"][k] = b.add_var(0, 1, name=f"y{k}")
            # w_up here is the product phi * u_up, one value per device.
            cols["w_up"][k] = b.add_var(0, gamma_max, name=f"w{k}")

    # Count indicators for the ZF array gain M - L (uplink needs them only
    # when the uplink power is not a fixed constant per device).
    count_up = zf and scheme in (PowerScheme.OPTIMAL, PowerScheme.FAIR) and allowed_up
    count_dn = zf and free_power and allowed_dn
    max_up = min(p.num_pilots, len(allowed_up))
    max_dn = min(p.num_pilots, len(allowed_dn))
    if count_up:
        cols["wc_up"] = {}
        for L in range(max_up + 1):
            cols["wc_up"][L] = b.add_var(0, 1, integer=True, name=f"wu{L}")
        b.add_row({cols["wc_up"][L]: 1.0 for L in range(max_up + 1)}, RowSense.EQ, 1.0, name="wup1")
        row = {cols["wc_up"][L]: float(L) for L in range(1, max_up + 1)}
        for k in allowed_up:
            row[cols["u_up"][k]] = row.get(cols["u_up"][k], 0.0) - 1.0
        b.add_row(row, RowSense.EQ, 0.0, name="wupL")
        if fair:
            for L in range(max_up + 1):
                cols["v_up"][L] = b.add_var(0, gamma_max, name=f"v{L}")
    if count_dn:
        cols["wc_dn"] = {}
        for L in range(max_dn + 1):
            cols["wc_dn"][L] = b.add_var(0, 1, integer=True, name=f"wd{L}")
        b.add_row({cols["wc_dn"][L]: 1.0 for L in range(max_dn + 1)}, RowSense.EQ, 1.0, name="wdn1")
        row = {cols["wc_dn"][L]: float(L) for L in range(1, max_dn + 1)}
        for k in allowed_dn:
            row[cols["u_dn"][k]] = row.get(cols["u_dn"][k], 0.0) - 1.0
        b.add_row(row, RowSense.EQ, 0.0, name="wdnL")

    # --- McCormick products -------------------------------------------------
    if uplink_power_var:
        for k in allowed_up:
            xk, ek, uk = cols["x_up"][k], cols["eta_up"][k], cols["u_up"][k]
            b.add_row({xk: 1.0, uk: -1.0}, RowSense.LE, 0.0)
            b.add_row({xk: 1.0, ek: -1.0}, RowSense.LE, 0.0)
            b.add_row({xk: 1.0, ek: -1.0, uk: -1.0}, RowSense.GE, -1.0)
    if free_power:
        for k in allowed_dn:
            xk, ek, uk = cols["x_dn"][k], cols["eta_dn"][k], cols["u_dn"][k]
            b.add_row({xk: 1.0, uk: -1.0}, RowSense.LE, 0.0)
            b.add_row({xk: 1.0, ek: -1.0}, RowSense.LE, 0.0)
            b.add_row({xk: 1.0, ek: -1.0, uk: -1.0}, RowSense.GE, -1.0)
    if fair and allowed_up:
        phi = cols["phi"][0]
        for k in allowed_up:
            wk, uk, zk, yk = cols["w_up"][k], cols["u_up"][k], cols["z"][k], cols["y_sel"][k]
            b.add_row({wk: 1.0, uk: -gamma_max}, RowSense.LE, 0.0)
            b.add_row({wk: 1.0, phi: -1.0}, RowSense.LE, 0.0)
            b.add_row({wk: 1.0, phi: -1.0, uk: -gamma_max}, RowSense.GE, -gamma_max)
            # y_sel = z * u_up picks the active device whose gamma floors phi.
            b.add_row({yk: 1.0, uk: -1.0}, RowSense.LE, 0.0)
            b.add_row({yk: 1.0, zk: -1.0}, RowSense.LE, 0.0)
            b.add_row({yk: 1.0, zk: -1.0, uk: -1.0}, RowSense.GE, -1.0)
            # phi <= gamma(k) on active devices.
            b.add_row({phi: 1.0, uk: gamma_max - inst.gamma(k)}, RowSense.LE, gamma_max)
        b.add_row(
            {phi: 1.0, **{cols["z"][k]: -inst.gamma(k) for k in allowed_up}},
            RowSense.GE,
            0.0,
            name="phifloor",
        )
        b.add_row({cols["y_sel"][k]: 1.0 for k in allowed_up}, RowSense.LE, 1.0, name="ysum")
        for k in allowed_up:
            row = {cols["y_sel"][j]: 1.0 for j in allowed_up}
            row[cols["u_up"][k]] = row.get(cols["u_up"][k], 0.0) - 1.0
            b.add_row(row, RowSense.GE, 0.0)
        if count_up:
            for L in range(max_up + 1):
                vL, wL = cols["v_up"][L], cols["wc_up"][L]
                b.add_row({vL: 1.0, wL: -gamma_max}, RowSense.LE, 0.0)
                b.add_row({vL: 1.0, phi: -1.0}, RowSense.LE, 0.0)
                b.add_row({vL: 1.0, phi: -1.0, wL: -gamma_max}, RowSense.GE, -gamma_max)

    # --- uplink SINR rows -----------------------------------------------------
    # Per-row deactivation constants: the exact supremum of each row's
    # violation over integer-feasible points (active powers never exceed
    # their caps, at most P devices transmit, the downlink budget caps the
    # downlink sum at 1). Delta dominates them all; the tighter values keep
    # the LP relaxation informative.
    def up_cap(j: int) -> float:
        if scheme is PowerScheme.STATIC:
            return static.up(j)
        return 1.0

    up_terms_sorted = sorted((_beta_eff(inst, precoder, j) * up_cap(j) for j in allowed_up),
                             reverse=True)
    sup_up = sum(up_terms_sorted[: min(p.num_pilots, len(up_terms_sorted))])

    def m_up(mu_k: float) -> float:
        return min(delta, mu_k * (1.0 + rho_u * sup_up))

    def m_dn(mu_k: float, bt_k: float) -> float:
        return min(delta, mu_k * (1.0 + rho_d * bt_k))

    def up_interf_terms(mu_k: float) -> dict[int, float]:
        terms: dict[int, float] = {}
        for j in allowed_up:
            bt = _beta_eff(inst, precoder, j)
            if scheme is PowerScheme.OPTIMAL:
                terms[cols["x_up"][j]] = -mu_k * rho_u * bt
            elif scheme is PowerScheme.DOWNLINK:
                terms[cols["u_up"][j]] = -mu_k * rho_u * bt
            elif scheme is PowerScheme.STATIC:
                terms[cols["u_up"][j]] = -mu_k * rho_u * bt * static.up(j)
            else:  # FAIR: interference beta_eff(j) * phi / gamma(j) gated by u
                terms[cols["w_up"][j]] = -mu_k * rho_u * bt / inst.gamma(j)
        return terms

    for k in allowed_up:
        mu_k = inst.mu(k)
        uk = cols["u_up"][k]
        gk = inst.gamma(k)
        mk = m_up(mu_k)
        if not zf:
            row = up_interf_terms(mu_k)
            rhs = mu_k - mk
            row[uk] = row.get(uk, 0.0) - mk
            if scheme is PowerScheme.OPTIMAL:
                row[cols["eta_up"][k]] = row.get(cols["eta_up"][k], 0.0) + M * rho_u * gk
            elif scheme is PowerScheme.DOWNLINK:
                rhs -= M * rho_u * gk
            elif scheme is PowerScheme.STATIC:
                rhs -= M * rho_u * gk * static.up(k)
            else:
                row[cols["phi"][0]] = row.get(cols["phi"][0], 0.0) + M * rho_u
            b.add_row(row, RowSense.GE, rhs, name=f"sup{k}")
        else:
            if scheme in (PowerScheme.DOWNLINK, PowerScheme.STATIC):
                # (M - sum u') * const eta stays linear in the activities.
                eta_k = 1.0 if scheme is PowerScheme.DOWNLINK else static.up(k)
                row = up_interf_terms(mu_k)
                row[uk] = row.get(uk, 0.0) - mk
                for j in allowed_up:
                    cj = cols["u_up"][j]
                    row[cj] = row.get(cj, 0.0) - rho_u * gk * eta_k
                rhs = mu_k - mk - M * rho_u * gk * eta_k
                b.add_row(row, RowSense.GE, rhs, name=f"sup{k}")
            elif scheme is PowerScheme.OPTIMAL:
                # One row per possible active count L, gated by the indicator.
                for L in range(1, max_up + 1):
                    row = up_interf_terms(mu_k)
                    row[uk] = row.get(uk, 0.0) - mk
                    wL = cols["wc_up"][L]
                    row[wL] = row.get(wL, 0.0) - mk
                    ek = cols["eta_up"][k]
                    row[ek] = row.get(ek, 0.0) + (M - L) * rho_u * gk
                    b.add_row(row, RowSense.GE, mu_k - 2.0 * mk, name=f"sup{k}L{L}")
            else:  # FAIR: (M*phi - sum L * v_L) with v_L = phi * count indicator
                row = up_interf_terms(mu_k)
                row[uk] = row.get(uk, 0.0) - mk
                row[cols["phi"][0]] = row.get(cols["phi"][0], 0.0) + M * rho_u
                for L in range(1, max_up + 1):
                    vL = cols["v_up"][L]
                    row[vL] = row.get(vL, 0.0) - rho_u * float(L)
                b.add_row(row, RowSense.GE, mu_k - mk, name=f"sup{k}")

    # --- downlink SINR rows ---------------------------------------------------
    for k in allowed_dn:
        mu_k = inst.mu(k)
        uk = cols["u_dn"][k]
        gk = inst.gamma(k)
        bt_k = _beta_eff(inst, precoder, k)
        if scheme is PowerScheme.FAIR:
            # Fair downlink gives all active devices the common SINR gain/A
            # with A = sum of (1/rho + beta_eff)/gamma over the active set;
            # feasibility for k is mu(k)*A <= gain, i.e. mu(k)*A + L <= M
            # under ZF (gain = M - L) and mu(k)*A <= M under MRC.
            a = {j: (1.0 / rho_d + _beta_eff(inst, precoder, j)) / inst.gamma(j) for j in allowed_dn}
            row = {}
            for j in allowed_dn:
                cj = cols["u_dn"][j]
                row[cj] = row.get(cj, 0.0) + mu_k * a[j] + (1.0 if zf else 0.0)
            big = sum(row.values())
            row[uk] = row.get(uk, 0.0) + big
            b.add_row(row, RowSense.LE, float(M) + big, name=f"sdn{k}")
        elif scheme is PowerScheme.STATIC:
            mkd = m_dn(mu_k, bt_k)
            row = {}
            for j in allowed_dn:
                cj = cols["u_dn"][j]
                row[cj] = row.get(cj, 0.0) - mu_k * rho_d * bt_k * static.dn(j)
            if zf:
                for j in allowed_dn:
                    cj = cols["u_dn"][j]
                    row[cj] = row.get(cj, 0.0) - rho_d * gk * static.dn(k)
            row[uk] = row.get(uk, 0.0) - mkd
            rhs = mu_k - mkd - M * rho_d * gk * static.dn(k)
            b.add_row(row, RowSense.GE, rhs, name=f"sdn{k}")
        else:  # OPTIMAL or DOWNLINK: free downlink power
            mkd = m_dn(mu_k, bt_k)
            if not zf:
                row = {cols["x_dn"][j]: -mu_k * rho_d * bt_k for j in allowed_dn}
                row[uk] = row.get(uk, 0.0) - mkd
                row[cols["eta_dn"][k]] = row.get(cols["eta_dn"][k], 0.0) + M * rho_d * gk
                b.add_row(row, RowSense.GE, mu_k - mkd, name=f"sdn{k}")
            else:
                for L in range(1, max_dn + 1):
                    row = {cols["x_dn"][j]: -mu_k * rho_d * bt_k for j in allowed_dn}
                    row[uk] = row.get(uk, 0.0) - mkd
                    wL = cols["wc_dn"][L]
                    row[wL] = row.get(wL, 0.0) - mkd
                    ek = cols["eta_dn"][k]
                    row[ek] = row.get(ek, 0.0) + (M - L) * rho_d * gk
                    b.add_row(row, RowSense.GE, mu_k - 2.0 * mkd, name=f"sdn{k}L{L}")

    # --- minimum-power implications (valid strengthening) -----------------------
    # An active device needs at least its single-device minimum power to meet
    # its own threshold (interference only raises that), so eta >= emin * u.
    # Feeding these into the products and the base-station budget couples the
    # activity binaries directly, which the bare big-M rows do not.
    def _emin(k: int, downlink: bool) -> float:
        gain = M if precoder is Precoder.MRC else M - 1
        bt = _beta_eff(inst, precoder, k)
        if downlink:
            den = rho_d * (gain * inst.gamma(k) - inst.mu(k) * bt)
        else:
            den = rho_u * (gain * inst.gamma(k) - inst.mu(k) * bt)
        return inst.mu(k) / den if den > 0 else 1.0

    if free_power and allowed_dn:
        for k in allowed_dn:
            e = _emin(k, downlink=True)
            b.add_row({cols["eta_dn"][k]: 1.0, cols["u_dn"][k]: -e}, RowSense.GE, 0.0)
            b.add_row({cols["x_dn"][k]: 1.0, cols["u_dn"][k]: -e}, RowSense.GE, 0.0)
        b.add_row(
            {cols["u_dn"][k]: _emin(k, downlink=True) for k in allowed_dn},
            RowSense.LE,
            1.0,
            name="dnknap",
        )
    if uplink_power_var:
        for k in allowed_up:
            e = _emin(k, downlink=False)
            b.add_row({cols["eta_up"][k]: 1.0, cols["u_up"][k]: -e}, RowSense.GE, 0.0)
            b.add_row({cols["x_up"][k]: 1.0, cols["u_up"][k]: -e}, RowSense.GE, 0.0)
        # Conditional uplink knapsacks: with k active, the interference the
        # other minimum powers inject is capped by k's own SINR row.
        wsum = {j: _beta_eff(inst, precoder, j) * _emin(j, downlink=False) for j in allowed_up}
        big = sum(wsum.values())
        for k in allowed_up:
            cap_k = (M * rho_u * inst.gamma(k) - inst.mu(k)) / (inst.mu(k) * rho_u)
            if cap_k >= big:
                continue
            row = {cols["u_up"][j]: wsum[j] for j in allowed_up}
            row[cols["u_up"][k]] = row.get(cols["u_up"][k], 0.0) + big
            b.add_row(row, RowSense.LE, cap_k + big, name=f"upknap{k}")

    # --- base-station power budget ---------------------------------------------
    if free_power and allowed_dn:
        b.add_row({cols["eta_dn"][k]: 1.0 for k in allowed_dn}, RowSense.LE, 1.0, name="bsbudget")
    elif scheme is PowerScheme.STATIC and allowed_dn:
        b.add_row(
            {cols["u_dn"][k]: static.dn(k) for k in allowed_dn}, RowSense.LE, 1.0, name="bsbudget"
        )
    # FAIR downlink coefficients sum to exactly 1 by construction.

    model = PricingModel(
        inst=inst,
        precoder=precoder,
        scheme=scheme,
        duals=duals,
        mip=b.build_mip(),
        delta=delta,
        gamma_max=gamma_max,
        mu_max=mu_max,
        beta_max=beta_max,
        delta_enlarged=enlarged,
        allowed_up=allowed_up,
        allowed_dn=allowed_dn,
        cols=cols,
    )
    return model


def _decode_membership(model: PricingModel, x: np.ndarray) -> tuple[list[int], list[int]]:
    tx = [k for k in model.allowed_up if x[model.col("u_up", k)] > 0.5]
    rx = [k for k in model.allowed_dn if x[model.col("u_dn", k)] > 0.5]
    return tx, rx


def _fair_feasible(inst: Instance, precoder: Precoder, tx: list[int], rx: list[int]) -> bool:
    """Closed-form compatibility under fair powers (sufficient for OPTIMAL)."""
    p = inst.params
    if precoder is Precoder.ZF and (len(tx) >= p.num_antennas or len(rx) >= p.num_antennas):
        return False
    if tx:
        s = fair_common_sinr(inst, tx, precoder, direction_up=True)
        if any(s < inst.mu(k) * (1.0 - SINR_VERIFY_TOL) for k in tx):
            return False
    if rx:
        s = fair_common_sinr(inst, rx, precoder, direction_up=False)
        if any(s < inst.mu(k) * (1.0 - SINR_VERIFY_TOL) for k in rx):
            return False
    return True


def _static_feasible(inst: Instance, precoder: Precoder, tx: list[int], rx: list[int]) -> bool:
    p = inst.params
    if precoder is Precoder.ZF and (len(tx) >= p.num_antennas or len(rx) >= p.num_antennas):
        return False
    const = static_coeffs(inst)
    if sum(const.dn(k) for k in rx) > 1.0 + 1e-12:
        return False
    eta_up = {k: const.up(k) for k in tx}
    eta_dn = {k: const.dn(k) for k in rx}
    for k in tx:
        s = effective_sinr(inst, precoder, Direction.UP, tx, rx, eta_up, eta_dn, k)
        if s < inst.mu(k) * (1.0 - SINR_VERIFY_TOL):
            return False
    for k in rx:
        s = effective_sinr(inst, precoder, Direction.DOWN, tx, rx, eta_up, eta_dn, k)
        if s < inst.mu(k) * (1.0 - SINR_VERIFY_TOL):
            return False
    return True


def _full_uplink_feasible(inst: Instance, precoder: Precoder, tx: list[int]) -> bool:
    if not tx:
        return True
    if precoder is Precoder.ZF and len(tx) >= inst.params.num_antennas:
        return False
    eta = {k: 1.0 for k in tx}
    for k in tx:
        s = effective_sinr(inst, precoder, Direction.UP, tx, [], eta, {}, k)
        if s < inst.mu(k) * (1.0 - SINR_VERIFY_TOL):
            return False
    return True


def _greedy_quick_feasible(
    inst: Instance, precoder: Precoder, scheme: PowerScheme, tx: list[int], rx: list[int]
) -> bool:
    """Cheap sufficient compatibility test used only to seed incumbents.

    For OPTIMAL the fair powers are one feasible choice; for DOWNLINK the
    uplink is checked exactly at full power and the downlink via fair
    powers. FAIR and STATIC are exact closed forms.
    """
    if scheme is PowerScheme.STATIC:
        return _static_feasible(inst, precoder, tx, rx)
    if scheme is PowerScheme.FAIR or scheme is PowerScheme.OPTIMAL:
        return _fair_feasible(inst, precoder, tx, rx)
    return _full_uplink_feasible(inst, precoder, tx) and _fair_feasible(inst, precoder, [], rx)


def _greedy_membership(
    model: PricingModel,
) -> Optional[tuple[list[int], list[int], float]]:
    """Price-ordered greedy role packing under a fast feasibility test."""
    inst = model.inst
    duals = model.duals
    items = [(float(duals.pi_up[k]), 0, k) for k in model.allowed_up]
    items += [(float(duals.pi_down[k]), 1, k) for k in model.allowed_dn]
    items.sort(key=lambda t: (-t[0], t[2], t[1]))
    tx: list[int] = []
    rx: list[int] = []
    members: set[int] = set()
    P = inst.params.num_pilots
    for price, role, k in items:
        if k not in members and len(members) >= P:
            continue
        cand_tx = sorted(tx + [k]) if role == 0 else tx
        cand_rx = sorted(rx + [k]) if role == 1 else rx
        if role == 0 and k in tx or role == 1 and k in rx:
            continue
        if _greedy_quick_feasible(inst, model.precoder, model.scheme, cand_tx, cand_rx):
            tx, rx = cand_tx, cand_rx
            members.add(k)
    if not tx and not rx:
        return None
    return tx, rx, duals.price(tx, rx)


def _warm_start_vector(
    model: PricingModel, tx: list[int], rx: list[int]
) -> Optional[np.ndarray]:
    """A fully consistent MIP point for a greedy membership, or None.

    Powers are the fair closed forms (feasible whenever the greedy test
    passed), except DOWNLINK's pinned uplink and STATIC's constants, which
    have no power variables in the model anyway.
    """
    inst = model.inst
    n = model.mip.lp.num_vars
    x = np.zeros(n)
    for k in tx:
        x[model.col("u_up", k)] = 1.0
    for k in rx:
        x[model.col("u_dn", k)] = 1.0
    for k in set(tx) | set(rx):
        x[model.col("u", k)] = 1.0
    if model.has("wc_up", 0):
        x[model.col("wc_up", min(len(tx), max(model.cols["wc_up"])))] = 1.0
    if model.has("wc_dn", 0):
        x[model.col("wc_dn", min(len(rx), max(model.cols["wc_dn"])))] = 1.0
    if model.scheme is PowerScheme.FAIR:
        phi = min((inst.gamma(k) for k in tx), default=0.0)
        if model.has("phi", 0):
            x[model.col("phi", 0)] = phi
            for k in tx:
                x[model.col("w_up", k)] = phi
            if tx:
                k_min = min(tx, key=lambda k: (inst.gamma(k), k))
                x[model.col("z", k_min)] = 1.0
                x[model.col("y_sel", k_min)] = 1.0
            for L, col in model.cols.get("v_up", {}).items():
                x[col] = phi if L == len(tx) else 0.0
    elif model.scheme in (PowerScheme.OPTIMAL, PowerScheme.DOWNLINK):
        from .powerctl import fair_downlink, fair_uplink

        dn = fair_downlink(inst, rx, model.precoder).eta_dn if rx else {}
        if model.scheme is PowerScheme.OPTIMAL:
            up = fair_uplink(inst, tx).eta_up if tx else {}
            for k in tx:
                x[model.col("eta_up", k)] = up[k]
                x[model.col("x_up", k)] = up[k]
        for k in rx:
            x[model.col("eta_dn", k)] = dn[k]
            x[model.col("x_dn", k)] = dn[k]
    return x


def _check_products(model: PricingModel, x: np.ndarray) -> None:
    """Linearized products must equal their literal factors at integral points."""
    for k in model.cols["x_up"]:
        lhs = x[model.col("x_up", k)]
        rhs = x[model.col("u_up", k)] * x[model.col("eta_up", k)]
        if abs(lhs - rhs) > PRODUCT_TOL:
            raise PricingError(f"x_up[{k}] = {lhs} but u*eta = {rhs}")
    for k in model.cols["x_dn"]:
        lhs = x[model.col("x_dn", k)]
        rhs = x[model.col("u_dn", k)] * x[model.col("eta_dn", k)]
        if abs(lhs - rhs) > PRODUCT_TOL:
            raise PricingError(f"x_dn[{k}] = {lhs} but u*eta = {rhs}")
    if model.has("phi", 0):
        phi = x[model.col("phi", 0)]
        for k in model.cols["w_up"]:
            lhs = x[model.col("w_up", k)]
            rhs = phi * x[model.col("u_up", k)]
            if abs(lhs - rhs) > PRODUCT_TOL * (1.0 + model.gamma_max):
                raise PricingError(f"w_up[{k}] = {lhs} but phi*u = {rhs}")


def _power_lp(
    inst: Instance,
    precoder: Precoder,
    tx: list[int],
    rx: list[int],
    uplink_full: bool,
) -> Optional[PowerVector]:
    """Minimum-total-power coefficients for a fixed membership, or None.

    Feasibility of this LP is exactly feasibility of the membership under
    the OPTIMAL (or DOWNLINK, with full uplink power) scheme.
    """
    p = inst.params
    M = p.num_antennas
    b = LpBuilder(maximize=False)
    up_col = {}
    dn_col = {}
    for k in tx:
        lo = 1.0 if uplink_full else 0.0
        up_col[k] = b.add_var(lo, 1.0, obj=1.0, name=f"eu{k}")
    for k in rx:
        dn_col[k] = b.add_var(0.0, 1.0, obj=1.0, name=f"ed{k}")
    gain_u = M if precoder is Precoder.MRC else M - len(tx)
    gain_d = M if precoder is Precoder.MRC else M - len(rx)
    if gain_u <= 0 or gain_d <= 0:
        return None
    for k in tx:
        mu_k = inst.mu(k)
        row = {up_col[j]: -mu_k * p.ul_snr * _beta_eff(inst, precoder, j) for j in tx}
        row[up_col[k]] = row.get(up_col[k], 0.0) + gain_u * p.ul_snr * inst.gamma(k)
        b.add_row(row, RowSense.GE, mu_k)
    for k in rx:
        mu_k = inst.mu(k)
        bt_k = _beta_eff(inst, precoder, k)
        row = {dn_col[j]: -mu_k * p.dl_snr * bt_k for j in rx}
        row[dn_col[k]] = row.get(dn_col[k], 0.0) + gain_d * p.dl_snr * inst.gamma(k)
        b.add_row(row, RowSense.GE, mu_k)
    if rx:
        b.add_row({dn_col[k]: 1.0 for k in rx}, RowSense.LE, 1.0)
    sol = milp.solve_lp(b.build_lp())
    if sol.status is not milp.LpStatus.OPTIMAL:
        return None
    return PowerVector(
        eta_up={k: float(np.clip(sol.x[up_col[k]], 0.0, 1.0)) for k in tx},
        eta_dn={k: float(max(sol.x[dn_col[k]], 0.0)) for k in rx},
    )


def membership_feasible(
    inst: Instance, precoder: Precoder, scheme: PowerScheme, tx, rx
) -> Optional[PowerVector]:
    """Scheme-resolved power vector for (tx, rx) if compatible, else None.

    Used by the pricing decode and by brute-force oracles in the tests.
    """
    tx = sorted(set(tx))
    rx = sorted(set(rx))
    if not tx and not rx:
        return None
    p = inst.params
    if len(set(tx) | set(rx)) > p.num_pilots:
        return None
    if precoder is Precoder.ZF and (len(tx) >= p.num_antennas or len(rx) >= p.num_antennas):
        return None
    if scheme in (PowerScheme.OPTIMAL, PowerScheme.DOWNLINK):
        pv = _power_lp(inst, precoder, tx, rx, uplink_full=scheme is PowerScheme.DOWNLINK)
        if pv is None:
            return None
        return resolve_power(scheme, inst, tx, rx, precoder, proposed=pv)
    try:
        pv = resolve_power(scheme, inst, tx, rx, precoder)
    except ModelError:
        return None
    cset = CompatibleSet(tx=frozenset(tx), rx=frozenset(rx), eta_up=pv.eta_up, eta_dn=pv.eta_dn)
    report = verify_candidate(inst, precoder, scheme, cset)
    return pv if report.ok else None


def solve_pricing(
    model: PricingModel, opts: Optional[PricingOptions] = None
) -> Optional[Candidate]:
    """Solve the pricing MIP; return the best improving candidate or None.

    None means it is proven that no compatible set prices above 1 + eps_rc.
    A timeout with a usable incumbent returns it flagged as non-proven; a
    timeout without one raises PricingError (inconclusive pricing).
    """
    opts = opts or PricingOptions()
    if not model.allowed_up and not model.allowed_dn:
        return None
    mip_opts = MipOptions(time_limit_s=opts.time_limit_s, max_nodes=opts.max_nodes)
    if opts.use_cutoff:
        mip_opts.cutoff = 1.0
    greedy = _greedy_membership(model)
    if greedy is not None:
        mip_opts.start = _warm_start_vector(model, greedy[0], greedy[1])
    if opts.quick_nodes is not None:
        quick = MipOptions(
            time_limit_s=opts.time_limit_s,
            max_nodes=opts.quick_nodes,
            cutoff=mip_opts.cutoff,
            start=mip_opts.start,
        )
        sol = milp.solve_mip(model.mip, quick)
        if sol.status is MipStatus.TIMEOUT and sol.x is not None:
            tx, rx = _decode_membership(model, sol.x)
            if model.duals.price(tx, rx) > 1.0 + opts.eps_rc:
                return _finish_candidate(model, sol, opts, proven=False)
        elif sol.status is not MipStatus.TIMEOUT:
            return _finish_candidate(model, sol, opts, proven=sol.status is MipStatus.OPTIMAL)
    sol = milp.solve_mip(model.mip, mip_opts)
    return _finish_candidate(model, sol, opts, proven=sol.status is MipStatus.OPTIMAL)


def _finish_candidate(
    model: PricingModel, sol: milp.MipSolution, opts: PricingOptions, proven: bool
) -> Optional[Candidate]:
    if sol.status is MipStatus.CUTOFF:
        return None
    if sol.status is MipStatus.INFEASIBLE:
        # The empty set is always feasible, so this cannot legitimately occur.
        raise PricingError("pricing MIP infeasible; model construction is broken")
    if sol.status is MipStatus.NUMERICAL:
        raise PricingError("pricing MIP failed numerically")
    if sol.x is None:
        raise PricingError("pricing timed out with no usable incumbent")

    tx, rx = _decode_membership(model, sol.x)
    price = model.duals.price(tx, rx)
    if abs(price - sol.obj) > 1e-7 * (1.0 + abs(price)):
        raise PricingError(f"decoded price {price} disagrees with MIP objective {sol.obj}")
    if price <= 1.0 + opts.eps_rc:
        if proven:
            return None
        raise PricingError("pricing timed out with no usable incumbent")
    _check_products(model, sol.x)

    inst = model.inst
    if model.scheme in (PowerScheme.OPTIMAL, PowerScheme.DOWNLINK):
        pv = _power_lp(
            inst, model.precoder, tx, rx, uplink_full=model.scheme is PowerScheme.DOWNLINK
        )
        if pv is None:
            # Fall back on the MIP's own coefficients (boundary numerics).
            pv = PowerVector(
                eta_up={
                    k: float(np.clip(sol.x[model.col("eta_up", k)], 0.0, 1.0))
                    if model.has("eta_up", k)
                    else 1.0
                    for k in tx
                },
                eta_dn={k: float(max(sol.x[model.col("eta_dn", k)], 0.0)) for k in rx},
            )
        pv = resolve_power(model.scheme, inst, tx, rx, model.precoder, proposed=pv)
    else:
        pv = resolve_power(model.scheme, inst, tx, rx, model.precoder)

    cset = CompatibleSet(tx=frozenset(tx), rx=frozenset(rx), eta_up=pv.eta_up, eta_dn=pv.eta_dn)
    verify_candidate(inst, model.precoder, model.scheme, cset).require()
    return Candidate(cset=cset, price=price, mip_status=sol.status, proven=proven)


def verify_candidate(
    inst: Instance, precoder: Precoder, scheme: PowerScheme, cset: CompatibleSet
) -> VerifyReport:
    """Ground-truth gate: exact SINRs, pilot budget and power budgets.

    Uses the effective-SINR expressions directly, so any linearization or
    big-M artifact in the pricing MIP is caught here.
    """
    v: list[str] = []
    p = inst.params
    tx, rx = sorted(cset.tx), sorted(cset.rx)
    if len(cset.members) > p.num_pilots:
        v.append(f"pilot budget: {len(cset.members)} members > P={p.num_pilots}")
    if precoder is Precoder.ZF and (len(tx) >= p.num_antennas or len(rx) >= p.num_antennas):
        v.append("ZF requires M > active-set size")
    for k in tx:
        if cset.eta_up[k] > 1.0 + 1e-9 or cset.eta_up[k] < -1e-12:
            v.append(f"device {k}: uplink power {cset.eta_up[k]} outside [0, 1]")
    total_dn = sum(cset.eta_dn.values())
    if total_dn > 1.0 + 1e-9:
        v.append(f"power budget: downlink coefficients sum to {total_dn} > 1")
    if v:
        return VerifyReport(ok=False, violations=v)
    for k in tx:
        sinr = effective_sinr(inst, precoder, Direction.UP, tx, rx, cset.eta_up, cset.eta_dn, k)
        if sinr < inst.mu(k) * (1.0 - SINR_VERIFY_TOL):
            v.append(f"device {k}: uplink SINR {sinr:.6g} below threshold {inst.mu(k):.6g}")
    for k in rx:
        sinr = effective_sinr(inst, precoder, Direction.DOWN, tx, rx, cset.eta_up, cset.eta_dn, k)
        if sinr < inst.mu(k) * (1.0 - SINR_VERIFY_TOL):
            v.append(f"device {k}: downlink SINR {sinr:.6g} below threshold {inst.mu(k):.6g}")
    return VerifyReport(ok=not v, violations=v)
