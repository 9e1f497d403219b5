"""Power-control schemes for compatible-set scheduling.

Four schemes are supported:

* ``OPTIMAL``  - uplink and downlink coefficients are free decision variables
  of the pricing problem, subject only to the per-device and base-station
  power limits.
* ``FAIR``     - max-min fair power control over the active set: all active
  devices in a phase see one common SINR; closed forms below.
* ``STATIC``   - coefficients fixed once per instance to min(gamma)/gamma(k),
  computed over all K devices; they never change with scheduling.
* ``DOWNLINK`` - optimal power control on the downlink only, with every
  uplink coefficient pinned to full power (no uplink power control).

The fair and static schemes have closed forms; this module owns them and the
range checks shared by every scheme.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

from .model import Instance, ModelError, Precoder

# Base-station budget slack tolerated before a coefficient vector is rejected.
POWER_TOL = 1e-9


class PowerScheme(Enum):
    OPTIMAL = "optimal"
    FAIR = "fair"
    STATIC = "static"
    DOWNLINK = "downlink"

    @property
    def uplink_fixed_full(self) -> bool:
        """True when the scheme performs no uplink power control at all."""
        return self is PowerScheme.DOWNLINK

    @property
    def membership_determined(self) -> bool:
        """True when coefficients follow from membership alone (closed form)."""
        return self in (PowerScheme.FAIR, PowerScheme.STATIC)


class InfeasiblePowerError(ModelError):
    """A coefficient vector violates a device or base-station power limit."""


@dataclass(frozen=True)
class PowerVector:
    """Uplink/downlink power coefficients keyed by device id.

    Values for devices outside the active sets may exceed 1 under the fair
    scheme; they are never applied and are excluded from feasibility checks.
    """

    eta_up: Mapping[int, float]
    eta_dn: Mapping[int, float]

    def up(self, k: int) -> float:
        return self.eta_up.get(k, 0.0)

    def dn(self, k: int) -> float:
        return self.eta_dn.get(k, 0.0)


def fair_uplink(inst: Instance, active_tx: Iterable[int]) -> PowerVector:
    """Max-min fair uplink coefficients for the given transmitter set.

    phi = min gamma over the active transmitters (0 when none) and every
    device gets eta_up = phi / gamma(k); active members land in (0, 1] with
    the weakest at exactly 1.
    """
    tx = sorted(set(active_tx))
    for k in tx:
        if not 0 <= k < inst.num_devices:
            raise ModelError(f"unknown device id {k}")
    phi = min((inst.gamma(k) for k in tx), default=0.0)
    eta = {k: phi / inst.gamma(k) for k in range(inst.num_devices)}
    return PowerVector(eta_up=eta, eta_dn={})


def fair_downlink(
    inst: Instance, active_rx: Iterable[int], precoder: Precoder
) -> PowerVector:
    """Max-min fair downlink coefficients for the given receiver set.

    eta_dn(k) = (1 + dl_snr*beta~(k)) / (dl_snr*gamma(k)*A) on active devices
    and 0 elsewhere, with beta~ = beta for MRC and beta - gamma for ZF, and
    A = sum over active of (1/dl_snr + beta~)/gamma. The coefficients sum to
    1 exactly and give every active device the same SINR.
    """
    rx = sorted(set(active_rx))
    for k in rx:
        if not 0 <= k < inst.num_devices:
            raise ModelError(f"unknown device id {k}")
    eta = {k: 0.0 for k in range(inst.num_devices)}
    if not rx:
        return PowerVector(eta_up={}, eta_dn=eta)
    p = inst.params
    if precoder is Precoder.ZF and len(rx) >= p.num_antennas:
        raise ModelError(f"ZF fair downlink needs M > |active set|, got {len(rx)}")

    def beta_eff(k: int) -> float:
        b = inst.beta(k)
        return b if precoder is Precoder.MRC else b - inst.gamma(k)

    a_sum = sum((1.0 / p.dl_snr + beta_eff(k)) / inst.gamma(k) for k in rx)
    for k in rx:
        eta[k] = (1.0 + p.dl_snr * beta_eff(k)) / (p.dl_snr * inst.gamma(k) * a_sum)
    return PowerVector(eta_up={}, eta_dn=eta)


def fair_common_sinr(
    inst: Instance, active: Iterable[int], precoder: Precoder, direction_up: bool
) -> float:
    """The single SINR every active device sees under fair power control.

    Uplink: M~ * ul_snr * phi / (1 + ul_snr * phi * sum(beta~/gamma)), with
    phi = min active gamma. Downlink: M~ / A with A as in fair_downlink.
    M~ is M for MRC and M - L for ZF.
    """
    act = sorted(set(active))
    if not act:
        raise ModelError("empty active set has no common SINR")
    p = inst.params
    L = len(act)
    gain = p.num_antennas if precoder is Precoder.MRC else p.num_antennas - L
    if gain <= 0:
        raise ModelError("ZF needs M > L")

    def beta_eff(k: int) -> float:
        b = inst.beta(k)
        return b if precoder is Precoder.MRC else b - inst.gamma(k)

    ratio = sum(beta_eff(k) / inst.gamma(k) for k in act)
    if direction_up:
        phi = min(inst.gamma(k) for k in act)
        return gain * p.ul_snr * phi / (1.0 + p.ul_snr * phi * ratio)
    a_sum = ratio + (1.0 / p.dl_snr) * sum(1.0 / inst.gamma(k) for k in act)
    return gain / a_sum


def static_coeffs(inst: Instance) -> PowerVector:
    """Instance-lifetime constants min(gamma)/gamma(k), same for both links."""
    g_min = min(inst.gamma(k) for k in range(inst.num_devices))
    eta = {k: g_min / inst.gamma(k) for k in range(inst.num_devices)}
    return PowerVector(eta_up=dict(eta), eta_dn=dict(eta))


def resolve_power(
    scheme: PowerScheme,
    inst: Instance,
    tx: Iterable[int],
    rx: Iterable[int],
    precoder: Precoder,
    proposed: Optional[PowerVector] = None,
) -> PowerVector:
    """Produce the validated coefficient vector a compatible set will carry.

    OPTIMAL and DOWNLINK pass through the coefficients found by the pricing
    solve (range-checked here; DOWNLINK additionally forces full uplink
    power). FAIR and STATIC ignore any proposal and use their closed forms,
    restricted to the membership.
    """
    tx = sorted(set(tx))
    rx = sorted(set(rx))
    if scheme is PowerScheme.FAIR:
        up = fair_uplink(inst, tx).eta_up
        dn = fair_downlink(inst, rx, precoder).eta_dn
        eta_up = {k: up[k] for k in tx}
        eta_dn = {k: dn[k] for k in rx}
    elif scheme is PowerScheme.STATIC:
        const = static_coeffs(inst)
        eta_up = {k: const.up(k) for k in tx}
        eta_dn = {k: const.dn(k) for k in rx}
    else:
        if proposed is None:
            raise ModelError(f"{scheme.value} power resolution needs proposed coefficients")
        eta_up = {k: proposed.up(k) for k in tx}
        eta_dn = {k: proposed.dn(k) for k in rx}
        if scheme is PowerScheme.DOWNLINK:
            eta_up = {k: 1.0 for k in tx}

    for k in tx:
        if eta_up[k] < -POWER_TOL or eta_up[k] > 1.0 + POWER_TOL:
            raise InfeasiblePowerError(
                f"uplink coefficient {eta_up[k]} of active device {k} outside [0, 1]"
            )
    total_dn = sum(eta_dn.values())
    if total_dn > 1.0 + POWER_TOL:
        raise InfeasiblePowerError(
            f"downlink coefficients of active devices sum to {total_dn} > 1"
        )
    for k in rx:
        if eta_dn[k] < -POWER_TOL:
            raise InfeasiblePowerError(f"negative downlink coefficient for device {k}")
    return PowerVector(eta_up=eta_up, eta_dn=eta_dn)
