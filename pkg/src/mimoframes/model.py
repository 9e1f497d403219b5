"""System model for a single-cell massive MIMO cell with more devices than pilots.

Holds the physical-layer quantities the scheduler works with: large-scale
channel gains, mean-square channel estimates, per-device traffic demands and
SINR thresholds, plus the long-run effective SINR achieved by a set of
simultaneously active devices under maximum ratio combining (MRC) or zero
forcing (ZF) precoding.

All SNR/SINR quantities here are linear-scale; dB conversion happens at the
I/O boundary only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional


class Precoder(Enum):
    MRC = "mrc"
    ZF = "zf"


class Direction(Enum):
    UP = "up"
    DOWN = "down"


class ModelError(ValueError):
    """Raised for physically meaningless inputs or precoder preconditions."""


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    if x <= 0:
        raise ModelError(f"cannot convert non-positive value {x} to dB")
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class BlockMeta:
    """Coherence-block sample structure, carried for reporting only.

    Requires tau == tau_pilot + tau_up + tau_down; none of these enter the
    optimization.
    """

    duration_s: float
    bandwidth_hz: float
    tau: int
    tau_pilot: int
    tau_up: int
    tau_down: int

    def __post_init__(self):
        if self.tau != self.tau_pilot + self.tau_up + self.tau_down:
            raise ModelError(
                "block samples must split exactly: "
                f"{self.tau} != {self.tau_pilot}+{self.tau_up}+{self.tau_down}"
            )


@dataclass(frozen=True)
class SystemParams:
    """Cell-wide constants: antenna count, SNRs, pilot budget, path loss law."""

    num_antennas: int
    ul_snr: float
    dl_snr: float
    pilot_len: int
    num_pilots: int
    pathloss_exp: float
    ref_dist_m: float
    perfect_csi: bool = False
    block_meta: Optional[BlockMeta] = None

    def __post_init__(self):
        if self.num_antennas < 1 or self.num_pilots < 1 or self.pilot_len < 1:
            raise ModelError("M, P and S must be positive integers")
        if self.num_antennas < self.num_pilots:
            raise ModelError(
                f"need M >= P, got M={self.num_antennas} P={self.num_pilots}"
            )
        if self.ul_snr <= 0 or self.dl_snr <= 0:
            raise ModelError("SNRs must be positive (linear scale)")
        if self.pathloss_exp <= 0 or self.ref_dist_m <= 0:
            raise ModelError("path loss exponent and reference distance must be positive")


def path_loss_beta(dist_m: float, params: SystemParams) -> float:
    """Large-scale gain from distance: (r/R)^(-alpha)."""
    if dist_m <= 0:
        raise ModelError(f"distance must be positive, got {dist_m}")
    return (dist_m / params.ref_dist_m) ** (-params.pathloss_exp)


def channel_gamma(beta: float, params: SystemParams) -> float:
    """Mean-square channel estimate for a device with large-scale gain beta.

    gamma = S*ul_snr*beta^2 / (1 + S*ul_snr*beta); equals beta under perfect
    CSI.
    """
    if beta < 0:
        raise ModelError(f"beta must be non-negative, got {beta}")
    if params.perfect_csi:
        return beta
    sr = params.pilot_len * params.ul_snr
    return sr * beta * beta / (1.0 + sr * beta)


@dataclass(frozen=True)
class Device:
    """One single-antenna end device with its channel and traffic demands."""

    id: int
    beta: float
    gamma: float
    up_demand: int
    down_demand: int
    sinr_threshold: float
    dist_m: Optional[float] = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ModelError(f"device {self.id}: beta must be positive")
        if not (0 < self.gamma <= self.beta * (1 + 1e-12)):
            raise ModelError(f"device {self.id}: need 0 < gamma <= beta")
        if self.up_demand < 0 or self.down_demand < 0:
            raise ModelError(f"device {self.id}: demands must be non-negative")
        if self.up_demand + self.down_demand < 1:
            raise ModelError(f"device {self.id}: at least one demand must be positive")
        if self.sinr_threshold <= 0:
            raise ModelError(f"device {self.id}: SINR threshold must be positive")


def make_device(
    params: SystemParams,
    id: int,
    *,
    dist_m: Optional[float] = None,
    beta: Optional[float] = None,
    up_demand: int = 0,
    down_demand: int = 0,
    sinr_threshold: float = 1.0,
) -> Device:
    """Build a device from either a distance or an explicit beta.

    An explicit beta overrides the distance-derived path loss (shadowing and
    path loss are interchangeable at this level of modelling).
    """
    if beta is None:
        if dist_m is None:
            raise ModelError(f"device {id}: need dist_m or beta")
        beta = path_loss_beta(dist_m, params)
    gamma = channel_gamma(beta, params)
    return Device(
        id=id,
        beta=beta,
        gamma=gamma,
        up_demand=up_demand,
        down_demand=down_demand,
        sinr_threshold=sinr_threshold,
        dist_m=dist_m,
    )


@dataclass(frozen=True)
class Instance:
    """An optimization input: system parameters plus an ordered device list."""

    params: SystemParams
    devices: tuple[Device, ...]

    def __post_init__(self):
        if len(self.devices) < 1:
            raise ModelError("instance needs at least one device")
        ids = [d.id for d in self.devices]
        if ids != list(range(len(ids))):
            raise ModelError("device ids must be dense 0..K-1 in order")
        if not self.params.perfect_csi:
            for d in self.devices:
                expect = channel_gamma(d.beta, self.params)
                if abs(d.gamma - expect) > 1e-12 * max(1.0, abs(expect)):
                    raise ModelError(
                        f"device {d.id}: gamma {d.gamma!r} inconsistent with "
                        f"beta (expected {expect!r})"
                    )

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    def beta(self, k: int) -> float:
        return self.devices[k].beta

    def gamma(self, k: int) -> float:
        return self.devices[k].gamma

    def mu(self, k: int) -> float:
        return self.devices[k].sinr_threshold

    def max_demand_sum(self) -> int:
        return sum(max(d.up_demand, d.down_demand) for d in self.devices)


def effective_sinr(
    inst: Instance,
    precoder: Precoder,
    direction: Direction,
    active_tx: Iterable[int],
    active_rx: Iterable[int],
    eta_up: Mapping[int, float],
    eta_dn: Mapping[int, float],
    k: int,
) -> float:
    """Effective SINR of device k with the given active sets and power coefficients.

    Interference sums run over the active set of the relevant direction only
    (own term included), and the ZF array-gain factor is M - L with L the
    number of active devices in that direction.
    """
    tx = set(active_tx)
    rx = set(active_rx)
    p = inst.params
    M = p.num_antennas

    if direction is Direction.UP:
        if k not in tx:
            raise ModelError(f"device {k} is not uplink-active")
        rho = p.ul_snr
        own = rho * inst.gamma(k) * eta_up[k]
        if precoder is Precoder.MRC:
            gain = M
            interf = rho * sum(inst.beta(j) * eta_up[j] for j in tx)
        else:
            L = len(tx)
            if L >= M:
                raise ModelError(f"ZF needs M > L, got M={M} L={L}")
            gain = M - L
            interf = rho * sum((inst.beta(j) - inst.gamma(j)) * eta_up[j] for j in tx)
        return gain * own / (1.0 + interf)

    if k not in rx:
        raise ModelError(f"device {k} is not downlink-active")
    rho = p.dl_snr
    own = rho * inst.gamma(k) * eta_dn[k]
    total_dn = sum(eta_dn[j] for j in rx)
    if precoder is Precoder.MRC:
        gain = M
        interf = rho * inst.beta(k) * total_dn
    else:
        L = len(rx)
        if L >= M:
            raise ModelError(f"ZF needs M > L, got M={M} L={L}")
        gain = M - L
        interf = rho * (inst.beta(k) - inst.gamma(k)) * total_dn
    return gain * own / (1.0 + interf)


@dataclass(frozen=True)
class CompatibleSet:
    """A set of devices that can share one coherence block.

    tx devices transmit in the uplink phase, rx devices receive in the
    downlink phase (a device may do both). Power coefficients are stored for
    active members only; |tx U rx| is bounded by the pilot budget.
    """

    tx: frozenset[int]
    rx: frozenset[int]
    eta_up: Mapping[int, float]
    eta_dn: Mapping[int, float]

    def __post_init__(self):
        if not self.tx and not self.rx:
            raise ModelError("compatible set must have at least one active device")
        if set(self.eta_up.keys()) != set(self.tx):
            raise ModelError("eta_up must cover exactly the tx members")
        if set(self.eta_dn.keys()) != set(self.rx):
            raise ModelError("eta_dn must cover exactly the rx members")

    @property
    def members(self) -> frozenset[int]:
        return self.tx | self.rx

    def dedup_key(self) -> tuple:
        """Identity under pooling: membership plus powers rounded to 1e-9."""
        up = tuple((k, round(self.eta_up[k], 9)) for k in sorted(self.tx))
        dn = tuple((k, round(self.eta_dn[k], 9)) for k in sorted(self.rx))
        return (tuple(sorted(self.tx)), tuple(sorted(self.rx)), up, dn)

    def membership_key(self) -> tuple:
        return (tuple(sorted(self.tx)), tuple(sorted(self.rx)))


# --- instance file format ----------------------------------------------------
#
# JSON schema (field names fixed):
#   {"params": {"M", "ul_snr_db", "dl_snr_db", "S", "P", "alpha", "ref_dist_m"},
#    "devices": [{"id", "dist_m" | "beta", "h_up", "h_down", "mu_db" | "mu"}]}


def instance_from_dict(doc: dict) -> Instance:
    try:
        pd = doc["params"]
        params = SystemParams(
            num_antennas=int(pd["M"]),
            ul_snr=db_to_linear(float(pd["ul_snr_db"])),
            dl_snr=db_to_linear(float(pd["dl_snr_db"])),
            pilot_len=int(pd["S"]),
            num_pilots=int(pd["P"]),
            pathloss_exp=float(pd["alpha"]),
            ref_dist_m=float(pd["ref_dist_m"]),
            perfect_csi=bool(pd.get("perfect_csi", False)),
        )
        devices = []
        for dd in doc["devices"]:
            if "mu" in dd:
                mu = float(dd["mu"])
            else:
                mu = db_to_linear(float(dd["mu_db"]))
            devices.append(
                make_device(
                    params,
                    int(dd["id"]),
                    dist_m=float(dd["dist_m"]) if "dist_m" in dd else None,
                    beta=float(dd["beta"]) if "beta" in dd else None,
                    up_demand=int(dd["h_up"]),
                    down_demand=int(dd["h_down"]),
                    sinr_threshold=mu,
                )
            )
    except KeyError as exc:
        raise ModelError(f"instance document missing field {exc}") from exc
    return Instance(params=params, devices=tuple(devices))


def instance_to_dict(inst: Instance) -> dict:
    p = inst.params
    doc = {
        "params": {
            "M": p.num_antennas,
            "ul_snr_db": linear_to_db(p.ul_snr),
            "dl_snr_db": linear_to_db(p.dl_snr),
            "S": p.pilot_len,
            "P": p.num_pilots,
            "alpha": p.pathloss_exp,
            "ref_dist_m": p.ref_dist_m,
        },
        "devices": [],
    }
    if p.perfect_csi:
        doc["params"]["perfect_csi"] = True
    for d in inst.devices:
        dd = {
            "id": d.id,
            "h_up": d.up_demand,
            "h_down": d.down_demand,
            "mu": d.sinr_threshold,
        }
        if d.dist_m is not None:
            dd["dist_m"] = d.dist_m
        else:
            dd["beta"] = d.beta
        doc["devices"].append(dd)
    return doc


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def save_instance(inst: Instance, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")
