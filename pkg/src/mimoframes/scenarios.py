"""Deterministic factory for the benchmark experiment instances.

Six experiment configurations place two device groups (near/far) at fixed
distances; six scenarios assign each group high (10) or low (2) uplink and
downlink demands in coherence blocks. Defaults: 100 antennas, 10 dB SNR both
ways, unit SINR threshold, pilot length 1, 12 pilots, path loss exponent
3.7, reference distance 200 m, 40 devices split evenly.

Experiment 4 sweeps the SINR threshold over {1, 5, 10, ..., 50} (linear) at
20 devices; experiment 5 sweeps the device count over {4, 8, ..., 40};
experiment 6 is the unbalanced split: 8 near at 50 m, 32 far at 500 m.
Everything here is a pure function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .model import Instance, ModelError, SystemParams, make_device

DEFAULT_M = 100
DEFAULT_SNR_DB = 10.0
DEFAULT_MU = 1.0
DEFAULT_S = 1
DEFAULT_P = 12
DEFAULT_ALPHA = 3.7
DEFAULT_REF_DIST_M = 200.0
DEFAULT_K = 40

MU_SWEEP = (1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0)
K_SWEEP = (4, 8, 12, 16, 20, 24, 28, 32, 36, 40)


@dataclass(frozen=True)
class ExperimentConfig:
    id: int
    near_dist_m: float
    far_dist_m: float
    num_devices: int
    near_count: Optional[int] = None  # defaults to an even split

    def split(self) -> tuple[int, int]:
        near = self.near_count if self.near_count is not None else self.num_devices // 2
        return near, self.num_devices - near


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    near_up: int
    near_down: int
    far_up: int
    far_down: int


EXPERIMENTS = {
    1: ExperimentConfig(1, 50.0, 200.0, DEFAULT_K),
    2: ExperimentConfig(2, 200.0, 400.0, DEFAULT_K),
    3: ExperimentConfig(3, 50.0, 100.0, DEFAULT_K),
    4: ExperimentConfig(4, 50.0, 100.0, 20),
    5: ExperimentConfig(5, 50.0, 100.0, DEFAULT_K),
    6: ExperimentConfig(6, 50.0, 500.0, DEFAULT_K, near_count=8),
}

SCENARIOS = {
    1: ScenarioSpec(1, 10, 10, 2, 2),
    2: ScenarioSpec(2, 2, 2, 10, 10),
    3: ScenarioSpec(3, 2, 10, 10, 2),
    4: ScenarioSpec(4, 10, 2, 2, 10),
    5: ScenarioSpec(5, 10, 2, 10, 2),
    6: ScenarioSpec(6, 2, 10, 2, 10),
}


def build_instance(
    experiment: int,
    scenario: int,
    *,
    mu: Optional[float] = None,
    num_devices: Optional[int] = None,
) -> Instance:
    """Instance for one (experiment, scenario) cell of the study.

    ``mu`` overrides the common linear SINR threshold (the experiment-4
    sweep); ``num_devices`` overrides K (the experiment-5 sweep, must be
    even to keep the near/far split exact except for experiment 6).
    """
    if experiment not in EXPERIMENTS:
        raise ModelError(f"unknown experiment id {experiment}")
    if scenario not in SCENARIOS:
        raise ModelError(f"unknown scenario id {scenario}")
    exp = EXPERIMENTS[experiment]
    sc = SCENARIOS[scenario]
    if num_devices is not None:
        if exp.near_count is not None:
            if num_devices % 5:
                raise ModelError("experiment 6 needs a device count divisible by 5")
            exp = ExperimentConfig(
                exp.id, exp.near_dist_m, exp.far_dist_m, num_devices, num_devices // 5
            )
        else:
            if num_devices % 2:
                raise ModelError("device count must be even for an even split")
            exp = ExperimentConfig(exp.id, exp.near_dist_m, exp.far_dist_m, num_devices)
    mu_val = DEFAULT_MU if mu is None else float(mu)
    if mu_val <= 0:
        raise ModelError("SINR threshold must be positive")

    params = SystemParams(
        num_antennas=DEFAULT_M,
        ul_snr=10.0 ** (DEFAULT_SNR_DB / 10.0),
        dl_snr=10.0 ** (DEFAULT_SNR_DB / 10.0),
        pilot_len=DEFAULT_S,
        num_pilots=DEFAULT_P,
        pathloss_exp=DEFAULT_ALPHA,
        ref_dist_m=DEFAULT_REF_DIST_M,
    )
    near, far = exp.split()
    devices = []
    for i in range(near):
        devices.append(
            make_device(
                params,
                i,
                dist_m=exp.near_dist_m,
                up_demand=sc.near_up,
                down_demand=sc.near_down,
                sinr_threshold=mu_val,
            )
        )
    for i in range(far):
        devices.append(
            make_device(
                params,
                near + i,
                dist_m=exp.far_dist_m,
                up_demand=sc.far_up,
                down_demand=sc.far_down,
                sinr_threshold=mu_val,
            )
        )
    return Instance(params=params, devices=tuple(devices))
