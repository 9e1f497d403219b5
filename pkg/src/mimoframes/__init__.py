"""Minimum-length massive MIMO transmission frames via compatible-set column generation."""

from .model import (
    CompatibleSet,
    Device,
    Direction,
    Instance,
    ModelError,
    Precoder,
    SystemParams,
    channel_gamma,
    effective_sinr,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    make_device,
    path_loss_beta,
    save_instance,
)
from .powerctl import (
    InfeasiblePowerError,
    PowerScheme,
    PowerVector,
    fair_common_sinr,
    fair_downlink,
    fair_uplink,
    resolve_power,
    static_coeffs,
)
from .pricing import (
    Candidate,
    DualPrices,
    PricingOptions,
    build_pricing,
    membership_feasible,
    solve_pricing,
    verify_candidate,
)
from .colgen import (
    CgOptions,
    CgResult,
    ColumnPool,
    InstanceInfeasibleError,
    MasterSolution,
    RunReport,
    Schedule,
    heuristic_frame_ip,
    initial_pool,
    lower_bounds,
    round_up_schedule,
    run_cg,
    solve_frame_ip,
    solve_instance,
    solve_master,
    validate_schedule,
)
from .scenarios import EXPERIMENTS, K_SWEEP, MU_SWEEP, SCENARIOS, build_instance

__version__ = "0.1.0"
