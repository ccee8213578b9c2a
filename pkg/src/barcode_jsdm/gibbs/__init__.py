from .sampler import (
    ChainState,
    SweepConfig,
    allocate_counts,
    fit,
    initial_state,
    run_chain,
    sweep,
    update_gamma,
    update_hypers,
    update_sample_switches,
    update_species_switches,
    update_u_and_zeta,
)
from .warm_start import kl_divergence, kl_nmf, warm_start

__all__ = [
    "ChainState",
    "SweepConfig",
    "allocate_counts",
    "fit",
    "initial_state",
    "kl_divergence",
    "kl_nmf",
    "run_chain",
    "sweep",
    "update_gamma",
    "update_hypers",
    "update_sample_switches",
    "update_species_switches",
    "update_u_and_zeta",
    "warm_start",
]
