"""Population-level simulation: SSA, particle description, conditioned ensembles."""
from .enumeration import EnumerationCheck, detailed_balance_check, enumerate_states, qsd_generator_check
from .ensembles import (
    CoupledExit,
    DominationPreconditionUnverified,
    DominationReport,
    FVDiagnostics,
    check_tail_domination,
    conditioned_ensemble_fv,
    conditioned_ensemble_rejection,
    domination_run,
    sample_dominated_pair,
)
from .particles import ParticleSystem, simulate_particles
from .ssa import (
    EnsembleResult,
    Event,
    ExitRecord,
    SimulationRecord,
    first_exit,
    initial_states,
    run_ensemble,
    sample_product_poisson,
    sample_product_poisson_batch,
    simulate,
    simulate_ensemble,
    ssa_step,
)
from .state import SystemState, label, unlabel

__all__ = [
    "CoupledExit",
    "DominationPreconditionUnverified",
    "DominationReport",
    "EnsembleResult",
    "EnumerationCheck",
    "Event",
    "ExitRecord",
    "FVDiagnostics",
    "ParticleSystem",
    "SimulationRecord",
    "SystemState",
    "check_tail_domination",
    "conditioned_ensemble_fv",
    "conditioned_ensemble_rejection",
    "detailed_balance_check",
    "domination_run",
    "enumerate_states",
    "first_exit",
    "initial_states",
    "label",
    "qsd_generator_check",
    "run_ensemble",
    "sample_dominated_pair",
    "sample_product_poisson",
    "sample_product_poisson_batch",
    "simulate",
    "simulate_ensemble",
    "simulate_particles",
    "ssa_step",
    "unlabel",
]
