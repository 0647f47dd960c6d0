from .bandit import AliasingBandit, aliasing_tasks
from .base import SimulationBlowUp, Transition, stack_transitions
from .diagnostic import (
    DiagnosticEnv,
    DiagnosticFamily,
    DiagnosticInstance,
    OracleEncoder,
    batch_rollout,
    RolloutEstimate,
    collect_contexts,
    diagnostic_rollout,
)
from .domain import PLATOON_DEPLOY, PLATOON_TRAIN, DomainDistribution, EnvParams, sample_env
from .platoon import (
    Collision,
    FvdParams,
    PlatoonConfig,
    PlatoonEnv,
    PlatoonState,
    fvd_accel,
    ittc_cost,
    oscillation_ratio,
    platoon_step,
    reward_terms,
    run_uncontrolled,
)
