"""Desk-scale laboratory for critic-free online RL on flow-matching policies.

Policies are small velocity-field networks trained without critics or
likelihood evaluations: rollouts record stochastic sampler transitions,
outcomes split them into preferred and rejected mirrored branches, and a
ranking loss over per-step branch errors carries the learning signal. The
verify module certifies every supporting identity executably.
"""

from .autodiff import Tensor
from .config import (
    build_manifest,
    config_echo,
    config_hash,
    load_manifest,
    parse_config,
    parse_echo,
    verify_manifest,
    write_manifest,
)
from .envs import (
    BanditConfig,
    ContextBandit,
    DemoSet,
    ReachConfig,
    ReachTask,
    bandit_demos,
    make_env,
    reach_demos,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    DegenerateCovarianceError,
    DomainError,
    StepNFTError,
    TrainingAbort,
)
from .objective import (
    MirroredBranches,
    StepErrors,
    mirror,
    ranking_loss,
    residual_errors,
    single_branch_loss,
    step_errors,
    total_loss,
    trust_penalty,
    wmse_loss,
)
from .optim import Adam, Sgd, make_optimizer
from .policy import (
    Architecture,
    VelocityField,
    backward,
    init_field,
    load_checkpoint,
    save_checkpoint,
)
from .rng import stream
from .rollout import RolloutBuffer, StepSelector, TransitionRecord, collect
from .sft import train_flow_matching
from .solver import (
    SamplerChain,
    SolverSchedule,
    affine_coefficients,
    dump_chain,
    load_chain,
    ode_step,
    replay_chain,
    run_chain,
    sde_step,
    transition_mean,
)
from .training import (
    EvalReport,
    MetricsRow,
    TrainConfig,
    TrainResult,
    alpha_schedule,
    ema_update,
    evaluate_actions,
    evaluate_field,
    make_sft_field,
    run_training,
)
from .verify import CheckReport, SyntheticOracle, run_all

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Architecture",
    "BanditConfig",
    "CheckReport",
    "CheckpointError",
    "ConfigurationError",
    "ContextBandit",
    "ContractError",
    "DegenerateCovarianceError",
    "DemoSet",
    "DomainError",
    "EvalReport",
    "MetricsRow",
    "MirroredBranches",
    "ReachConfig",
    "ReachTask",
    "RolloutBuffer",
    "SamplerChain",
    "Sgd",
    "SolverSchedule",
    "StepErrors",
    "StepNFTError",
    "StepSelector",
    "SyntheticOracle",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrainingAbort",
    "TransitionRecord",
    "VelocityField",
    "affine_coefficients",
    "alpha_schedule",
    "backward",
    "bandit_demos",
    "build_manifest",
    "collect",
    "config_echo",
    "config_hash",
    "dump_chain",
    "ema_update",
    "evaluate_actions",
    "evaluate_field",
    "init_field",
    "load_chain",
    "load_checkpoint",
    "load_manifest",
    "make_env",
    "make_optimizer",
    "make_sft_field",
    "mirror",
    "ode_step",
    "parse_config",
    "parse_echo",
    "ranking_loss",
    "reach_demos",
    "replay_chain",
    "residual_errors",
    "run_all",
    "run_chain",
    "run_training",
    "save_checkpoint",
    "sde_step",
    "single_branch_loss",
    "step_errors",
    "stream",
    "total_loss",
    "train_flow_matching",
    "transition_mean",
    "trust_penalty",
    "verify_manifest",
    "wmse_loss",
    "write_manifest",
]
