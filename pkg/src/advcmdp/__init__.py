"""Primal-dual policy optimization for adversarial constrained linear MDPs.

An episodic learner for finite-horizon constrained MDPs whose transitions,
losses, and costs are linear in a known feature map. Losses may change
arbitrarily between episodes (revealed after acting); the constraint cost is
observed only along the trajectory. The learner combines least-squares
estimation with pessimistic-for-the-constraint bonuses, exponential-weights
policy updates with periodic uniform mixing, epoch resets on design-matrix
determinant doubling, and a regularized dual ascent step.

Subpackages of interest:

- envmodel: the model class, declarative configs, the job-scheduling preset
- learner:  the per-episode loop (LearnerState, run)
- oracle:   exact DP evaluation and the constrained-optimum baseline
- harness:  multi-seed experiment runner and CLI backend
- kernels:  numba-accelerated hot loops with a pure-numpy fallback
"""

from .envmodel import (
    JOB_PRESET_ID,
    LinearCmdpSpec,
    job_scheduling_spec,
    preset_config,
    spec_from_config,
)
from .errors import (
    AdvCmdpError,
    ConfigError,
    InfeasibleError,
    InternalConsistencyError,
    MonitorViolation,
)
from .estimate import (
    FIG1_PRESET_ID,
    THEORY_PRESET_ID,
    HyperParams,
    fig1_hyperparams,
    hyperparams_preset,
    theory_hyperparams,
)
from .harness import ExperimentConfig, load_config, run_experiment, validate_config
from .learner import EpisodeRecord, LearnerState, run
from .metrics import RunMetrics, finalize, write_csv
from .oracle import ConstrainedOptimum, constrained_optimum, dp_policy_value, slater_margin
from .rngs import stream_bundle

__version__ = "0.1.0"

__all__ = [
    "AdvCmdpError",
    "ConfigError",
    "ConstrainedOptimum",
    "EpisodeRecord",
    "ExperimentConfig",
    "FIG1_PRESET_ID",
    "HyperParams",
    "InfeasibleError",
    "InternalConsistencyError",
    "JOB_PRESET_ID",
    "LearnerState",
    "LinearCmdpSpec",
    "MonitorViolation",
    "RunMetrics",
    "THEORY_PRESET_ID",
    "constrained_optimum",
    "dp_policy_value",
    "fig1_hyperparams",
    "finalize",
    "hyperparams_preset",
    "job_scheduling_spec",
    "load_config",
    "preset_config",
    "run",
    "run_experiment",
    "slater_margin",
    "spec_from_config",
    "stream_bundle",
    "theory_hyperparams",
    "validate_config",
    "write_csv",
]
