"""Residual Q-learning policy customization on discrete MDPs.

Exact and sample-based customization of a prior policy toward an add-on
reward, residual max-entropy MCTS, baseline schemes, and an experiment
harness that checks every customized policy against the exact soft-optimal
policy of the combined-reward MDP.
"""

from rqlab.mdp import (
    DiscreteMdp,
    RewardSelector,
    ValidationReport,
    compose_reward,
    sample_transition,
    validate_mdp,
)
from rqlab.residual import (
    CustomizationParams,
    TdLearnerParams,
    residual_policy,
    residual_soft_policy_iteration,
    residual_soft_q_iteration,
    residual_soft_q_learning,
)
from rqlab.soft import (
    NonConvergenceError,
    SoftSolverParams,
    boltzmann_policy,
    log_partition,
    soft_policy_evaluation,
    soft_value_iteration,
)

__version__ = "0.1.0"

__all__ = [
    "CustomizationParams", "DiscreteMdp", "NonConvergenceError", "RewardSelector",
    "SoftSolverParams", "TdLearnerParams", "ValidationReport", "boltzmann_policy",
    "compose_reward", "log_partition", "residual_policy", "residual_soft_policy_iteration",
    "residual_soft_q_iteration", "residual_soft_q_learning", "sample_transition",
    "soft_policy_evaluation", "soft_value_iteration", "validate_mdp",
]
