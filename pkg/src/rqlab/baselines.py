"""Alternative customization schemes, for contrast with residual Q-learning.

* greedy: evaluate the add-on reward under the current policy, then combine
  it with the prior in closed form, ignoring how the prior's own future
  values change under the new policy.
* kl-reward: penalize the add-on reward by beta * ln(policy / prior) and
  re-solve, with a damped outer loop since the reward depends on the policy.
* likelihood-aug: solve for reward r_R + omega' ln prior directly. Its soft
  Q equals Q_R + omega' ln prior, so it is an exact reformulation.

All of them reuse the exact solvers from :mod:`rqlab.soft`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rqlab.mdp import DiscreteMdp, RewardSelector
from rqlab.residual import CustomizationParams
from rqlab.soft import (
    NonConvergenceError,
    SoftSolverParams,
    boltzmann_policy,
    check_policy,
    evaluate_with_bonus,
    log_boltzmann,
    soft_policy_evaluation,
    solve_soft_q,
)


@dataclass(frozen=True)
class GreedyParams:
    lam: float = 1.0
    alpha_hat: float = 1.0
    gamma: float | None = None
    tol: float = 1e-8
    max_iter: int = 10_000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.alpha_hat <= 0:
            raise ValueError("alpha_hat must be positive")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol and max_iter must be positive")


@dataclass(frozen=True)
class KlRewardParams:
    beta: float = 1.0
    damping: float = 0.5
    outer_iters: int = 2000
    alpha_hat: float = 1.0
    gamma: float | None = None
    tol: float = 1e-8
    max_iter: int = 100_000

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.alpha_hat <= 0:
            raise ValueError("alpha_hat must be positive")
        if self.outer_iters < 1 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("outer_iters, tol and max_iter must be positive")


def greedy_customization(mdp: DiscreteMdp, prior, params: GreedyParams = GreedyParams(),
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Greedy reward decomposition; returns (Q_tilde_R, policy).

    Alternates soft evaluation of the add-on reward under the current policy
    (entropy weight alpha_hat) with
    policy ∝ exp((Q_tilde_R + lam ln prior) / (alpha_hat + lam)).
    Starts from the prior.
    """
    prior = check_policy(prior, (mdp.n_states, mdp.n_actions))
    log_prior = np.log(prior)
    gamma = mdp.discount if params.gamma is None else params.gamma
    temp = params.alpha_hat + params.lam
    policy = prior.copy()
    gap = np.inf
    for _ in range(params.max_iter):
        q = evaluate_with_bonus(mdp, mdp.addon_reward, policy,
                                -params.alpha_hat * np.log(policy), params.tol,
                                100_000, gamma=gamma)
        improved = np.exp(log_boltzmann(q + params.lam * log_prior, temp))
        gap = float(np.max(np.abs(improved - policy)))
        policy = improved
        if gap <= params.tol:
            q = evaluate_with_bonus(mdp, mdp.addon_reward, policy,
                                    -params.alpha_hat * np.log(policy), params.tol,
                                    100_000, gamma=gamma)
            return q, policy
    raise NonConvergenceError("greedy customization did not converge", gap,
                              params.max_iter, last=policy)


def kl_augmented_rl(mdp: DiscreteMdp, prior, params: KlRewardParams = KlRewardParams(),
                    history: list | None = None) -> np.ndarray:
    """KL-penalized add-on reward solved by a damped fixed-point loop.

    Each outer step solves the soft MDP with reward
    r_R - beta ln(policy / prior) at temperature alpha_hat. The first step
    replaces the prior outright; later steps move ``damping`` of the way to
    the new Boltzmann policy. ``history`` receives the policy change per step.
    On failure the raised error carries the last policy and the final gap.
    """
    prior = check_policy(prior, (mdp.n_states, mdp.n_actions))
    log_prior = np.log(prior)
    inner = SoftSolverParams(params.alpha_hat, params.tol, params.max_iter)
    policy = prior.copy()
    gap = np.inf
    for k in range(params.outer_iters):
        reward = mdp.addon_reward - params.beta * (np.log(policy) - log_prior)
        q = solve_soft_q(mdp, reward, inner, gamma=params.gamma)
        target = boltzmann_policy(q, params.alpha_hat)
        step = 1.0 if k == 0 else params.damping
        new = (1.0 - step) * policy + step * target
        gap = float(np.max(np.abs(new - policy)))
        if history is not None:
            history.append(gap)
        policy = new / new.sum(axis=1, keepdims=True)
        if gap <= params.tol:
            return policy
    raise NonConvergenceError("KL-augmented outer loop did not converge", gap,
                              params.outer_iters, last=policy)


def likelihood_augmented_rl(mdp: DiscreteMdp, prior,
                            params: CustomizationParams = CustomizationParams(),
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Soft-optimal Q for reward r_R + omega' ln prior at alpha_hat, and its policy."""
    prior = check_policy(prior, (mdp.n_states, mdp.n_actions))
    reward = mdp.addon_reward + params.omega_prime * np.log(prior)
    q_aug = solve_soft_q(mdp, reward, SoftSolverParams(params.alpha_hat, params.tol,
                                                       params.max_iter),
                         gamma=params.discount(mdp))
    return q_aug, boltzmann_policy(q_aug, params.alpha_hat)


def entropy_augmented_value(mdp: DiscreteMdp, policy: np.ndarray, omega: float,
                            alpha_hat: float, tol: float = 1e-10) -> np.ndarray:
    """Per-state soft value of ``policy`` on reward omega * r + r_R with alpha_hat entropy.

    This is the objective residual Q-learning maximizes, so any other policy
    scores at most as well in every state.
    """
    q = soft_policy_evaluation(mdp, RewardSelector.combined(omega), policy,
                               SoftSolverParams(alpha_hat, tol))
    return np.sum(policy * (q - alpha_hat * np.log(policy)), axis=1)
