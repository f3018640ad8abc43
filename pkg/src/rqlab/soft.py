"""Exact entropy-regularized solvers.

These are the ground truth every customization method is checked against:
soft value iteration, Boltzmann policy extraction, the log-partition and
soft policy evaluation. All solvers use synchronous (Jacobi) sweeps and stop
once the sup-norm gap between successive iterates is at most
``tol * (1 - gamma) / gamma``, which bounds the distance to the true fixed
point by ``tol``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from rqlab.mdp import DiscreteMdp, RewardSelector, compose_reward

POLICY_TOL = 1e-12
PROB_FLOOR = 1e-300


class NonConvergenceError(RuntimeError):
    """An iterative solver hit ``max_iter`` before reaching its tolerance.

    ``last`` holds the final iterate so callers can still inspect it.
    """

    def __init__(self, message: str, residual: float, iterations: int, last=None):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations
        self.last = last


@dataclass(frozen=True)
class SoftSolverParams:
    alpha: float = 1.0
    tol: float = 1e-8
    max_iter: int = 100_000

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be positive, got {self.max_iter}")


def stopping_threshold(tol: float, gamma: float) -> float:
    if gamma == 0.0:
        return np.inf
    return tol * (1.0 - gamma) / gamma


def iterate_to_fixed_point(step: Callable[[np.ndarray], np.ndarray], q0: np.ndarray,
                           gamma: float, tol: float, max_iter: int,
                           trace: list | None = None, what: str = "fixed point") -> np.ndarray:
    """Apply ``step`` until successive iterates are within the stopping threshold.

    ``trace``, when given, receives the sup-norm gap of every sweep.
    """
    threshold = stopping_threshold(tol, gamma)
    q = q0
    gap = np.inf
    for it in range(1, max_iter + 1):
        q_next = step(q)
        gap = float(np.max(np.abs(q_next - q))) if q.size else 0.0
        if trace is not None:
            trace.append(gap)
        q = q_next
        if gap <= threshold:
            return q
    raise NonConvergenceError(f"{what} did not converge", gap, max_iter, last=q)


def soft_state_values(q: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * log sum_a exp(Q(s, a) / alpha), per state."""
    return alpha * logsumexp(q / alpha, axis=1)


def expected_next(mdp: DiscreteMdp, v: np.ndarray) -> np.ndarray:
    """E_{s'}[v(s')] per (s, a), with terminal continuation values masked to 0."""
    return mdp.transition @ np.where(mdp.terminal, 0.0, v)


def solve_soft_q(mdp: DiscreteMdp, reward: np.ndarray, params: SoftSolverParams,
                 gamma: float | None = None, trace: list | None = None) -> np.ndarray:
    """Soft value iteration on an explicit reward table."""
    gamma = mdp.discount if gamma is None else gamma
    reward = np.asarray(reward, dtype=float)
    alpha = params.alpha

    def step(q):
        return reward + gamma * expected_next(mdp, soft_state_values(q, alpha))

    return iterate_to_fixed_point(step, np.zeros_like(reward), gamma, params.tol,
                                  params.max_iter, trace, "soft value iteration")


def soft_value_iteration(mdp: DiscreteMdp, selector: RewardSelector,
                         params: SoftSolverParams = SoftSolverParams(),
                         trace: list | None = None) -> np.ndarray:
    """Soft-optimal Q for the selected reward channel."""
    return solve_soft_q(mdp, compose_reward(mdp, selector), params, trace=trace)


def log_boltzmann(q: np.ndarray, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    z = np.asarray(q, dtype=float) / alpha
    return z - logsumexp(z, axis=-1, keepdims=True)


def boltzmann_policy(q: np.ndarray, alpha: float) -> np.ndarray:
    """Row-wise softmax of Q / alpha (max-shifted)."""
    return np.exp(log_boltzmann(q, alpha))


def log_partition(q: np.ndarray, alpha: float, s: int) -> float:
    """ln Z_s = ln sum_a exp(Q[s, a] / alpha)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return float(logsumexp(np.asarray(q[s], dtype=float) / alpha))


def evaluate_with_bonus(mdp: DiscreteMdp, reward: np.ndarray, policy: np.ndarray,
                        bonus: np.ndarray, tol: float, max_iter: int,
                        gamma: float | None = None) -> np.ndarray:
    """Fixed point of Q = r + gamma * E_{s'} E_{a'~policy}[Q(s', a') + bonus(s', a')].

    Soft policy evaluation is the special case ``bonus = -alpha * ln policy``.
    """
    gamma = mdp.discount if gamma is None else gamma
    reward = np.asarray(reward, dtype=float)
    policy = np.asarray(policy, dtype=float)

    def step(q):
        return reward + gamma * expected_next(mdp, np.sum(policy * (q + bonus), axis=1))

    return iterate_to_fixed_point(step, np.zeros_like(reward), gamma, tol, max_iter,
                                  what="policy evaluation")


def soft_policy_evaluation(mdp: DiscreteMdp, selector: RewardSelector, policy: np.ndarray,
                           params: SoftSolverParams = SoftSolverParams()) -> np.ndarray:
    """Soft Q of a fixed, strictly positive policy."""
    policy = check_policy(policy, (mdp.n_states, mdp.n_actions))
    bonus = -params.alpha * np.log(policy)
    return evaluate_with_bonus(mdp, compose_reward(mdp, selector), policy, bonus,
                               params.tol, params.max_iter)


def soft_state_value_of(policy: np.ndarray, q: np.ndarray, alpha: float) -> np.ndarray:
    """V(s) = E_{a~policy}[Q(s, a) - alpha ln policy(a|s)]."""
    return np.sum(policy * (q - alpha * np.log(policy)), axis=1)


# --------------------------------------------------------------------------
# policy tables


def check_policy(probs, shape: tuple[int, int] | None = None,
                 floor: bool = False) -> np.ndarray:
    """Validate a policy table: rows sum to 1 and all entries are positive.

    With ``floor=True`` zero entries are raised to 1e-300 (with a warning)
    instead of being rejected.
    """
    p = np.array(probs, dtype=float)
    if p.ndim != 2:
        raise ValueError(f"policy must be 2-D, got shape {p.shape}")
    if shape is not None and p.shape != tuple(shape):
        raise ValueError(f"policy shape {p.shape} does not match {tuple(shape)}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("policy has negative or non-finite entries")
    if np.any(p == 0):
        if not floor:
            raise ValueError("policy has zero-probability actions; log-probabilities undefined")
        warnings.warn("policy has zero entries; flooring at 1e-300", stacklevel=2)
        p = np.maximum(p, PROB_FLOOR)
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > POLICY_TOL):
        if not floor:
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(f"policy row {bad} sums to {sums[bad]!r}")
        p /= sums[:, None]
    return p


def total_variation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-state total variation distance between two policy tables."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def save_table(table: np.ndarray, path) -> None:
    Path(path).write_text(json.dumps(np.asarray(table, dtype=float).tolist()), encoding="utf-8")


def load_table(path) -> np.ndarray:
    return np.array(json.loads(Path(path).read_text(encoding="utf-8")), dtype=float)
