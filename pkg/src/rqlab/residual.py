"""Residual Q-learning: customize a prior policy toward an add-on reward.

The learned object is the residual Q_R = Q_hat - omega * Q_prior, whose
backup needs only the add-on reward and the prior's log-probabilities:

    Q_R(s, a) <- r_R(s, a) + gamma * E_{s'}[ V_R(s') ]
    V_R(s')    = alpha_hat * log sum_a' exp((Q_R(s', a') + omega' ln prior(a'|s')) / alpha_hat)

with omega' = omega * alpha_prior. The customized policy is
softmax((Q_R + omega' ln prior) / alpha_hat).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from rqlab.mdp import DiscreteMdp
from rqlab.soft import (
    NonConvergenceError,
    check_policy,
    evaluate_with_bonus,
    expected_next,
    iterate_to_fixed_point,
    log_boltzmann,
    soft_state_values,
)


@dataclass(frozen=True)
class CustomizationParams:
    """omega_prime weights the prior's log-likelihood; alpha_hat is the new temperature.

    ``gamma=None`` means "use the MDP's discount".
    """

    omega_prime: float = 1.0
    alpha_hat: float = 1.0
    gamma: float | None = None
    tol: float = 1e-8
    max_iter: int = 100_000

    def __post_init__(self):
        if self.omega_prime < 0:
            raise ValueError(f"omega_prime must be nonnegative, got {self.omega_prime}")
        if self.alpha_hat <= 0:
            raise ValueError(f"alpha_hat must be positive, got {self.alpha_hat}")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol and max_iter must be positive")

    def discount(self, mdp: DiscreteMdp) -> float:
        return mdp.discount if self.gamma is None else self.gamma


def _log_prior(prior, mdp: DiscreteMdp | None = None) -> np.ndarray:
    shape = None if mdp is None else (mdp.n_states, mdp.n_actions)
    return np.log(check_policy(prior, shape))


def residual_logits(q_r: np.ndarray, log_prior: np.ndarray, omega_prime: float) -> np.ndarray:
    return q_r + omega_prime * log_prior


def residual_state_values(q_r: np.ndarray, log_prior: np.ndarray,
                          params: CustomizationParams) -> np.ndarray:
    """V_R(s) = alpha_hat * lse_a((Q_R(s, a) + omega' ln prior(a|s)) / alpha_hat)."""
    return soft_state_values(residual_logits(q_r, log_prior, params.omega_prime),
                             params.alpha_hat)


def residual_soft_q_iteration(mdp: DiscreteMdp, prior, params: CustomizationParams,
                              trace: list | None = None) -> np.ndarray:
    """Exact residual soft Q-iteration; returns the fixed-point Q_R table."""
    log_prior = _log_prior(prior, mdp)
    gamma = params.discount(mdp)
    r_addon = mdp.addon_reward

    def step(q_r):
        return r_addon + gamma * expected_next(mdp, residual_state_values(q_r, log_prior, params))

    return iterate_to_fixed_point(step, np.zeros_like(r_addon), gamma, params.tol,
                                  params.max_iter, trace, "residual soft Q-iteration")


def residual_policy(q_r: np.ndarray, prior, params: CustomizationParams) -> np.ndarray:
    """Customized policy: softmax((Q_R + omega' ln prior) / alpha_hat) per state."""
    log_prior = _log_prior(prior)
    return np.exp(log_boltzmann(residual_logits(q_r, log_prior, params.omega_prime),
                                params.alpha_hat))


# --------------------------------------------------------------------------
# TD errors (single transition)


def residual_td_error(mdp: DiscreteMdp, q_r: np.ndarray, q_r_target: np.ndarray, prior,
                      params: CustomizationParams, s: int, a: int,
                      next_state: int | None = None) -> float:
    """TD error of the residual target.

    With ``next_state=None`` the target takes the exact expectation over s';
    otherwise it bootstraps from the sampled next state.
    """
    log_prior = _log_prior(prior)
    gamma = params.discount(mdp)
    v = residual_state_values(q_r_target, log_prior, params)
    v = np.where(mdp.terminal, 0.0, v)
    cont = mdp.transition[s, a] @ v if next_state is None else v[next_state]
    return float(mdp.addon_reward[s, a] + gamma * cont - q_r[s, a])


def soft_td_error(mdp: DiscreteMdp, reward: np.ndarray, q_hat: np.ndarray,
                  q_hat_target: np.ndarray, alpha_hat: float, s: int, a: int,
                  gamma: float | None = None, next_state: int | None = None) -> float:
    """TD error of the ordinary soft Q target on an explicit reward."""
    gamma = mdp.discount if gamma is None else gamma
    v = np.where(mdp.terminal, 0.0, soft_state_values(q_hat_target, alpha_hat))
    cont = mdp.transition[s, a] @ v if next_state is None else v[next_state]
    return float(reward[s, a] + gamma * cont - q_hat[s, a])


# --------------------------------------------------------------------------
# residual soft policy iteration (tabular residual soft actor-critic)


def residual_policy_evaluation(mdp: DiscreteMdp, log_prior: np.ndarray, policy: np.ndarray,
                               params: CustomizationParams) -> np.ndarray:
    """Q_R = r_R + gamma E_{s'} E_{a'~policy}[Q_R + omega' ln prior - alpha_hat ln policy]."""
    bonus = params.omega_prime * log_prior - params.alpha_hat * np.log(policy)
    return evaluate_with_bonus(mdp, mdp.addon_reward, policy, bonus, params.tol,
                               params.max_iter, gamma=params.discount(mdp))


def residual_soft_policy_iteration(
        mdp: DiscreteMdp, prior, params: CustomizationParams,
        initial_policy: np.ndarray | None = None,
        callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Alternate exact residual policy evaluation and closed-form improvement.

    Starts from ``initial_policy`` (default: the prior) and stops when the
    improved policy moves by at most ``params.tol`` in sup-norm.
    ``callback(k, q_r, policy)`` sees every evaluated policy.
    """
    prior = check_policy(prior, (mdp.n_states, mdp.n_actions))
    log_prior = np.log(prior)
    policy = prior.copy() if initial_policy is None else check_policy(initial_policy, prior.shape)
    gap = np.inf
    for k in range(params.max_iter):
        q_r = residual_policy_evaluation(mdp, log_prior, policy, params)
        if callback is not None:
            callback(k, q_r, policy)
        improved = np.exp(log_boltzmann(residual_logits(q_r, log_prior, params.omega_prime),
                                        params.alpha_hat))
        gap = float(np.max(np.abs(improved - policy)))
        policy = improved
        if gap <= params.tol:
            q_r = residual_policy_evaluation(mdp, log_prior, policy, params)
            return q_r, policy
    raise NonConvergenceError("residual soft policy iteration did not converge",
                              gap, params.max_iter, last=policy)


# --------------------------------------------------------------------------
# sample-based residual soft Q-learning


@dataclass(frozen=True)
class TdLearnerParams:
    """Tabular TD learner settings.

    The step size follows ``learning_rate / (1 + t / lr_decay_steps)`` where t
    counts environment steps. Behavior actions come from the current residual
    policy mixed with ``explore_epsilon`` of uniform.
    """

    learning_rate: float = 0.5
    lr_decay_steps: float = 10_000.0
    episodes: int = 3000
    steps_per_episode: int = 20
    replay_capacity: int = 100_000
    batch_size: int = 16
    target_sync_interval: int = 500
    explore_epsilon: float = 0.05

    def __post_init__(self):
        for name in ("learning_rate", "lr_decay_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("episodes", "steps_per_episode", "replay_capacity", "batch_size",
                     "target_sync_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.batch_size > self.replay_capacity:
            raise ValueError("batch_size must not exceed replay_capacity")
        if not 0.0 <= self.explore_epsilon <= 1.0:
            raise ValueError("explore_epsilon must lie in [0, 1]")

    def lr_at(self, t: int) -> float:
        return self.learning_rate / (1.0 + t / self.lr_decay_steps)


class ReplayBuffer:
    """Fixed-capacity ring buffer of (s, a, r_R, s', terminal) transitions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.states = np.zeros(capacity, dtype=np.int64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros(capacity, dtype=np.int64)
        self.terminals = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s: int, a: int, r: float, s2: int, terminal: bool) -> None:
        i = self._next
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.terminals[i] = terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from {self._size} transitions")
        idx = rng.integers(0, self._size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])


@dataclass
class LearningCurve:
    addon_return: list[float] = field(default_factory=list)
    basic_return: list[float] = field(default_factory=list)
    sup_norm_gap: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.addon_return)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode_index", "addon_return", "basic_return",
                        "sup_norm_gap_to_exact"])
            gaps = self.sup_norm_gap or [math.nan] * len(self)
            for i, (ra, rb, g) in enumerate(zip(self.addon_return, self.basic_return, gaps)):
                w.writerow([i, f"{ra:.6g}", f"{rb:.6g}", "" if math.isnan(g) else f"{g:.6g}"])


def residual_soft_q_learning(env, prior, cparams: CustomizationParams,
                             lparams: TdLearnerParams, rng: np.random.Generator,
                             reference: np.ndarray | None = None,
                             ) -> tuple[np.ndarray, LearningCurve]:
    """Tabular residual soft Q-learning from sampled transitions.

    ``env`` needs ``reset(rng)``, ``step(action, rng)`` and an ``mdp``
    attribute whose ``terminal`` mask says which next states end the
    bootstrap. Updates start once the buffer holds ``batch_size``
    transitions. ``reference`` (an exact Q_R) adds a sup-norm gap column to
    the learning curve.
    """
    mdp: DiscreteMdp = env.mdp
    log_prior = _log_prior(prior, mdp)
    n_actions = mdp.n_actions
    gamma = cparams.discount(mdp)
    terminal = mdp.terminal
    eps = lparams.explore_epsilon

    q_r = np.zeros((mdp.n_states, n_actions))
    buffer = ReplayBuffer(lparams.replay_capacity)
    curve = LearningCurve()

    def target_values(table):
        return np.where(terminal, 0.0, residual_state_values(table, log_prior, cparams))

    v_target = target_values(q_r)
    t = 0
    for _ in range(lparams.episodes):
        s = env.reset(rng)
        ret_addon = ret_basic = 0.0
        for _ in range(lparams.steps_per_episode):
            logits = (q_r[s] + cparams.omega_prime * log_prior[s]) / cparams.alpha_hat
            probs = np.exp(logits - logits.max())
            probs = (1.0 - eps) * probs / probs.sum() + eps / n_actions
            cum = np.cumsum(probs)
            a = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")),
                    n_actions - 1)
            s2, r_basic, r_addon, done = env.step(a, rng)
            ret_addon += r_addon
            ret_basic += r_basic
            buffer.add(s, a, r_addon, s2, terminal[s2])

            if len(buffer) >= lparams.batch_size:
                bs, ba, br, bs2, _ = buffer.sample(lparams.batch_size, rng)
                # duplicates in a batch share one step toward their mean target
                keys, inv = np.unique(bs * n_actions + ba, return_inverse=True)
                counts = np.bincount(inv)
                mean_target = np.bincount(inv, br + gamma * v_target[bs2]) / counts
                flat = q_r.reshape(-1)
                flat[keys] += lparams.lr_at(t) * (mean_target - flat[keys])
            t += 1
            if t % lparams.target_sync_interval == 0:
                v_target = target_values(q_r)
            if done:
                break
            s = s2
        curve.addon_return.append(ret_addon)
        curve.basic_return.append(ret_basic)
        if reference is not None:
            curve.sup_norm_gap.append(float(np.max(np.abs(q_r - reference))))
    return q_r, curve
