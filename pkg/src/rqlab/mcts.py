"""Maximum-entropy Monte Carlo tree search and its residual variant.

In residual mode each node stores residual values q_r for its actions. The
tree policy mixes softmax((q_r + omega' ln prior) / alpha_hat) with a uniform
distribution, and backups use the matching soft state value

    V_R(s) = alpha_hat * lse_a((q_r(s, a) + omega' ln prior(a|s)) / alpha_hat).

Leaves are scored by prior-policy roll-outs of the add-on reward only. Plain
mode is ordinary max-entropy MCTS on ``basic_weight * r + r_R`` with stored
soft Q-values, which equals residual mode when omega' = 0.

The model may be stochastic: a child is created per (action, sampled next
state), and a backup through an interior edge uses the child actually visited.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from rqlab.mdp import DiscreteMdp, sample_transition
from rqlab.soft import check_policy

MODES = ("residual", "plain")
ROOT_RULES = ("argmax", "sample")


@dataclass(frozen=True)
class MctsParams:
    """Search settings; ``gamma=None`` uses the model's discount."""

    iter_max: int = 150
    horizon: int = 6
    epsilon: float = 0.1
    omega_prime: float = 1.0
    alpha_hat: float = 1.0
    gamma: float | None = None
    mode: str = "residual"
    basic_weight: float = 0.0  # plain mode only
    rollouts: int = 1
    root_rule: str = "argmax"
    check_bounds: bool = True

    def __post_init__(self):
        if self.iter_max < 1:
            raise ValueError("iter_max must be at least 1")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.epsilon < 0 or self.omega_prime < 0 or self.basic_weight < 0:
            raise ValueError("epsilon, omega_prime and basic_weight must be nonnegative")
        if self.alpha_hat <= 0:
            raise ValueError("alpha_hat must be positive")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.rollouts < 1:
            raise ValueError("rollouts must be at least 1")
        if self.root_rule not in ROOT_RULES:
            raise ValueError(f"root_rule must be one of {ROOT_RULES}")

    def discount(self, model: DiscreteMdp) -> float:
        return model.discount if self.gamma is None else self.gamma


@dataclass
class SearchNode:
    state: int
    depth: int
    q_r: np.ndarray
    visit_count: np.ndarray
    children: dict[int, dict[int, "SearchNode"]] = field(default_factory=dict)

    @classmethod
    def fresh(cls, state: int, depth: int, n_actions: int) -> "SearchNode":
        return cls(state, depth, np.zeros(n_actions), np.zeros(n_actions, dtype=np.int64))

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            for a in sorted(node.children, reverse=True):
                stack.extend(node.children[a][s] for s in sorted(node.children[a], reverse=True))

    def to_dict(self) -> dict:
        return {"state": self.state, "depth": self.depth, "q_r": self.q_r.tolist(),
                "visit_count": self.visit_count.tolist(),
                "children": {str(a): {str(s): c.to_dict() for s, c in sorted(kids.items())}
                             for a, kids in sorted(self.children.items())}}


@dataclass
class SearchTree:
    root: SearchNode
    params: MctsParams
    iterations: int = 0

    @property
    def node_count(self) -> int:
        return sum(1 for _ in self.root.iter_nodes())

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "mode": self.params.mode,
                "root": self.root.to_dict()}

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")


def _logits(node: SearchNode, log_prior: np.ndarray, params: MctsParams) -> np.ndarray:
    if params.mode == "residual":
        return node.q_r + params.omega_prime * log_prior[node.state]
    return node.q_r


def soft_node_value(node: SearchNode, log_prior: np.ndarray, params: MctsParams) -> float:
    """alpha_hat * lse of the node's logits over / alpha_hat."""
    a = params.alpha_hat
    return float(a * logsumexp(_logits(node, log_prior, params) / a))


def exploration_weight(visits: np.ndarray, epsilon: float) -> float:
    """lambda_s = min(1, eps |A| / ln(sum N + 1)); 1 for an unvisited node."""
    total = int(np.sum(visits))
    if total == 0:
        return 1.0
    return min(1.0, epsilon * len(visits) / math.log(total + 1))


def tree_policy_distribution(node: SearchNode, prior, params: MctsParams) -> np.ndarray:
    """(1 - lambda_s) softmax(logits / alpha_hat) + lambda_s uniform."""
    log_prior = np.log(np.asarray(prior, dtype=float))
    z = _logits(node, log_prior, params) / params.alpha_hat
    soft = np.exp(z - logsumexp(z))
    lam = exploration_weight(node.visit_count, params.epsilon)
    return (1.0 - lam) * soft + lam / len(soft)


def backpropagate(path: list[tuple[SearchNode, int, SearchNode]], terminal_return: float,
                  params: MctsParams, rewards: np.ndarray, log_prior: np.ndarray,
                  gamma: float) -> None:
    """Update q_r and visit counts from the leaf back to the root.

    ``path`` holds (node, action, child) edges in root-to-leaf order; the last
    edge is backed up with the roll-out return, every earlier one with the
    soft value of the child it led to.
    """
    if not path:
        raise ValueError("cannot back up an empty path")
    node, a, _ = path[-1]
    node.q_r[a] = rewards[node.state, a] + gamma * terminal_return
    node.visit_count[a] += 1
    for node, a, child in reversed(path[:-1]):
        node.q_r[a] = rewards[node.state, a] + gamma * soft_node_value(child, log_prior, params)
        node.visit_count[a] += 1


def rollout_return(leaf_state: int, model: DiscreteMdp, prior, depth_remaining: int,
                   gamma: float, rng: np.random.Generator,
                   rewards: np.ndarray | None = None) -> float:
    """Discounted add-on return of one prior-policy roll-out.

    Stops at a terminal state or after ``depth_remaining`` steps. ``rewards``
    overrides the add-on table.
    """
    if depth_remaining < 0:
        raise ValueError("depth_remaining must be nonnegative")
    rewards = model.addon_reward if rewards is None else rewards
    prior = np.asarray(prior, dtype=float)
    s, total, disc = int(leaf_state), 0.0, 1.0
    for _ in range(depth_remaining):
        if model.terminal[s]:
            break
        row = np.cumsum(prior[s])
        a = min(int(np.searchsorted(row, rng.random() * row[-1], side="right")),
                model.n_actions - 1)
        total += disc * rewards[s, a]
        disc *= gamma
        s = sample_transition(model, s, a, rng)
    return total


def value_bound(rewards: np.ndarray, log_prior: np.ndarray, params: MctsParams,
                gamma: float) -> float:
    """Loose bound on any stored value, used as a per-iteration sanity check."""
    r_max = float(np.max(np.abs(rewards)))
    lp = float(np.max(np.abs(log_prior))) if params.mode == "residual" else 0.0
    n_actions = rewards.shape[1]
    per_step = r_max + params.omega_prime * lp + params.alpha_hat * math.log(n_actions)
    return (per_step + r_max) / (1.0 - gamma) + 1e-9


def plan(root_state: int, model: DiscreteMdp, prior, params: MctsParams = MctsParams(),
         rng: np.random.Generator | None = None,
         callback: Callable[[int, SearchTree], None] | None = None,
         ) -> tuple[SearchTree, int]:
    """Run the search from ``root_state`` and return the tree and the root action.

    ``callback(iteration, tree)`` is invoked after every iteration.
    """
    if model.n_actions < 1:
        raise ValueError("model has no actions")
    if not 0 <= root_state < model.n_states:
        raise IndexError(f"root state {root_state} out of range")
    rng = np.random.default_rng() if rng is None else rng
    prior = check_policy(prior, (model.n_states, model.n_actions))
    log_prior = np.log(prior)
    gamma = params.discount(model)
    if params.mode == "residual":
        rewards = model.addon_reward
    else:
        rewards = params.basic_weight * model.basic_reward + model.addon_reward
    bound = value_bound(rewards, log_prior, params, gamma) if params.check_bounds else None
    n_actions = model.n_actions
    root = SearchNode.fresh(int(root_state), 0, n_actions)
    tree = SearchTree(root, params)

    for it in range(params.iter_max):
        node = root
        path: list[tuple[SearchNode, int, SearchNode]] = []
        while not model.terminal[node.state] and node.depth < params.horizon:
            untried = [a for a in range(n_actions) if a not in node.children]
            if untried:
                a = untried[0]
            else:
                dist = tree_policy_distribution(node, prior, params)
                cum = np.cumsum(dist)
                a = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")),
                        n_actions - 1)
            s2 = sample_transition(model, node.state, a, rng)
            kids = node.children.setdefault(a, {})
            child = kids.get(s2)
            created = child is None
            if created:
                child = kids[s2] = SearchNode.fresh(s2, node.depth + 1, n_actions)
            path.append((node, a, child))
            node = child
            if created:
                break
        if not path:
            # the root itself is terminal or the horizon is zero
            break
        remaining = params.horizon - node.depth
        ret = float(np.mean([rollout_return(node.state, model, prior, remaining, gamma, rng,
                                            rewards) for _ in range(params.rollouts)]))
        backpropagate(path, ret, params, rewards, log_prior, gamma)
        tree.iterations = it + 1
        if bound is not None:
            for n, a, _ in path:
                if not abs(n.q_r[a]) <= bound:
                    raise FloatingPointError(
                        f"value {n.q_r[a]!r} at state {n.state} exceeds bound {bound:.3g}")
        if callback is not None:
            callback(it, tree)
    return tree, root_action(root, prior, params, rng)


def root_distribution(root: SearchNode, prior, params: MctsParams) -> np.ndarray:
    """The epsilon = 0 tree policy at the root."""
    log_prior = np.log(np.asarray(prior, dtype=float))
    z = _logits(root, log_prior, params) / params.alpha_hat
    return np.exp(z - logsumexp(z))


def root_action(root: SearchNode, prior, params: MctsParams,
                rng: np.random.Generator | None = None) -> int:
    dist = root_distribution(root, prior, params)
    if params.root_rule == "argmax" or rng is None:
        return int(np.argmax(dist))
    cum = np.cumsum(dist)
    return min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(dist) - 1)


def policy_table_from_search(model: DiscreteMdp, prior, params: MctsParams,
                             seed: int = 0) -> np.ndarray:
    """Plan from every non-terminal state and stack the root distributions.

    Each state gets its own generator derived from ``seed`` so the table does
    not depend on evaluation order. Terminal rows are uniform.
    """
    prior = check_policy(prior, (model.n_states, model.n_actions))
    table = np.full((model.n_states, model.n_actions), 1.0 / model.n_actions)
    seeds = np.random.SeedSequence(seed).spawn(model.n_states)
    for s in range(model.n_states):
        if model.terminal[s]:
            continue
        tree, _ = plan(s, model, prior, params, np.random.default_rng(seeds[s]))
        table[s] = root_distribution(tree.root, prior, params)
    return table
