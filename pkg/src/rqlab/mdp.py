"""Finite MDPs with two reward channels (basic and add-on)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteMdp:
    """Tabular MDP.

    ``transition`` has shape (S, A, S); both reward tables have shape (S, A).
    Terminal states are absorbing: they self-loop with zero reward on both
    channels, and the solvers treat their continuation value as zero.
    """

    transition: np.ndarray
    basic_reward: np.ndarray
    addon_reward: np.ndarray
    discount: float
    terminal: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        s, a = t.shape[:2]
        if t.ndim != 3 or t.shape[2] != s:
            raise ValueError(f"transition must have shape (S, A, S), got {t.shape}")
        rb = np.asarray(self.basic_reward, dtype=float).reshape(s, a)
        ra = np.asarray(self.addon_reward, dtype=float).reshape(s, a)
        term = np.asarray(self.terminal, dtype=bool).reshape(s)
        if not 0.0 <= float(self.discount) < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        for arr in (t, rb, ra, term):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "basic_reward", rb)
        object.__setattr__(self, "addon_reward", ra)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @cached_property
    def _cumulative(self) -> np.ndarray:
        cum = np.cumsum(self.transition, axis=2)
        # exact 1.0 in the last column keeps searchsorted in range
        cum /= cum[:, :, -1:]
        cum.setflags(write=False)
        return cum

    def with_rewards(self, basic=None, addon=None) -> "DiscreteMdp":
        """Copy with one or both reward channels replaced."""
        return DiscreteMdp(
            transition=self.transition,
            basic_reward=self.basic_reward if basic is None else basic,
            addon_reward=self.addon_reward if addon is None else addon,
            discount=self.discount,
            terminal=self.terminal,
        )

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "transition": self.transition.tolist(),
            "basic_reward": self.basic_reward.tolist(),
            "addon_reward": self.addon_reward.tolist(),
            "terminal": self.terminal.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteMdp":
        expected = {"n_states", "n_actions", "discount", "transition",
                    "basic_reward", "addon_reward", "terminal"}
        if set(doc) != expected:
            raise ValueError(f"MDP document keys {sorted(doc)} != {sorted(expected)}")
        mdp = cls(
            transition=np.array(doc["transition"], dtype=float),
            basic_reward=np.array(doc["basic_reward"], dtype=float),
            addon_reward=np.array(doc["addon_reward"], dtype=float),
            discount=doc["discount"],
            terminal=np.array(doc["terminal"], dtype=bool),
        )
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ValueError("declared n_states/n_actions disagree with the tables")
        return mdp


def save_mdp(mdp: DiscreteMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()), encoding="utf-8")


def load_mdp(path) -> DiscreteMdp:
    return DiscreteMdp.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# reward channels


@dataclass(frozen=True)
class RewardSelector:
    """Which reward an algorithm sees: ``basic``, ``addon`` or ``combined``.

    ``combined`` evaluates to ``omega * basic + addon``.
    """

    mode: str
    omega: float = 1.0

    def __post_init__(self):
        if self.mode not in ("basic", "addon", "combined"):
            raise ValueError(f"unknown reward mode {self.mode!r}")
        if self.mode == "combined" and self.omega < 0:
            raise ValueError(f"omega must be nonnegative, got {self.omega}")

    @classmethod
    def basic(cls) -> "RewardSelector":
        return cls("basic")

    @classmethod
    def addon(cls) -> "RewardSelector":
        return cls("addon")

    @classmethod
    def combined(cls, omega: float) -> "RewardSelector":
        return cls("combined", float(omega))


def compose_reward(mdp: DiscreteMdp, selector: RewardSelector) -> np.ndarray:
    if selector.mode == "basic":
        return mdp.basic_reward.copy()
    if selector.mode == "addon":
        return mdp.addon_reward.copy()
    return selector.omega * mdp.basic_reward + mdp.addon_reward


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str  # "row-sum" | "negative" | "terminal" | "nonfinite"
    state: int
    action: int | None
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def of_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]


def validate_mdp(mdp: DiscreteMdp) -> ValidationReport:
    """Check row sums, probability signs and the terminal convention.

    Never raises; an empty report means the MDP is valid.
    """
    report = ValidationReport()
    t = mdp.transition
    sums = t.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)):
        report.violations.append(
            Violation("row-sum", int(s), int(a), f"row sums to {sums[s, a]!r}"))
    for s, a in sorted({(int(s), int(a)) for s, a, _ in zip(*np.nonzero(t < 0))}):
        report.violations.append(
            Violation("negative", s, a, f"min probability {t[s, a].min()!r}"))
    for name, table in (("basic", mdp.basic_reward), ("addon", mdp.addon_reward)):
        for s, a in zip(*np.nonzero(~np.isfinite(table))):
            report.violations.append(
                Violation("nonfinite", int(s), int(a), f"{name} reward {table[s, a]!r}"))
    for s in np.flatnonzero(mdp.terminal):
        s = int(s)
        for a in range(mdp.n_actions):
            if t[s, a, s] != 1.0:
                report.violations.append(
                    Violation("terminal", s, a, "terminal state does not self-loop"))
            for name, table in (("basic", mdp.basic_reward), ("addon", mdp.addon_reward)):
                if table[s, a] != 0.0:
                    report.violations.append(Violation(
                        "terminal", s, a, f"terminal {name} reward {table[s, a]!r} != 0"))
    return report


# --------------------------------------------------------------------------
# sampling


def sample_transition(mdp: DiscreteMdp, s: int, a: int, rng: np.random.Generator) -> int:
    """Draw a next state from ``transition[s, a]`` using one uniform variate."""
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"(s={s}, a={a}) out of range for {mdp.n_states}x{mdp.n_actions} MDP")
    return int(np.searchsorted(mdp._cumulative[s, a], rng.random(), side="right"))


def sample_transitions(mdp: DiscreteMdp, states: np.ndarray, actions: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`sample_transition` for a batch of (s, a) pairs."""
    cum = mdp._cumulative[states, actions]
    u = rng.random(len(states))
    return (cum <= u[:, None]).sum(axis=1)


# --------------------------------------------------------------------------
# fixtures


def bandit2() -> DiscreteMdp:
    """One decision state s0 with actions (a0, a1), then an absorbing terminal.

    basic reward [1, 0], add-on reward [0, 1]. Reaching the terminal in one
    step plays the role of a zero discount.
    """
    t = np.zeros((2, 2, 2))
    t[0, :, 1] = 1.0
    t[1, :, 1] = 1.0
    return DiscreteMdp(
        transition=t,
        basic_reward=[[1.0, 0.0], [0.0, 0.0]],
        addon_reward=[[0.0, 1.0], [0.0, 0.0]],
        discount=0.9,
        terminal=[False, True],
    )


def two_state_loop(discount: float = 0.9) -> DiscreteMdp:
    """States (A, B), actions (x, y), deterministic.

    (A,x)->A basic 1; (A,y)->B add-on 1; (B,x)->B; (B,y)->A.
    """
    A, B, X, Y = 0, 1, 0, 1
    t = np.zeros((2, 2, 2))
    t[A, X, A] = t[A, Y, B] = t[B, X, B] = t[B, Y, A] = 1.0
    rb = np.zeros((2, 2))
    ra = np.zeros((2, 2))
    rb[A, X] = 1.0
    ra[A, Y] = 1.0
    return DiscreteMdp(t, rb, ra, discount, [False, False])


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int,
               discount: float = 0.9, n_terminal: int = 0,
               sparsity: float = 0.0) -> DiscreteMdp:
    """Random dense MDP for property tests; the last ``n_terminal`` states absorb."""
    t = rng.random((n_states, n_actions, n_states))
    if sparsity > 0:
        t *= rng.random(t.shape) >= sparsity
        empty = t.sum(axis=2) == 0
        t[empty, rng.integers(n_states)] = 1.0
    t /= t.sum(axis=2, keepdims=True)
    rb = rng.normal(size=(n_states, n_actions))
    ra = rng.normal(size=(n_states, n_actions))
    terminal = np.zeros(n_states, dtype=bool)
    if n_terminal:
        terminal[-n_terminal:] = True
        t[terminal] = 0.0
        for s in np.flatnonzero(terminal):
            t[s, :, s] = 1.0
        rb[terminal] = 0.0
        ra[terminal] = 0.0
    return DiscreteMdp(t, rb, ra, discount, terminal)


def build_mdp(n_states: int, n_actions: int,
              outcomes: Iterable[tuple[int, int, int, float]],
              basic: np.ndarray, addon: np.ndarray, discount: float,
              terminal: np.ndarray) -> DiscreteMdp:
    """Assemble an MDP from (s, a, s', p) tuples; repeated keys accumulate."""
    t = np.zeros((n_states, n_actions, n_states))
    for s, a, s2, p in outcomes:
        t[s, a, s2] += p
    return DiscreteMdp(t, basic, addon, discount, terminal)
