"""Shared machinery for the discrete environments.

Each environment is described by a :class:`Model`: an enumeration of
hashable states, a dynamics function returning ``(probability, next_state)``
outcomes, per-channel rewards and a per-step task feature. From a model we
derive both the exact :class:`~rqlab.mdp.DiscreteMdp` and an episodic
simulator (:class:`Env`) that steps the dynamics function directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np

from rqlab.mdp import DiscreteMdp

MAX_STATES = 200_000

Outcome = tuple[float, Hashable]


@dataclass(frozen=True)
class EnvSpec:
    """Declarative environment description.

    ``options`` holds the size parameters and reward coefficients understood
    by the named environment; unknown keys are rejected by the builder.
    """

    name: str
    episode_cap: int | None = None
    reset: str | None = None
    options: dict[str, Any] = field(default_factory=dict, hash=False, compare=True)

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"name": self.name}
        if self.episode_cap is not None:
            doc["episode_cap"] = self.episode_cap
        if self.reset is not None:
            doc["reset"] = self.reset
        if self.options:
            doc["options"] = dict(self.options)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvSpec":
        unknown = set(doc) - {"name", "episode_cap", "reset", "options"}
        if unknown:
            raise ValueError(f"unknown env keys: {sorted(unknown)}")
        if "name" not in doc:
            raise ValueError("env spec needs a name")
        return cls(doc["name"], doc.get("episode_cap"), doc.get("reset"),
                   dict(doc.get("options", {})))

    def key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class Model:
    """Base class for environment definitions. Subclasses fill in the hooks."""

    name = "model"
    action_names: Sequence[str] = ()
    default_cap = 100
    reset_modes: Sequence[str] = ("default",)
    discount = 0.95
    #: how per-step features reduce to the episode's task metric
    aggregate = "mean"  # "mean" | "sum" | "none"
    #: whether surviving to the episode cap counts as success
    truncation_success = False
    metric_name = "task_metric"

    def __init__(self, reset: str | None = None, **options):
        if options:
            raise ValueError(f"{self.name}: unknown options {sorted(options)}")
        self.reset_mode = reset or self.reset_modes[0]
        if self.reset_mode not in self.reset_modes:
            raise ValueError(f"{self.name}: reset must be one of {list(self.reset_modes)}")

    # hooks -----------------------------------------------------------------
    def states(self) -> list[Hashable]:
        raise NotImplementedError

    def terminal_outcome(self, state) -> str | None:
        """'success' / 'failure' for absorbing states, None otherwise."""
        raise NotImplementedError

    def dynamics(self, state, action: int) -> list[Outcome]:
        raise NotImplementedError

    def rewards(self, state, action: int) -> tuple[float, float]:
        """(basic, addon) reward for a non-terminal state."""
        raise NotImplementedError

    def initial(self) -> list[Outcome]:
        raise NotImplementedError

    def feature(self, state, action: int) -> float:
        """Per-step contribution to the task metric."""
        raise NotImplementedError

    # derived ---------------------------------------------------------------
    @property
    def n_actions(self) -> int:
        return len(self.action_names)


class Env:
    """Episodic simulator over a :class:`Model`, sharing its state indexing with the MDP."""

    def __init__(self, spec: EnvSpec, model: Model):
        self.spec = spec
        self.model = model
        self.state_list = list(model.states())
        if len(self.state_list) > MAX_STATES:
            raise ValueError(f"{spec.name}: {len(self.state_list)} states exceeds {MAX_STATES}")
        self.index = {st: i for i, st in enumerate(self.state_list)}
        if len(self.index) != len(self.state_list):
            raise ValueError(f"{spec.name}: duplicate states in enumeration")
        self.episode_cap = spec.episode_cap if spec.episode_cap is not None else model.default_cap
        if self.episode_cap < 1:
            raise ValueError("episode_cap must be positive")
        self.mdp = self._build_mdp()
        self.initial_distribution = np.zeros(self.n_states)
        for p, st in model.initial():
            self.initial_distribution[self.index[st]] += p
        self.outcomes = [model.terminal_outcome(st) for st in self.state_list]
        self.feature_table = np.zeros((self.n_states, self.n_actions))
        for i, st in enumerate(self.state_list):
            if self.outcomes[i] is None:
                for a in range(self.n_actions):
                    self.feature_table[i, a] = model.feature(st, a)
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self._state: int | None = None
        self._t = 0
        self._done = True

    @property
    def n_states(self) -> int:
        return len(self.state_list)

    @property
    def n_actions(self) -> int:
        return self.model.n_actions

    def _build_mdp(self) -> DiscreteMdp:
        n, m = len(self.state_list), self.model.n_actions
        t = np.zeros((n, m, n))
        rb = np.zeros((n, m))
        ra = np.zeros((n, m))
        term = np.zeros(n, dtype=bool)
        for i, st in enumerate(self.state_list):
            if self.model.terminal_outcome(st) is not None:
                term[i] = True
                t[i, :, i] = 1.0
                continue
            for a in range(m):
                for p, nxt in self.model.dynamics(st, a):
                    t[i, a, self.index[nxt]] += p
                rb[i, a], ra[i, a] = self.model.rewards(st, a)
        return DiscreteMdp(t, rb, ra, self.model.discount, term)

    # episodic interface ----------------------------------------------------
    def reset(self, rng: np.random.Generator) -> int:
        cum = np.cumsum(self.initial_distribution)
        self._state = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        self._t = 0
        self._done = False
        return self._state

    def reset_to(self, s: int) -> int:
        """Start an episode from a chosen state index."""
        if not 0 <= s < self.n_states:
            raise IndexError(f"state {s} out of range")
        self._state, self._t = int(s), 0
        self._done = self.outcomes[s] is not None
        return self._state

    def _outcomes(self, s: int, a: int):
        key = (s, a)
        if key not in self._cache:
            st = self.state_list[s]
            if self.outcomes[s] is not None:
                nxt, probs = np.array([s]), np.array([1.0])
            else:
                pairs = self.model.dynamics(st, a)
                probs = np.array([p for p, _ in pairs], dtype=float)
                nxt = np.array([self.index[n] for _, n in pairs])
            self._cache[key] = (np.cumsum(probs), nxt)
        return self._cache[key]

    def step(self, action: int, rng: np.random.Generator) -> tuple[int, float, float, bool]:
        """Advance one step; returns (next_state, basic_reward, addon_reward, done)."""
        if self._done or self._state is None:
            raise RuntimeError("episode is finished; call reset() first")
        if not 0 <= action < self.n_actions:
            raise IndexError(f"action {action} out of range")
        s = self._state
        st = self.state_list[s]
        cum, nxt = self._outcomes(s, action)
        k = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(nxt) - 1)
        s2 = int(nxt[k])
        rb, ra = self.model.rewards(st, action) if self.outcomes[s] is None else (0.0, 0.0)
        self._state = s2
        self._t += 1
        self._done = self.outcomes[s2] is not None or self._t >= self.episode_cap
        return s2, float(rb), float(ra), self._done

    @property
    def state(self) -> int | None:
        return self._state

    @property
    def done(self) -> bool:
        return self._done

    def decode(self, s: int):
        return self.state_list[s]

    def encode(self, state) -> int:
        return self.index[state]

    def termination(self, last_state: int) -> str:
        return self.outcomes[last_state] or "truncated"

    def is_success(self, termination: str) -> bool:
        return termination == "success" or (termination == "truncated"
                                            and self.model.truncation_success)
