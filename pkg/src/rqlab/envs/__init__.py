"""Discrete environments with basic and add-on reward channels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from rqlab.envs.base import MAX_STATES, Env, EnvSpec, Model
from rqlab.envs.chain import CenteringChain
from rqlab.envs.fixtures import Bandit2, TwoStateLoop
from rqlab.envs.highway import GridHighway
from rqlab.envs.mountain_car import DiscreteMountainCar
from rqlab.envs.parking import GridParking
from rqlab.mdp import DiscreteMdp

TASK_ENVS = ("centering-chain", "discrete-mountain-car", "grid-highway", "grid-parking")

REGISTRY: dict[str, type[Model]] = {
    cls.name: cls
    for cls in (CenteringChain, DiscreteMountainCar, GridHighway, GridParking,
                Bandit2, TwoStateLoop)
}

__all__ = [
    "Env", "EnvSpec", "EpisodeTrace", "MAX_STATES", "REGISTRY", "TASK_ENVS",
    "compute_task_metric", "make_env", "run_episode",
]


def make_env(spec: EnvSpec | str) -> tuple[Env, DiscreteMdp]:
    """Build the simulator and its exact tabular MDP."""
    if isinstance(spec, str):
        spec = EnvSpec(spec)
    try:
        cls = REGISTRY[spec.name]
    except KeyError:
        raise ValueError(f"unknown environment {spec.name!r}; "
                         f"known: {sorted(REGISTRY)}") from None
    env = Env(spec, cls(reset=spec.reset, **spec.options))
    return env, env.mdp


@lru_cache(maxsize=32)
def _env_for_key(key: str) -> Env:
    return make_env(EnvSpec.from_dict(json.loads(key)))[0]


@dataclass
class EpisodeTrace:
    """One episode: (state, action, basic_reward, addon_reward) per step."""

    env_name: str
    steps: list[tuple[int, int, float, float]] = field(default_factory=list)
    terminated: str = "truncated"  # "success" | "failure" | "truncated"

    def to_json(self) -> str:
        return json.dumps({"env": self.env_name, "terminated": self.terminated,
                           "steps": [list(s) for s in self.steps]})

    @classmethod
    def from_json(cls, line: str) -> "EpisodeTrace":
        doc = json.loads(line)
        return cls(doc["env"], [tuple(s) for s in doc["steps"]], doc["terminated"])


def write_traces(traces, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tr in traces:
            fh.write(tr.to_json() + "\n")


def read_traces(path) -> list[EpisodeTrace]:
    with open(path, encoding="utf-8") as fh:
        return [EpisodeTrace.from_json(line) for line in fh if line.strip()]


def run_episode(env: Env, policy: np.ndarray, rng: np.random.Generator) -> EpisodeTrace:
    """Roll out one episode sampling actions from a policy table."""
    cum = np.cumsum(policy, axis=1)
    s = env.reset(rng)
    trace = EpisodeTrace(env.spec.name)
    done = False
    while not done:
        row = cum[s]
        a = min(int(np.searchsorted(row, rng.random() * row[-1], side="right")),
                env.n_actions - 1)
        s2, rb, ra, done = env.step(a, rng)
        trace.steps.append((s, a, rb, ra))
        s = s2
    trace.terminated = env.termination(s)
    return trace


def aggregate_feature(kind: str, values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reduce per-step features (rows padded with zeros) to per-episode metrics."""
    total = values.sum(axis=-1)
    if kind == "sum":
        return total
    if kind == "mean":
        return np.divide(total, lengths, out=np.zeros_like(total), where=lengths > 0)
    if kind == "none":
        return (total == 0).astype(float)
    raise ValueError(f"unknown aggregate {kind!r}")


def compute_task_metric(trace: EpisodeTrace, spec: EnvSpec) -> float:
    """Task metric of one episode.

    centering-chain: mean |x| / K; discrete-mountain-car: count of negative
    pushes; grid-highway: mean lane index / (lanes - 1); grid-parking: 1.0 if
    no boundary cell was visited, else 0.0 (the batch mean is the
    no-violation rate). The fixtures report their add-on return.
    """
    if trace.env_name != spec.name:
        raise ValueError(f"trace from {trace.env_name!r} does not match env {spec.name!r}")
    env = _env_for_key(spec.key())
    feats = []
    for s, a, _, _ in trace.steps:
        if not (0 <= s < env.n_states and 0 <= a < env.n_actions):
            raise ValueError(f"step (s={s}, a={a}) outside the {spec.name} spaces")
        feats.append(env.feature_table[s, a])
    values = np.array(feats, dtype=float)
    return float(aggregate_feature(env.model.aggregate, values, np.array(len(feats))))
