"""Experiment harness: priors, customization methods, evaluation and reports.

Evaluation reports undiscounted per-episode sums of each reward channel, even
though every solver optimizes a discounted objective.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from rqlab.baselines import (
    GreedyParams,
    KlRewardParams,
    greedy_customization,
    kl_augmented_rl,
    likelihood_augmented_rl,
)
from rqlab.envs import Env, EnvSpec, aggregate_feature, make_env
from rqlab.mcts import MctsParams, policy_table_from_search
from rqlab.mdp import DiscreteMdp, RewardSelector
from rqlab.residual import (
    CustomizationParams,
    TdLearnerParams,
    residual_policy,
    residual_soft_policy_iteration,
    residual_soft_q_iteration,
    residual_soft_q_learning,
)
from rqlab.soft import (
    SoftSolverParams,
    boltzmann_policy,
    check_policy,
    load_table,
    log_boltzmann,
    soft_value_iteration,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("policy", "success_rate", "basic_reward_mean", "basic_reward_std",
              "addon_reward_mean", "addon_reward_std", "task_metric_mean",
              "task_metric_std", "episodes")

EXIT_OK, EXIT_CONFIG, EXIT_METHOD, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


# --------------------------------------------------------------------------
# configuration


def _strict(doc: Any, allowed: set[str], where: str, required: set[str] = frozenset()) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(doc)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    return doc


@dataclass(frozen=True)
class PriorSpec:
    """How to obtain the prior: ``oracle``, ``perturbed`` or ``file``."""

    kind: str = "oracle"
    alpha: float = 1.0
    noise_scale: float = 0.0
    seed: int = 0
    path: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "PriorSpec":
        doc = _strict(doc, {"kind", "alpha", "noise_scale", "seed", "path"}, "prior", {"kind"})
        spec = cls(**doc)
        if spec.kind not in ("oracle", "perturbed", "file"):
            raise ConfigError(f"prior kind must be oracle, perturbed or file, got {spec.kind!r}")
        if spec.kind == "file" and not spec.path:
            raise ConfigError("file prior needs a path")
        if spec.alpha <= 0 or spec.noise_scale < 0:
            raise ConfigError("prior alpha must be positive and noise_scale nonnegative")
        return spec

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


METHOD_PARAMS = {
    "rql-exact": set(),
    "rql-spi": set(),
    "likelihood-aug": set(),
    "rql-td": {"learning_rate", "lr_decay_steps", "episodes", "steps_per_episode",
               "replay_capacity", "batch_size", "target_sync_interval", "explore_epsilon"},
    "mcts": {"iter_max", "horizon", "epsilon", "rollouts", "root_rule"},
    "greedy": {"lambda"},
    "kl-reward": {"beta", "damping", "outer_iters"},
    "rl-full": {"omega"},
}


@dataclass(frozen=True)
class MethodSpec:
    name: str
    params: dict = field(default_factory=dict, hash=False)
    label: str | None = None

    @classmethod
    def from_dict(cls, doc) -> "MethodSpec":
        if isinstance(doc, str):
            doc = {"name": doc}
        doc = _strict(doc, {"name", "params", "label"}, "method", {"name"})
        name = doc["name"]
        if name not in METHOD_PARAMS:
            raise ConfigError(f"unknown method {name!r}; known: {sorted(METHOD_PARAMS)}")
        params = _strict(doc.get("params", {}), METHOD_PARAMS[name], f"method {name}")
        return cls(name, dict(params), doc.get("label"))

    @property
    def display(self) -> str:
        if self.label:
            return self.label
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"name": self.name}
        if self.params:
            doc["params"] = dict(self.params)
        if self.label:
            doc["label"] = self.label
        return doc


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvSpec
    prior: PriorSpec = PriorSpec()
    methods: tuple[MethodSpec, ...] = ()
    customization: CustomizationParams = CustomizationParams()
    episodes: int = 4000
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "results"
    formats: tuple[str, ...] = ("csv", "json")

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.episodes < 1:
            raise ConfigError("evaluation episodes must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one evaluation seed is required")
        bad = set(self.formats) - {"csv", "json"}
        if bad or not self.formats:
            raise ConfigError(f"formats must be a non-empty subset of csv, json; got {self.formats}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = _strict(doc, {"env", "prior", "methods", "customization", "evaluation", "output"},
                      "config", {"env", "methods"})
        try:
            env = EnvSpec.from_dict(doc["env"] if isinstance(doc["env"], dict)
                                    else {"name": doc["env"]})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        prior = PriorSpec.from_dict(doc.get("prior", {"kind": "oracle"}))
        if not isinstance(doc["methods"], list):
            raise ConfigError("methods must be a list")
        methods = tuple(MethodSpec.from_dict(m) for m in doc["methods"])
        cust = _strict(doc.get("customization", {}),
                       {"omega_prime", "alpha_hat", "gamma", "tol", "max_iter"}, "customization")
        ev = _strict(doc.get("evaluation", {}), {"episodes", "seeds"}, "evaluation")
        out = _strict(doc.get("output", {}), {"directory", "formats"}, "output")
        try:
            cparams = CustomizationParams(**cust)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"customization: {exc}") from None
        return cls(env, prior, methods, cparams, int(ev.get("episodes", 4000)),
                   tuple(int(s) for s in ev.get("seeds", [0])),
                   str(out.get("directory", "results")),
                   tuple(out.get("formats", ["csv", "json"])))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        cust = {k: v for k, v in asdict(self.customization).items() if v is not None}
        return {"env": self.env.to_dict(), "prior": self.prior.to_dict(),
                "methods": [m.to_dict() for m in self.methods], "customization": cust,
                "evaluation": {"episodes": self.episodes, "seeds": list(self.seeds)},
                "output": {"directory": self.output_dir, "formats": list(self.formats)}}


# --------------------------------------------------------------------------
# priors


def oracle_prior(mdp: DiscreteMdp, alpha: float = 1.0) -> np.ndarray:
    """Boltzmann policy of the soft-optimal basic-channel Q at temperature alpha."""
    q = soft_value_iteration(mdp, RewardSelector.basic(), SoftSolverParams(alpha=alpha))
    return boltzmann_policy(q, alpha)


def perturb_policy(policy: np.ndarray, noise_scale: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Add Gaussian noise to the log-probabilities and renormalize."""
    if noise_scale == 0:
        return np.array(policy, dtype=float)
    logits = np.log(policy) + noise_scale * rng.standard_normal(policy.shape)
    return np.exp(log_boltzmann(logits, 1.0))


def build_prior(spec: PriorSpec, mdp: DiscreteMdp) -> np.ndarray:
    if spec.kind == "file":
        table = load_table(spec.path)
        try:
            return check_policy(table, (mdp.n_states, mdp.n_actions), floor=True)
        except ValueError as exc:
            raise ConfigError(f"prior file {spec.path}: {exc}") from None
    prior = oracle_prior(mdp, spec.alpha)
    if spec.kind == "perturbed":
        prior = perturb_policy(prior, spec.noise_scale, np.random.default_rng(spec.seed))
    return prior


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class MetricsRecord:
    policy: str
    success_rate: float
    basic_reward_mean: float
    basic_reward_std: float
    addon_reward_mean: float
    addon_reward_std: float
    task_metric_mean: float
    task_metric_std: float
    episodes: int

    def row(self) -> list[str]:
        vals = [self.success_rate, self.basic_reward_mean, self.basic_reward_std,
                self.addon_reward_mean, self.addon_reward_std, self.task_metric_mean,
                self.task_metric_std]
        return [self.policy, *(f"{v:.6g}" for v in vals), str(self.episodes)]


@dataclass
class EpisodeBatch:
    """Per-episode outcomes of a vectorized evaluation."""

    basic_return: np.ndarray
    addon_return: np.ndarray
    task_metric: np.ndarray
    success: np.ndarray
    length: np.ndarray


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def simulate_episodes(env: Env, policy: np.ndarray, episodes: int,
                      rng: np.random.Generator) -> EpisodeBatch:
    """Run ``episodes`` independent episodes in lockstep on the exact MDP tables."""
    mdp = env.mdp
    policy = check_policy(policy, (mdp.n_states, mdp.n_actions))
    if episodes < 1:
        raise ValueError("episodes must be positive")
    pol_cum = np.cumsum(policy, axis=1)
    pol_cum[:, -1] = np.inf
    init_cum = np.cumsum(env.initial_distribution)
    init_cum[-1] = np.inf
    trans_cum = np.cumsum(mdp.transition, axis=2)
    trans_cum[:, :, -1] = np.inf

    s = np.searchsorted(init_cum, rng.random(episodes), side="right")
    basic = np.zeros(episodes)
    addon = np.zeros(episodes)
    feat = np.zeros(episodes)
    length = np.zeros(episodes, dtype=np.int64)
    alive = ~mdp.terminal[s]
    for _ in range(env.episode_cap):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        si = s[idx]
        a = (pol_cum[si] <= rng.random(idx.size)[:, None]).sum(axis=1)
        basic[idx] += mdp.basic_reward[si, a]
        addon[idx] += mdp.addon_reward[si, a]
        feat[idx] += env.feature_table[si, a]
        length[idx] += 1
        s2 = (trans_cum[si, a] <= rng.random(idx.size)[:, None]).sum(axis=1)
        s[idx] = s2
        alive[idx] = ~mdp.terminal[s2]
    outcome = np.array([env.outcomes[i] or "" for i in range(mdp.n_states)], dtype=object)
    end = outcome[s]
    success = (end == "success") | ((end == "") & env.model.truncation_success)
    metric = aggregate_feature(env.model.aggregate, feat[:, None], length)
    return EpisodeBatch(basic, addon, metric, success.astype(float), length)


def evaluate_policy(env: Env, policy: np.ndarray, episodes: int, rng: np.random.Generator,
                    label: str = "policy") -> MetricsRecord:
    """Monte Carlo metrics of a policy table over ``episodes`` episodes."""
    b = simulate_episodes(env, policy, episodes, rng)
    return MetricsRecord(label, float(b.success.mean()), float(b.basic_return.mean()),
                         _std(b.basic_return), float(b.addon_return.mean()),
                         _std(b.addon_return), float(b.task_metric.mean()),
                         _std(b.task_metric), episodes)


# --------------------------------------------------------------------------
# methods


@dataclass
class MethodResult:
    label: str
    policy: np.ndarray | None
    error: str | None = None


def customize(method: MethodSpec, env: Env, prior: np.ndarray, cparams: CustomizationParams,
              seed: int = 0) -> np.ndarray:
    """Produce the policy table of one customization method."""
    mdp = env.mdp
    p = method.params
    name = method.name
    if name == "rql-exact":
        return residual_policy(residual_soft_q_iteration(mdp, prior, cparams), prior, cparams)
    if name == "rql-spi":
        return residual_soft_policy_iteration(mdp, prior, cparams)[1]
    if name == "likelihood-aug":
        return likelihood_augmented_rl(mdp, prior, cparams)[1]
    if name == "rql-td":
        lparams = TdLearnerParams(**p)
        q_r, _ = residual_soft_q_learning(env, prior, cparams, lparams,
                                          np.random.default_rng(seed))
        return residual_policy(q_r, prior, cparams)
    if name == "mcts":
        mparams = MctsParams(omega_prime=cparams.omega_prime, alpha_hat=cparams.alpha_hat,
                             gamma=cparams.gamma, **p)
        return policy_table_from_search(mdp, prior, mparams, seed)
    if name == "greedy":
        gp = GreedyParams(lam=p.get("lambda", 1.0), alpha_hat=cparams.alpha_hat,
                          gamma=cparams.gamma, tol=cparams.tol)
        return greedy_customization(mdp, prior, gp)[1]
    if name == "kl-reward":
        kp = KlRewardParams(alpha_hat=cparams.alpha_hat, gamma=cparams.gamma, tol=cparams.tol,
                            **p)
        return kl_augmented_rl(mdp, prior, kp)
    if name == "rl-full":
        omega = p.get("omega", 1.0)
        q = soft_value_iteration(mdp, RewardSelector.combined(omega),
                                 SoftSolverParams(cparams.alpha_hat, cparams.tol,
                                                  cparams.max_iter))
        return boltzmann_policy(q, cparams.alpha_hat)
    raise ConfigError(f"unknown method {name!r}")


def _run_method(method: MethodSpec, env: Env, prior, cparams, seed) -> MethodResult:
    try:
        policy = customize(method, env, prior, cparams, seed)
        policy = check_policy(policy, prior.shape, floor=True)
        return MethodResult(method.display, policy)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        log.warning("method %s failed: %s", method.display, exc)
        return MethodResult(method.display, None, f"{type(exc).__name__}: {exc}")


def thread_cap() -> int:
    raw = os.environ.get("RQLAB_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"RQLAB_THREADS must be an integer, got {raw!r}") from None


@dataclass
class MetricsTable:
    """Rows in config declaration order, plus any method failures."""

    records: list[MetricsRecord] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def by_label(self, label: str) -> MetricsRecord:
        for rec in self.records:
            if rec.policy == label:
                return rec
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records], "failures": dict(self.failures)}

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsTable":
        doc = _strict(doc, {"records", "failures"}, "report", {"records"})
        return cls([MetricsRecord(**r) for r in doc["records"]], dict(doc.get("failures", {})))


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _merge(records: list[MetricsRecord]) -> MetricsRecord:
    """Combine per-seed records of one policy into a single row (pooled moments)."""
    if len(records) == 1:
        return records[0]
    n = np.array([r.episodes for r in records], dtype=float)
    total = int(n.sum())

    def pooled(mean_key, std_key):
        means = np.array([getattr(r, mean_key) for r in records])
        stds = np.array([getattr(r, std_key) for r in records])
        mean = float(np.sum(n * means) / total)
        if total <= 1:
            return mean, 0.0
        ss = np.sum((n - 1) * stds ** 2 + n * (means - mean) ** 2)
        return mean, float(math.sqrt(ss / (total - 1)))

    bm, bs = pooled("basic_reward_mean", "basic_reward_std")
    am, as_ = pooled("addon_reward_mean", "addon_reward_std")
    tm, ts = pooled("task_metric_mean", "task_metric_std")
    succ = float(np.sum(n * [r.success_rate for r in records]) / total)
    return MetricsRecord(records[0].policy, succ, bm, bs, am, as_, tm, ts, total)


def run_experiment(config: ExperimentConfig) -> MetricsTable:
    """Build env and prior, run every method, evaluate every policy.

    The prior always gets the first row. Each policy is evaluated on every
    seed with a generator built from that seed alone, so all policies see
    common random numbers and the output depends only on (config, seeds).
    """
    try:
        env, mdp = make_env(config.env)
    except ValueError as exc:
        raise ConfigError(f"env: {exc}") from None
    prior = build_prior(config.prior, mdp)
    cparams = config.customization
    seed0 = config.seeds[0]
    workers = thread_cap()

    results = _pool_map(lambda m: _run_method(m, env, prior, cparams, seed0),
                        list(config.methods), workers)
    policies = [MethodResult("prior", prior)] + results
    labels = [r.label for r in policies]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate policy labels {labels}; set 'label' on repeated methods")

    cells = [(r, seed) for r in policies if r.policy is not None for seed in config.seeds]

    def evaluate_cell(cell):
        res, seed = cell
        return evaluate_policy(env, res.policy, config.episodes,
                               np.random.default_rng(seed), res.label)

    evaluated = _pool_map(evaluate_cell, cells, workers)
    table = MetricsTable()
    for res in policies:
        if res.policy is None:
            table.failures[res.label] = res.error or "failed"
            continue
        rows = [rec for (r, _), rec in zip(cells, evaluated) if r is res]
        table.records.append(_merge(rows))
    return table


# --------------------------------------------------------------------------
# reports


def render_csv(table: MetricsTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in table.records:
        w.writerow(rec.row())
    return buf.getvalue()


def render_json(table: MetricsTable) -> str:
    return json.dumps(table.to_dict(), indent=2) + "\n"


def emit_report(table: MetricsTable, directory, formats=("csv", "json"),
                stem: str = "metrics") -> list[Path]:
    """Write the table as CSV and/or JSON; returns the written paths.

    CSV numbers carry 6 significant digits. JSON keeps full precision so it
    parses back to an equal table.
    """
    if not table.records and not table.failures:
        raise ValueError("cannot emit an empty table")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            text = render_csv(table)
        elif fmt == "json":
            text = render_json(table)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        path = out / f"{stem}.{fmt}"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        written.append(path)
    return written


def load_report(path) -> MetricsTable:
    return MetricsTable.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
