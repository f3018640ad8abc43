import json
import math

import numpy as np
import pytest

from rqlab.cli import main
from rqlab.envs import make_env
from rqlab.harness import (
    CSV_HEADER,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_METHOD,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    MethodSpec,
    MetricsRecord,
    MetricsTable,
    PriorSpec,
    _merge,
    build_prior,
    emit_report,
    evaluate_policy,
    load_report,
    oracle_prior,
    render_csv,
    run_experiment,
    simulate_episodes,
    thread_cap,
)
from rqlab.mdp import RewardSelector, bandit2, save_mdp
from rqlab.soft import SoftSolverParams, boltzmann_policy, save_table, soft_value_iteration


def _config(env="bandit-2", methods=("rql-exact",), episodes=500, seeds=(0,), **extra):
    doc = {"env": env, "methods": list(methods),
           "evaluation": {"episodes": episodes, "seeds": list(seeds)}}
    doc.update(extra)
    return ExperimentConfig.from_dict(doc)


class TestPriors:
    def test_oracle_is_boltzmann_of_basic_q(self, loop):
        q = soft_value_iteration(loop, RewardSelector.basic(), SoftSolverParams(alpha=0.5))
        assert np.array_equal(build_prior(PriorSpec(alpha=0.5), loop), boltzmann_policy(q, 0.5))

    def test_zero_noise_perturbation_is_oracle(self, loop):
        spec = PriorSpec("perturbed", noise_scale=0.0)
        assert np.array_equal(build_prior(spec, loop), oracle_prior(loop))

    def test_perturbation_is_seeded(self, loop):
        a = build_prior(PriorSpec("perturbed", noise_scale=0.5, seed=3), loop)
        b = build_prior(PriorSpec("perturbed", noise_scale=0.5, seed=3), loop)
        c = build_prior(PriorSpec("perturbed", noise_scale=0.5, seed=4), loop)
        assert np.array_equal(a, b) and not np.array_equal(a, c)
        assert np.allclose(a.sum(axis=1), 1.0)

    def test_file_prior_zero_entries_floored(self, tmp_path, bandit):
        save_table(np.array([[1.0, 0.0], [0.5, 0.5]]), tmp_path / "p.json")
        with pytest.warns(UserWarning):
            prior = build_prior(PriorSpec("file", path=str(tmp_path / "p.json")), bandit)
        assert np.all(prior > 0)

    def test_file_prior_wrong_shape(self, tmp_path, bandit):
        save_table(np.full((3, 2), 0.5), tmp_path / "p.json")
        with pytest.raises(ConfigError):
            build_prior(PriorSpec("file", path=str(tmp_path / "p.json")), bandit)

    @pytest.mark.parametrize("doc", [{"kind": "learned"}, {"kind": "file"},
                                     {"kind": "oracle", "alpha": 0}, {"kind": "oracle", "x": 1}])
    def test_bad_prior_specs(self, doc):
        with pytest.raises(ConfigError):
            PriorSpec.from_dict(doc)


class TestEvaluation:
    def test_single_episode_has_zero_std(self, rng):
        env, mdp = make_env("two-state-loop")
        rec = evaluate_policy(env, oracle_prior(mdp), 1, rng)
        assert rec.basic_reward_std == rec.addon_reward_std == rec.task_metric_std == 0.0

    def test_deterministic_rollouts_have_zero_spread(self, rng):
        env, _ = make_env("grid-highway")
        policy = np.full((env.n_states, env.n_actions), 1e-300)
        policy[:, 4] = 1.0
        rec = evaluate_policy(env, policy, 50, rng)
        assert rec.basic_reward_std == 0.0 and rec.success_rate == 1.0
        # first step still at the starting speed 2, then 39 steps at speed 1
        assert rec.basic_reward_mean == pytest.approx(1.2 + 39.0)

    def test_bandit_uniform_addon(self):
        env, mdp = make_env("bandit-2")
        b = simulate_episodes(env, np.full((2, 2), 0.5), 8000, np.random.default_rng(0))
        se = b.addon_return.std(ddof=1) / math.sqrt(8000)
        assert abs(b.addon_return.mean() - 0.5) <= 3 * se
        assert np.all(b.length == 1) and np.all(b.success == 1)

    def test_matches_step_simulator_in_distribution(self):
        from rqlab.envs import run_episode
        env, mdp = make_env("centering-chain")
        prior = oracle_prior(mdp)
        rng = np.random.default_rng(1)
        slow = np.array([sum(s[3] for s in run_episode(env, prior, rng).steps)
                         for _ in range(400)])
        fast = simulate_episodes(env, prior, 4000, np.random.default_rng(2)).addon_return
        se = math.sqrt(slow.var(ddof=1) / 400 + fast.var(ddof=1) / 4000)
        assert abs(slow.mean() - fast.mean()) <= 4 * se

    def test_customized_chain_stays_nearer_center(self):
        table = run_experiment(_config("centering-chain", ("rql-exact",), 2000))
        assert table.by_label("rql-exact").task_metric_mean < table.by_label("prior").task_metric_mean

    def test_uniform_policy_drifts_more_than_customized(self):
        env, mdp = make_env("centering-chain")
        uni = evaluate_policy(env, np.full((mdp.n_states, 2), 0.5), 2000,
                              np.random.default_rng(0))
        cust = run_experiment(_config("centering-chain", ("rql-exact",), 2000))
        assert cust.by_label("rql-exact").task_metric_mean < uni.task_metric_mean

    def test_pooled_merge_equals_concatenation(self):
        env, mdp = make_env("two-state-loop")
        prior = oracle_prior(mdp)
        batches = [simulate_episodes(env, prior, n, np.random.default_rng(s))
                   for s, n in ((0, 30), (1, 70))]
        recs = [MetricsRecord("p", float(b.success.mean()), float(b.basic_return.mean()),
                              float(b.basic_return.std(ddof=1)), float(b.addon_return.mean()),
                              float(b.addon_return.std(ddof=1)), float(b.task_metric.mean()),
                              float(b.task_metric.std(ddof=1)), len(b.length)) for b in batches]
        merged = _merge(recs)
        both = np.concatenate([b.addon_return for b in batches])
        assert merged.episodes == 100
        assert merged.addon_reward_mean == pytest.approx(both.mean())
        assert merged.addon_reward_std == pytest.approx(both.std(ddof=1))


class TestExperiment:
    def test_bandit_row(self):
        table = run_experiment(_config(methods=("rql-exact",), episodes=8000))
        rec = table.by_label("rql-exact")
        se = rec.addon_reward_std / math.sqrt(rec.episodes)
        assert abs(rec.addon_reward_mean - 0.5) <= 3 * se
        assert rec.success_rate == 1.0
        assert [r.policy for r in table.records] == ["prior", "rql-exact"]

    def test_exact_and_likelihood_rows_agree(self):
        table = run_experiment(_config("grid-parking", ("rql-exact", "likelihood-aug"), 2000))
        a, b = table.by_label("rql-exact"), table.by_label("likelihood-aug")
        se = math.hypot(a.addon_reward_std, b.addon_reward_std) / math.sqrt(2000)
        assert abs(a.addon_reward_mean - b.addon_reward_mean) <= 3 * se

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = _config("two-state-loop", ("rql-exact", "greedy", "rql-spi"), 300, seeds=(0, 1))
        texts = []
        for k in range(2):
            emit_report(run_experiment(cfg), tmp_path / str(k), ("csv",))
            texts.append((tmp_path / str(k) / "metrics.csv").read_bytes())
        assert texts[0] == texts[1] and b"\r" not in texts[0]

    def test_thread_count_does_not_change_results(self, monkeypatch):
        cfg = _config("two-state-loop", ("rql-exact", "greedy"), 300, seeds=(0, 1, 2))
        monkeypatch.setenv("RQLAB_THREADS", "1")
        serial = render_csv(run_experiment(cfg))
        monkeypatch.setenv("RQLAB_THREADS", "4")
        assert render_csv(run_experiment(cfg)) == serial

    def test_thread_cap_parsing(self, monkeypatch):
        monkeypatch.setenv("RQLAB_THREADS", "0")
        assert thread_cap() == 1
        monkeypatch.setenv("RQLAB_THREADS", "many")
        with pytest.raises(ConfigError):
            thread_cap()

    def test_failure_recorded_not_raised(self):
        cfg = _config("two-state-loop", ({"name": "kl-reward", "params": {"outer_iters": 1}},
                                         "rql-exact"), 100)
        table = run_experiment(cfg)
        assert "kl-reward(outer_iters=1)" in table.failures
        assert [r.policy for r in table.records] == ["prior", "rql-exact"]

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ConfigError):
            run_experiment(_config(methods=("greedy", "greedy")))

    def test_labels_disambiguate(self):
        cfg = _config(methods=({"name": "greedy", "params": {"lambda": 0.5}},
                               {"name": "greedy", "label": "greedy-default"}), episodes=10)
        assert [r.policy for r in run_experiment(cfg).records] == \
            ["prior", "greedy(lambda=0.5)", "greedy-default"]


class TestReports:
    def _table(self):
        return MetricsTable([MetricsRecord("prior", 1.0, 0.123456789, 0.0, -1.5, 0.25, 0.3,
                                           0.1, 10)])

    def test_single_row_csv(self):
        lines = render_csv(self._table()).splitlines()
        assert len(lines) == 2
        assert lines[0] == ",".join(CSV_HEADER)
        assert lines[1] == "prior,1,0.123457,0,-1.5,0.25,0.3,0.1,10"

    def test_json_only(self, tmp_path):
        paths = emit_report(self._table(), tmp_path, ("json",))
        assert [p.name for p in paths] == ["metrics.json"]
        assert not (tmp_path / "metrics.csv").exists()

    def test_json_round_trip(self, tmp_path):
        table = self._table()
        table.failures["kl-reward"] = "NonConvergenceError: nope"
        emit_report(table, tmp_path, ("json",))
        assert load_report(tmp_path / "metrics.json") == table

    def test_empty_table_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(MetricsTable(), tmp_path)


class TestConfig:
    def test_round_trip(self):
        cfg = _config("grid-parking", ("rql-exact", {"name": "mcts", "params": {"iter_max": 20}}),
                      prior={"kind": "perturbed", "noise_scale": 0.5, "seed": 2},
                      customization={"omega_prime": 2.0})
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("doc", [
        {"env": "bandit-2", "methods": ["rql-exact"], "extra": 1},
        {"env": "bandit-2", "methods": ["sarsa"]},
        {"env": "bandit-2", "methods": [{"name": "greedy", "params": {"beta": 1}}]},
        {"env": "bandit-2", "methods": []},
        {"env": "bandit-2", "methods": ["rql-exact"], "evaluation": {"episodes": 0}},
        {"env": "bandit-2", "methods": ["rql-exact"], "output": {"formats": ["xml"]}},
        {"env": "bandit-2", "methods": ["rql-exact"], "customization": {"alpha_hat": -1}},
        {"env": {"name": "bandit-2", "colour": 1}, "methods": ["rql-exact"]},
        {"methods": ["rql-exact"]},
    ])
    def test_strictness(self, doc):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(doc)

    def test_unknown_env_surfaces_as_config_error(self):
        with pytest.raises(ConfigError):
            run_experiment(_config("no-such-env"))

    def test_method_display(self):
        assert MethodSpec.from_dict({"name": "kl-reward", "params": {"beta": 2}}).display == \
            "kl-reward(beta=2)"


class TestCli:
    def _write_config(self, tmp_path, **extra):
        doc = {"env": "two-state-loop", "methods": ["rql-exact", "greedy"],
               "evaluation": {"episodes": 200, "seeds": [0]},
               "output": {"directory": str(tmp_path / "out")}}
        doc.update(extra)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        return path

    def test_solve(self, tmp_path):
        save_mdp(bandit2(), tmp_path / "b.json")
        assert main(["solve", str(tmp_path / "b.json"), "--out", str(tmp_path / "s")]) == EXIT_OK
        q = json.loads((tmp_path / "s" / "q.json").read_text())
        assert q[0] == pytest.approx([1.0, 0.0])

    def test_customize(self, tmp_path):
        rc = main(["customize", "--env", "bandit-2", "--method", "rql-exact",
                   "--out", str(tmp_path)])
        assert rc == EXIT_OK
        assert json.loads((tmp_path / "policy.json").read_text())[0] == \
            pytest.approx([0.5, 0.5])

    def test_plan(self, tmp_path, capsys):
        rc = main(["plan", "--env", "bandit-2", "--iter-max", "200", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["root_policy"] == pytest.approx([0.5, 0.5])
        assert (tmp_path / "tree.json").exists()

    def test_run_and_report(self, tmp_path, capsys):
        assert main(["run", "--config", str(self._write_config(tmp_path))]) == EXIT_OK
        csv_text = (tmp_path / "out" / "metrics.csv").read_text()
        capsys.readouterr()
        assert main(["report", str(tmp_path / "out" / "metrics.json")]) == EXIT_OK
        assert capsys.readouterr().out == csv_text

    def test_run_format_override(self, tmp_path):
        cfg = self._write_config(tmp_path)
        assert main(["run", "--config", str(cfg), "--format", "json",
                     "--out", str(tmp_path / "j")]) == EXIT_OK
        assert sorted(p.name for p in (tmp_path / "j").iterdir()) == ["metrics.json"]

    def test_method_failure_exit(self, tmp_path):
        cfg = self._write_config(
            tmp_path, methods=[{"name": "kl-reward", "params": {"outer_iters": 1}}])
        assert main(["run", "--config", str(cfg)]) == EXIT_METHOD
        doc = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert "kl-reward(outer_iters=1)" in doc["failures"]

    def test_config_error_exit(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"env": "bandit-2"}')
        assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
        assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
        assert main(["customize", "--env", "nowhere", "--method", "rql-exact"]) == EXIT_CONFIG

    def test_io_error_exit(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        cfg = self._write_config(tmp_path)
        assert main(["run", "--config", str(cfg), "--out", str(blocker / "sub")]) == EXIT_IO
