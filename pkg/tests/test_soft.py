import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rqlab.mdp import DiscreteMdp, RewardSelector, random_mdp
from rqlab.soft import (
    NonConvergenceError,
    SoftSolverParams,
    boltzmann_policy,
    check_policy,
    load_table,
    log_partition,
    save_table,
    soft_policy_evaluation,
    soft_value_iteration,
    total_variation,
)

from oracles import policy_eval_scalar, soft_q_scalar

BASIC = RewardSelector.basic()
ADDON = RewardSelector.addon()

# Frozen from tests/oracles.py (scalar soft value iteration to 1e-12).
LOOP_Q_BASIC = [[11.52982447123249, 9.843946747091838],
                [9.843946747091838, 10.52982447123249]]
# Frozen from tests/oracles.py (scalar soft policy evaluation, uniform policy).
LOOP_Q_ADDON_UNIFORM = [[8.713324625030538, 9.263324625030537],
                        [8.263324625030537, 8.713324625030538]]


def _lists(mdp):
    return (mdp.transition.tolist(), mdp.basic_reward.tolist(), mdp.terminal.tolist())


class TestSoftValueIteration:
    def test_bandit_q_equals_reward(self, bandit):
        q = soft_value_iteration(bandit, BASIC)
        assert q[0] == pytest.approx([1.0, 0.0], abs=1e-12)
        assert q[1] == pytest.approx([0.0, 0.0])

    def test_loop_matches_frozen_oracle(self, loop):
        q = soft_value_iteration(loop, BASIC, SoftSolverParams(tol=1e-10))
        assert np.allclose(q, LOOP_Q_BASIC, atol=1e-9)
        assert 10.0 <= q[0, 0] <= (1 + math.log(2)) / 0.1

    def test_frozen_oracle_reproduces(self, loop):
        t, rb, term = _lists(loop)
        assert np.allclose(soft_q_scalar(t, rb, term, 0.9, 1.0), LOOP_Q_BASIC, atol=1e-12)

    @pytest.mark.parametrize("n_actions,gamma,alpha", [(2, 0.9, 1.0), (3, 0.5, 0.3), (4, 0.95, 2.0)])
    def test_zero_reward_gives_pure_entropy_value(self, n_actions, gamma, alpha):
        mdp = random_mdp(np.random.default_rng(0), 5, n_actions, gamma)
        mdp = mdp.with_rewards(np.zeros((5, n_actions)), np.zeros((5, n_actions)))
        q = soft_value_iteration(mdp, BASIC, SoftSolverParams(alpha=alpha, tol=1e-11))
        expect = alpha * math.log(n_actions) * gamma / (1 - gamma)
        assert np.allclose(q, expect, atol=1e-9)

    def test_nonconvergence_carries_residual(self, loop):
        with pytest.raises(NonConvergenceError) as info:
            soft_value_iteration(loop, BASIC, SoftSolverParams(max_iter=3))
        assert info.value.residual > 0 and info.value.iterations == 3
        assert info.value.last.shape == (2, 2)

    def test_error_bound_holds(self, loop):
        tol = 1e-4
        q = soft_value_iteration(loop, BASIC, SoftSolverParams(tol=tol))
        assert np.max(np.abs(q - np.array(LOOP_Q_BASIC))) <= tol

    def test_large_rewards_do_not_overflow(self):
        mdp = random_mdp(np.random.default_rng(4), 4, 3, 0.99)
        mdp = mdp.with_rewards(basic=mdp.basic_reward * 500)
        q = soft_value_iteration(mdp, BASIC, SoftSolverParams(alpha=0.05))
        assert np.all(np.isfinite(q))

    @given(seed=st.integers(0, 10_000))
    def test_contraction_residuals_non_increasing(self, seed):
        mdp = random_mdp(np.random.default_rng(seed), 6, 3, 0.9, n_terminal=1)
        trace = []
        soft_value_iteration(mdp, BASIC, trace=trace)
        gaps = np.array(trace[1:])
        assert np.all(np.diff(gaps) <= 1e-12 * np.maximum(1, gaps[:-1]))

    @pytest.mark.parametrize("alpha", [0.05, 0.3, 1.0, 3.0, 10.0])
    def test_argmax_stable_across_temperatures(self, loop, bandit, alpha):
        for mdp, ref in ((loop, [0, 1]), (bandit, [0])):
            q = soft_value_iteration(mdp, BASIC, SoftSolverParams(alpha=alpha))
            assert list(np.argmax(q[: len(ref)], axis=1)) == ref


class TestBoltzmann:
    def test_softmax_of_one_zero(self):
        p = boltzmann_policy(np.array([[1.0, 0.0]]), 1.0)
        assert p[0] == pytest.approx([0.7310585786300049, 0.2689414213699951], abs=1e-12)

    @given(c=st.floats(-1e6, 1e6))
    def test_equal_values_uniform(self, c):
        assert boltzmann_policy(np.array([[c, c]]), 1.0)[0] == pytest.approx([0.5, 0.5])

    def test_high_temperature_near_uniform(self):
        p = boltzmann_policy(np.array([[1.0, 0.0]]), 100.0)
        assert np.max(np.abs(p - 0.5)) < 1e-2

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_nonpositive_temperature_rejected(self, alpha):
        with pytest.raises(ValueError):
            boltzmann_policy(np.zeros((1, 2)), alpha)

    @given(seed=st.integers(0, 10_000), alpha=st.floats(0.01, 10))
    def test_rows_normalized_and_positive(self, seed, alpha):
        q = np.random.default_rng(seed).normal(scale=20, size=(5, 4))
        p = boltzmann_policy(q, alpha)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p >= 0)


class TestLogPartition:
    def test_bandit_value(self):
        assert log_partition(np.array([[1.0, 0.0]]), 1.0, 0) == pytest.approx(1.3132616875182228)

    def test_uniform_case(self):
        assert log_partition(np.zeros((1, 2)), 1.0, 0) == pytest.approx(math.log(2))

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            log_partition(np.zeros((1, 2)), 0.0, 0)

    def test_bandit_identity(self, bandit):
        q = soft_value_iteration(bandit, BASIC)
        pi = boltzmann_policy(q, 1.0)
        resid = q[0] - np.log(pi[0]) - log_partition(q, 1.0, 0)
        assert np.allclose(resid, 0.0, atol=1e-12)

    @given(seed=st.integers(0, 10_000), alpha=st.sampled_from([0.2, 1.0, 4.0]))
    def test_q_minus_log_policy_constant_per_state(self, seed, alpha):
        mdp = random_mdp(np.random.default_rng(seed), 5, 3, 0.8)
        q = soft_value_iteration(mdp, BASIC, SoftSolverParams(alpha=alpha))
        pi = boltzmann_policy(q, alpha)
        diff = q - alpha * np.log(pi)
        assert np.allclose(diff - diff[:, :1], 0.0, atol=1e-9)
        z = np.array([log_partition(q, alpha, s) for s in range(5)])
        assert np.allclose(diff[:, 0], alpha * z, atol=1e-9)


class TestSoftPolicyEvaluation:
    @pytest.mark.parametrize("p0", [0.5, 0.1, 0.93])
    def test_bandit_addon_equals_reward(self, bandit, p0):
        pol = np.array([[p0, 1 - p0], [0.5, 0.5]])
        assert soft_policy_evaluation(bandit, ADDON, pol)[0] == pytest.approx([0.0, 1.0])

    def test_uniform_on_zero_reward(self):
        mdp = random_mdp(np.random.default_rng(8), 4, 3, 0.7)
        mdp = mdp.with_rewards(np.zeros((4, 3)), np.zeros((4, 3)))
        q = soft_policy_evaluation(mdp, BASIC, np.full((4, 3), 1 / 3),
                                   SoftSolverParams(tol=1e-11))
        assert np.allclose(q, 0.7 * math.log(3) / 0.3, atol=1e-9)

    def test_loop_addon_uniform_matches_frozen_oracle(self, loop):
        q = soft_policy_evaluation(loop, ADDON, np.full((2, 2), 0.5), SoftSolverParams(tol=1e-10))
        assert np.allclose(q, LOOP_Q_ADDON_UNIFORM, atol=1e-9)
        t, _, term = _lists(loop)
        oracle = policy_eval_scalar(t, loop.addon_reward.tolist(), term,
                                    [[0.5, 0.5], [0.5, 0.5]], 0.9, 1.0)
        assert np.allclose(oracle, LOOP_Q_ADDON_UNIFORM, atol=1e-12)

    @given(seed=st.integers(0, 10_000), alpha=st.sampled_from([0.5, 1.0, 2.0]))
    def test_optimal_policy_evaluates_to_its_own_q(self, seed, alpha):
        mdp = random_mdp(np.random.default_rng(seed), 5, 3, 0.9, n_terminal=1)
        params = SoftSolverParams(alpha=alpha)
        q = soft_value_iteration(mdp, BASIC, params)
        q_eval = soft_policy_evaluation(mdp, BASIC, boltzmann_policy(q, alpha), params)
        assert np.max(np.abs(q_eval - q)) <= 10 * params.tol

    def test_zero_probability_policy_rejected(self, bandit):
        with pytest.raises(ValueError):
            soft_policy_evaluation(bandit, ADDON, np.array([[1.0, 0.0], [0.5, 0.5]]))


class TestPolicyTables:
    def test_floor_warns_and_renormalizes(self):
        with pytest.warns(UserWarning):
            p = check_policy([[1.0, 0.0]], floor=True)
        assert np.all(p > 0) and p.sum() == pytest.approx(1.0)

    def test_bad_rows_rejected(self):
        with pytest.raises(ValueError):
            check_policy([[0.6, 0.6]])
        with pytest.raises(ValueError):
            check_policy([[0.5, 0.5]], shape=(2, 2))

    def test_total_variation(self):
        tv = total_variation(np.array([[1.0, 0.0], [0.5, 0.5]]), np.array([[0.0, 1.0], [0.5, 0.5]]))
        assert tv.tolist() == [1.0, 0.0]

    def test_table_round_trip(self, tmp_path):
        q = np.random.default_rng(0).normal(size=(3, 2))
        save_table(q, tmp_path / "q.json")
        assert np.array_equal(load_table(tmp_path / "q.json"), q)

    def test_params_validation(self):
        for bad in ({"alpha": 0}, {"tol": 0}, {"max_iter": 0}):
            with pytest.raises(ValueError):
                SoftSolverParams(**bad)


def test_terminal_rows_stay_zero():
    t = np.zeros((2, 1, 2))
    t[0, 0, 1] = t[1, 0, 1] = 1.0
    mdp = DiscreteMdp(t, [[2.0], [0.0]], [[0.0], [0.0]], 0.9, [False, True])
    q = soft_value_iteration(mdp, BASIC)
    assert q.tolist() == [[2.0], [0.0]]
