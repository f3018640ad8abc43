import numpy as np
import pytest
from hypothesis import settings

from rqlab.envs import TASK_ENVS, make_env
from rqlab.harness import oracle_prior
from rqlab.mdp import bandit2, two_state_loop

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def bandit():
    return bandit2()


@pytest.fixture
def loop():
    return two_state_loop()


@pytest.fixture
def bandit_prior(bandit):
    return oracle_prior(bandit)


@pytest.fixture
def loop_prior(loop):
    return oracle_prior(loop)


@pytest.fixture(scope="session")
def task_suite():
    """(name, env, mdp, oracle prior at alpha = 1) for the four task envs."""
    out = []
    for name in TASK_ENVS:
        env, mdp = make_env(name)
        out.append((name, env, mdp, oracle_prior(mdp)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)
