"""The two hand-built fixtures, exposed as environments for the harness.

Their task metric is simply the episode's add-on return.
"""

from __future__ import annotations

from rqlab.envs.base import Model

S0, END = "s0", "end"
A, B = "A", "B"


class Bandit2(Model):
    name = "bandit-2"
    action_names = ("a0", "a1")
    default_cap = 1
    discount = 0.9
    aggregate = "sum"
    metric_name = "addon_return"

    def states(self):
        return [S0, END]

    def terminal_outcome(self, state):
        return "success" if state == END else None

    def dynamics(self, state, action):
        return [(1.0, END)]

    def rewards(self, state, action):
        return (1.0, 0.0) if action == 0 else (0.0, 1.0)

    def initial(self):
        return [(1.0, S0)]

    def feature(self, state, action):
        return self.rewards(state, action)[1]


class TwoStateLoop(Model):
    name = "two-state-loop"
    action_names = ("x", "y")
    default_cap = 50
    discount = 0.9
    aggregate = "sum"
    truncation_success = True
    metric_name = "addon_return"

    def states(self):
        return [A, B]

    def terminal_outcome(self, state):
        return None

    def dynamics(self, state, action):
        if state == A:
            return [(1.0, A if action == 0 else B)]
        return [(1.0, B if action == 0 else A)]

    def rewards(self, state, action):
        if state == A:
            return (1.0, 0.0) if action == 0 else (0.0, 1.0)
        return 0.0, 0.0

    def initial(self):
        return [(1.0, A)]

    def feature(self, state, action):
        return self.rewards(state, action)[1]
