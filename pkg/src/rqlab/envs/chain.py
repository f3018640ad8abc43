"""Centering chain: a cart on a 1-D track that must not fall off either end.

State is (x, v) with x in [-K, K] and drift v in {-1, 0, 1}. Pushing left or
right changes the drift by one and the cart then moves by the drift. Leaving
the track ends the episode as a failure. By default the drift is
deterministic; ``push_fail`` (the push does nothing) and ``gust`` (an extra
-1/+1 position step) add transition noise.

basic: +1 per step survived. add-on: -|x| / K per step.
"""

from __future__ import annotations

from rqlab.envs.base import Model

FAIL = ("fail",)


class CenteringChain(Model):
    name = "centering-chain"
    action_names = ("left", "right")
    default_cap = 100
    reset_modes = ("center", "uniform")
    discount = 0.9
    aggregate = "mean"
    truncation_success = True
    metric_name = "mean_abs_position"

    def __init__(self, reset=None, half_width: int = 5, push_fail: float = 0.0,
                 gust: float = 0.0, survival_reward: float = 1.0, **options):
        super().__init__(reset, **options)
        if half_width < 1:
            raise ValueError("half_width must be >= 1")
        if not (0 <= push_fail <= 1 and 0 <= gust <= 1):
            raise ValueError("push_fail and gust must be probabilities")
        self.K = int(half_width)
        self.push_fail = push_fail
        self.gust = gust
        self.survival_reward = survival_reward

    def states(self):
        out = [(x, v) for x in range(-self.K, self.K + 1) for v in (-1, 0, 1)]
        return out + [FAIL]

    def terminal_outcome(self, state):
        return "failure" if state == FAIL else None

    def dynamics(self, state, action):
        x, v = state
        push = 1 if action == 1 else -1
        pushed = max(-1, min(1, v + push))
        out: dict = {}
        for p_push, v2 in ((1 - self.push_fail, pushed), (self.push_fail, v)):
            for p_gust, w in ((self.gust / 2, -1), (1 - self.gust, 0), (self.gust / 2, 1)):
                p = p_push * p_gust
                if p == 0:
                    continue
                x2 = x + v2 + w
                nxt = FAIL if abs(x2) > self.K else (x2, v2)
                out[nxt] = out.get(nxt, 0.0) + p
        return [(p, s) for s, p in out.items()]

    def rewards(self, state, action):
        x, _ = state
        return self.survival_reward, -abs(x) / self.K

    def initial(self):
        if self.reset_mode == "center":
            return [(1.0, (0, 0))]
        live = [s for s in self.states() if s != FAIL]
        return [(1.0 / len(live), s) for s in live]

    def feature(self, state, action):
        return abs(state[0]) / self.K
