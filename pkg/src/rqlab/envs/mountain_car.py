"""Discrete mountain car on a binned (position, velocity) lattice.

Positions run from -6 to 5; reaching 6 or beyond puts the car on the goal
state, which pays the goal bonus once and then absorbs. Gravity pulls toward
x = 0 with magnitude 1 next to the bottom and 2 on the slopes, so the unit
engine cannot climb from rest; the car must swing. The engine does nothing
with probability ``engine_fail``.

basic: -0.1 f^2 per step, +100 on the goal state.
add-on: -0.5 whenever f < 0.
"""

from __future__ import annotations

from rqlab.envs.base import Model

GOAL = ("goal",)
DONE = ("done",)
FORCES = (-1, 0, 1)


class DiscreteMountainCar(Model):
    name = "discrete-mountain-car"
    action_names = ("push_left", "coast", "push_right")
    default_cap = 200
    reset_modes = ("valley", "bottom")
    discount = 0.95
    aggregate = "sum"
    truncation_success = False
    metric_name = "negative_actions"

    def __init__(self, reset=None, x_min: int = -6, x_goal: int = 6, v_max: int = 3,
                 engine_fail: float = 0.1, goal_reward: float = 100.0,
                 energy_cost: float = 0.1, negative_penalty: float = 0.5, **options):
        super().__init__(reset, **options)
        if not x_min < -2 < 2 < x_goal:
            raise ValueError("need x_min < -2 and x_goal > 2")
        if v_max < 1 or not 0 <= engine_fail <= 1:
            raise ValueError("bad v_max or engine_fail")
        self.x_min, self.x_goal, self.v_max = int(x_min), int(x_goal), int(v_max)
        self.engine_fail = engine_fail
        self.goal_reward = goal_reward
        self.energy_cost = energy_cost
        self.negative_penalty = negative_penalty

    @staticmethod
    def gravity(x: int) -> int:
        if x == 0:
            return 0
        sign = 1 if x > 0 else -1
        return -sign if abs(x) == 1 else -2 * sign

    def states(self):
        lattice = [(x, v) for x in range(self.x_min, self.x_goal)
                   for v in range(-self.v_max, self.v_max + 1)]
        return lattice + [GOAL, DONE]

    def terminal_outcome(self, state):
        return "success" if state == DONE else None

    def _move(self, x, v, f):
        v2 = max(-self.v_max, min(self.v_max, v + f + self.gravity(x)))
        x2 = x + v2
        if x2 >= self.x_goal:
            return GOAL
        if x2 < self.x_min:
            return (self.x_min, 0)
        return (x2, v2)

    def dynamics(self, state, action):
        if state == GOAL:
            return [(1.0, DONE)]
        x, v = state
        f = FORCES[action]
        if f == 0 or self.engine_fail == 0:
            return [(1.0, self._move(x, v, f))]
        on, off = self._move(x, v, f), self._move(x, v, 0)
        if on == off:
            return [(1.0, on)]
        out = [(1.0 - self.engine_fail, on)]
        if self.engine_fail > 0:
            out.append((self.engine_fail, off))
        return out

    def rewards(self, state, action):
        f = FORCES[action]
        basic = -self.energy_cost * f * f + (self.goal_reward if state == GOAL else 0.0)
        addon = -self.negative_penalty if f < 0 else 0.0
        return basic, addon

    def initial(self):
        if self.reset_mode == "bottom":
            return [(1.0, (0, 0))]
        return [(1.0 / 3, (x, 0)) for x in (-1, 0, 1)]

    def feature(self, state, action):
        return 1.0 if FORCES[action] < 0 else 0.0
