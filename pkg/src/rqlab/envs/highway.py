"""Grid highway with scripted traffic on a cyclic track.

All traffic moves one cell per step, so in the traffic frame it is static and
the ego state is (cell, lane, speed) with speed in {1, 2, 3}; the ego advances
``speed - 1`` cells per step relative to traffic. Lane 0 is the leftmost
lane. Moving into, or through, an occupied cell is a collision and ends the
episode. Dynamics are deterministic.

basic: 1 + 0.4 * v_norm - 0.5 * collision, v_norm = (speed - 1) / 2.
add-on: 0.5 * lane / (lanes - 1).
"""

from __future__ import annotations

from rqlab.envs.base import Model

CRASHED = ("crashed",)
LANE_LEFT, IDLE, LANE_RIGHT, FASTER, SLOWER = range(5)

DEFAULT_TRAFFIC = ((0, 5), (1, 3), (1, 8), (2, 2), (2, 6))


class GridHighway(Model):
    name = "grid-highway"
    action_names = ("lane_left", "idle", "lane_right", "faster", "slower")
    default_cap = 40
    reset_modes = ("default",)
    discount = 0.9
    aggregate = "mean"
    truncation_success = True
    metric_name = "mean_lane_index"

    def __init__(self, reset=None, lanes: int = 3, cells: int = 10, max_speed: int = 3,
                 traffic=DEFAULT_TRAFFIC, start=(0, 1, 2), survival_reward: float = 1.0,
                 velocity_weight: float = 0.4, collision_cost: float = 0.5,
                 lane_weight: float = 0.5, **options):
        super().__init__(reset, **options)
        if lanes < 2 or cells < 3 or max_speed < 2:
            raise ValueError("need lanes >= 2, cells >= 3, max_speed >= 2")
        self.lanes, self.cells, self.max_speed = int(lanes), int(cells), int(max_speed)
        self.occupied = {(int(l), int(c) % self.cells) for l, c in traffic}
        if any(not 0 <= l < self.lanes for l, _ in self.occupied):
            raise ValueError("traffic lane out of range")
        self.start = tuple(start)
        if (self.start[1], self.start[0]) in self.occupied:
            raise ValueError("start cell is occupied")
        self.survival_reward = survival_reward
        self.velocity_weight = velocity_weight
        self.collision_cost = collision_cost
        self.lane_weight = lane_weight

    def states(self):
        live = [(c, l, v) for c in range(self.cells) for l in range(self.lanes)
                for v in range(1, self.max_speed + 1) if (l, c) not in self.occupied]
        return live + [CRASHED]

    def terminal_outcome(self, state):
        return "failure" if state == CRASHED else None

    def _advance(self, state, action):
        c, lane, speed = state
        if action == LANE_LEFT:
            lane = max(0, lane - 1)
        elif action == LANE_RIGHT:
            lane = min(self.lanes - 1, lane + 1)
        elif action == FASTER:
            speed = min(self.max_speed, speed + 1)
        elif action == SLOWER:
            speed = max(1, speed - 1)
        advance = speed - 1
        for k in range(advance + 1):
            if (lane, (c + k) % self.cells) in self.occupied:
                return CRASHED
        return ((c + advance) % self.cells, lane, speed)

    def dynamics(self, state, action):
        return [(1.0, self._advance(state, action))]

    def rewards(self, state, action):
        _, lane, speed = state
        v_norm = (speed - 1) / (self.max_speed - 1)
        crash = self._advance(state, action) == CRASHED
        basic = self.survival_reward + self.velocity_weight * v_norm
        basic -= self.collision_cost if crash else 0.0
        return basic, self.lane_weight * lane / (self.lanes - 1)

    def initial(self):
        return [(1.0, self.start)]

    def feature(self, state, action):
        return state[1] / (self.lanes - 1)
