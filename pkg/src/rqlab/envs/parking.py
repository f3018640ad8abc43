"""Grid parking lot.

The car moves on a ``width x height`` grid toward a target slot in the top
row. Moves into the outer wall leave the car in place (the step is still
consumed). With probability ``slip`` a move goes sideways instead. Cells
along the slot dividers are boundary cells: the car may drive over them, but
each visit counts as a violation.

basic: -distance_weight * manhattan distance to the slot, per step.
add-on: -1 on boundary cells.
"""

from __future__ import annotations

from rqlab.envs.base import Model

MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))  # up, down, left, right
PARKED = ("parked",)


class GridParking(Model):
    name = "grid-parking"
    action_names = ("up", "down", "left", "right")
    default_cap = 100
    reset_modes = ("corner", "uniform")
    discount = 0.95
    aggregate = "none"
    truncation_success = False
    metric_name = "no_violation_rate"

    def __init__(self, reset=None, width: int = 7, height: int = 6, goal=(3, 0),
                 boundary=((2, 0), (4, 0), (2, 1), (4, 1)), start=(0, 5),
                 slip: float = 0.1, distance_weight: float = 1.0,
                 violation_penalty: float = 1.0, **options):
        super().__init__(reset, **options)
        if width < 2 or height < 2:
            raise ValueError("grid must be at least 2x2")
        if not 0 <= slip <= 1:
            raise ValueError("slip must be a probability")
        self.width, self.height = int(width), int(height)
        self.goal = tuple(goal)
        self.boundary = {tuple(b) for b in boundary}
        self.start = tuple(start)
        for cell in (self.goal, self.start, *self.boundary):
            if not self._inside(cell):
                raise ValueError(f"cell {cell} outside the grid")
        if self.goal in self.boundary or self.start == self.goal:
            raise ValueError("goal must be distinct from start and boundary cells")
        self.slip = slip
        self.distance_weight = distance_weight
        self.violation_penalty = violation_penalty

    def _inside(self, cell):
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def states(self):
        cells = [(x, y) for y in range(self.height) for x in range(self.width)
                 if (x, y) != self.goal]
        return cells + [PARKED]

    def terminal_outcome(self, state):
        return "success" if state == PARKED else None

    def _move(self, cell, delta):
        nxt = (cell[0] + delta[0], cell[1] + delta[1])
        if not self._inside(nxt):
            return cell
        return PARKED if nxt == self.goal else nxt

    def dynamics(self, state, action):
        dx, dy = MOVES[action]
        sideways = [(dy, dx), (-dy, -dx)]
        out: dict = {}
        for p, delta in ((1 - self.slip, (dx, dy)),
                         (self.slip / 2, sideways[0]), (self.slip / 2, sideways[1])):
            if p == 0:
                continue
            nxt = self._move(state, delta)
            out[nxt] = out.get(nxt, 0.0) + p
        return [(p, s) for s, p in out.items()]

    def is_violation(self, state) -> bool:
        return state in self.boundary

    def rewards(self, state, action):
        dist = abs(state[0] - self.goal[0]) + abs(state[1] - self.goal[1])
        addon = -self.violation_penalty if self.is_violation(state) else 0.0
        return -self.distance_weight * dist, addon

    def initial(self):
        if self.reset_mode == "corner":
            return [(1.0, self.start)]
        live = [s for s in self.states() if s != PARKED]
        return [(1.0 / len(live), s) for s in live]

    def feature(self, state, action):
        return 1.0 if self.is_violation(state) else 0.0
