"""Point-mass mazes (room and corridor layouts) with a scripted waypoint expert."""
from __future__ import annotations

import numpy as np

from ..data import ActionSpec

DT = 0.1
DAMPING = 0.95
GOAL_RADIUS = 0.3
GOAL_BONUS = 10.0

RIGHT, UP, LEFT = 0, 1, 2

LAYOUTS = {
    "pointroom": {
        "bounds": (4.0, 4.0),
        "blocks": [(1.0, 1.0, 3.0, 3.0)],
        "start": (0.5, 0.5),
        "tasks": {
            "t1": [((0.5, 3.5), UP), ((3.5, 3.5), RIGHT)],
            "t2": [((3.5, 0.5), RIGHT), ((3.5, 2.0), UP)],
        },
        "num_directions": 2,
    },
    "pointcorridor": {
        "bounds": (5.0, 3.0),
        "blocks": [(0.0, 1.0, 4.0, 2.0)],
        "start": (0.5, 0.5),
        "tasks": {
            "t1": [((4.5, 0.5), RIGHT), ((4.5, 2.5), UP), ((0.5, 2.5), LEFT)],
            "t2": [((4.5, 0.5), RIGHT), ((4.5, 2.5), UP)],
        },
        "num_directions": 3,
    },
}


class PointMaze:
    """State ``(x, y, vx, vy)``; action is a 2-D acceleration clipped to [-1, 1].

    ``v <- 0.95 v + 0.1 a`` then ``p <- p + 0.1 v``, resolved one axis at a time:
    a move that would leave the arena or enter a block is cancelled and that
    velocity component zeroed. The per-step reward is minus the distance to the
    goal; reaching the goal radius adds a bonus and ends the episode.
    """

    def __init__(self, layout: str = "pointroom", task: str = "t1", horizon: int = 200):
        if layout not in LAYOUTS:
            raise ValueError(f"unknown point-maze layout {layout!r}")
        spec = LAYOUTS[layout]
        if task not in spec["tasks"]:
            raise ValueError(f"unknown task {task!r} for {layout}")
        self.layout, self.task, self.horizon = layout, task, horizon
        self.width, self.height = spec["bounds"]
        self.blocks = [tuple(b) for b in spec["blocks"]]
        self.start = np.array(spec["start"], dtype=np.float64)
        self.route = spec["tasks"][task]
        self.goal = np.array(self.route[-1][0], dtype=np.float64)
        self.num_directions = spec["num_directions"]
        self.action_spec = ActionSpec("continuous", 2)
        self.state_dim = 4

    @property
    def env_id(self) -> str:
        return f"{self.layout}-{self.task}"

    def blocked(self, x, y) -> np.ndarray:
        x, y = np.asarray(x), np.asarray(y)
        out = (x < 0) | (x > self.width) | (y < 0) | (y > self.height)
        for x0, y0, x1, y1 in self.blocks:
            out = out | ((x > x0) & (x < x1) & (y > y0) & (y < y1))
        return out

    def reset(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        s = np.zeros((n, 4))
        s[:, :2] = self.start
        return s

    def step(self, states, actions, rng: np.random.Generator | None = None):
        s = np.array(states, dtype=np.float64)
        a = np.asarray(actions, dtype=np.float64)
        if a.shape != (s.shape[0], 2):
            raise ValueError("point-maze actions must have shape (n, 2)")
        a = np.clip(a, -1.0, 1.0)
        v = DAMPING * s[:, 2:] + DT * a
        x, y = s[:, 0], s[:, 1]
        nx = x + DT * v[:, 0]
        hit = self.blocked(nx, y)
        nx = np.where(hit, x, nx)
        v[hit, 0] = 0.0
        ny = y + DT * v[:, 1]
        hit = self.blocked(nx, ny)
        ny = np.where(hit, y, ny)
        v[hit, 1] = 0.0
        out = np.column_stack([nx, ny, v])
        dist = np.hypot(nx - self.goal[0], ny - self.goal[1])
        done = dist <= GOAL_RADIUS
        reward = -dist + np.where(done, GOAL_BONUS, 0.0)
        return out, reward, done

    def features(self, states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        return np.column_stack([s[:, 0] / self.width, s[:, 1] / self.height,
                                s[:, 2] / 2.0, s[:, 3] / 2.0])


class WaypointExpert:
    """PD controller that visits the task's waypoints in order.

    The option label of a step is the direction of the segment being travelled.
    """

    def __init__(self, env: PointMaze, kp: float = 3.0, kd: float = 4.0,
                 switch_radius: float = 0.3, noise: float = 0.1):
        self.env = env
        self.kp, self.kd = kp, kd
        self.switch_radius = switch_radius
        self.noise = noise
        self.points = np.array([w for w, _ in env.route])
        self.directions = np.array([d for _, d in env.route])
        self._segment = None

    def begin(self, n: int):
        self._segment = np.zeros(n, dtype=np.int64)

    def act(self, states, t: int, rng: np.random.Generator) -> np.ndarray:
        s = np.atleast_2d(states)
        if self._segment is None or len(self._segment) != len(s) or t == 0:
            self.begin(len(s))
        last = len(self.points) - 1
        near = np.linalg.norm(s[:, :2] - self.points[self._segment], axis=1) < self.switch_radius
        self._segment = np.where(near & (self._segment < last), self._segment + 1, self._segment)
        target = self.points[self._segment]
        a = self.kp * (target - s[:, :2]) - self.kd * s[:, 2:]
        a = a + self.noise * rng.standard_normal(a.shape)
        self._last_labels = self.directions[self._segment]
        return np.clip(a, -1.0, 1.0)

    def label(self, states, actions) -> np.ndarray:
        return self._last_labels.copy()
