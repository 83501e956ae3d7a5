"""9x9 four-rooms gridworld and its value-iteration expert."""
from __future__ import annotations

import numpy as np

from ..data import ActionSpec

SIZE = 9
WALL = 4  # index of the dividing row and column
DOORWAYS = ((1, 4), (6, 4), (4, 1), (4, 7))
# up, down, left, right as (d_row, d_col)
MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]])
HORIZONTAL, VERTICAL = 0, 1
ACTION_CLASS = np.array([VERTICAL, VERTICAL, HORIZONTAL, HORIZONTAL])

TASKS = {
    "t1": {"start": (0, 0), "goal": (8, 8)},
    "t2": {"start": (8, 0), "goal": (0, 8)},
}


def _wall_mask() -> np.ndarray:
    wall = np.zeros((SIZE, SIZE), dtype=bool)
    wall[WALL, :] = True
    wall[:, WALL] = True
    for r, c in DOORWAYS:
        wall[r, c] = False
    return wall


def _room_ids() -> np.ndarray:
    """Room 0..3 (TL, TR, BL, BR); a doorway belongs to the lower-indexed room."""
    rows, cols = np.meshgrid(np.arange(SIZE), np.arange(SIZE), indexing="ij")
    room = (rows > WALL).astype(int) * 2 + (cols > WALL).astype(int)
    room[1, 4], room[6, 4], room[4, 1], room[4, 7] = 0, 2, 0, 1
    return room


class FourRooms:
    """Deterministic gridworld; raw states are flat cell indices ``row * 9 + col``."""

    num_actions = 4
    step_reward = -0.01
    goal_reward = 1.0

    def __init__(self, task: str = "t1", horizon: int = 60):
        if task not in TASKS:
            raise ValueError(f"unknown four-rooms task {task!r}")
        self.task = task
        self.horizon = horizon
        self.wall = _wall_mask()
        self.room = _room_ids()
        self.start = self.cell(*TASKS[task]["start"])
        self.goal = self.cell(*TASKS[task]["goal"])
        self.action_spec = ActionSpec("discrete", 4)
        self.state_dim = 6
        self.next_state = self._transition_table()

    @property
    def env_id(self) -> str:
        return f"fourrooms-{self.task}"

    @staticmethod
    def cell(row: int, col: int) -> int:
        return row * SIZE + col

    @property
    def num_states(self) -> int:
        return SIZE * SIZE

    def _transition_table(self) -> np.ndarray:
        table = np.zeros((SIZE * SIZE, 4), dtype=np.int64)
        for r in range(SIZE):
            for c in range(SIZE):
                for a, (dr, dc) in enumerate(MOVES):
                    nr, nc = r + dr, c + dc
                    ok = 0 <= nr < SIZE and 0 <= nc < SIZE and not self.wall[nr, nc]
                    table[self.cell(r, c), a] = self.cell(nr, nc) if ok else self.cell(r, c)
        return table

    def open_cells(self) -> np.ndarray:
        return np.flatnonzero(~self.wall.ravel())

    def reset(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.full(n, self.start, dtype=np.int64)

    def step(self, states, actions, rng: np.random.Generator | None = None):
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions)
        if actions.shape != states.shape or not np.issubdtype(actions.dtype, np.integer):
            raise ValueError("four-rooms actions must be one integer per state")
        if actions.size and (actions.min() < 0 or actions.max() >= 4):
            raise ValueError("action index out of range")
        nxt = self.next_state[states, actions]
        done = nxt == self.goal
        reward = np.where(done, self.step_reward + self.goal_reward, self.step_reward)
        return nxt, reward, done

    def features(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        rows, cols = np.divmod(states, SIZE)
        room = np.eye(4)[self.room[rows, cols]]
        return np.column_stack([cols / (SIZE - 1), rows / (SIZE - 1), room])


class FourRoomsExpert:
    """Optimal finite-horizon policy by backward value iteration.

    Among optimal actions one is drawn uniformly at random, so demonstrations
    cover the different shortest routes.
    """

    def __init__(self, env: FourRooms, tol: float = 1e-9):
        self.env = env
        T, nS = env.horizon, env.num_states
        V = np.zeros(nS)
        self.optimal = np.zeros((T, nS, 4), dtype=bool)
        nxt = env.next_state
        at_goal = nxt == env.goal
        r = np.where(at_goal, env.step_reward + env.goal_reward, env.step_reward)
        for k in range(T - 1, -1, -1):  # k = time index, T - k steps remain
            Q = r + np.where(at_goal, 0.0, V[nxt])
            V = Q.max(axis=1)
            self.optimal[k] = Q >= V[:, None] - tol
        self.value0 = V

    def act(self, states, t: int, rng: np.random.Generator) -> np.ndarray:
        opt = self.optimal[min(t, self.env.horizon - 1), states]
        probs = opt / opt.sum(axis=1, keepdims=True)
        u = rng.random(len(states))
        return np.minimum((np.cumsum(probs, axis=1) <= u[:, None]).sum(axis=1), 3)

    def label(self, states, actions) -> np.ndarray:
        """Option label per step: the movement axis (horizontal 0, vertical 1)."""
        return ACTION_CLASS[np.asarray(actions)]
