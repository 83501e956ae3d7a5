"""Trajectory containers and padded batches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SchemaError

DUMMY_OPTION = 0


@dataclass(frozen=True)
class ActionSpec:
    kind: str  # "discrete" or "continuous"
    size: int  # number of actions, or action dimension

    def __post_init__(self):
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("action size must be positive")

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def encoded_dim(self) -> int:
        return self.size

    def encode(self, actions) -> np.ndarray:
        """One-hot for discrete actions, identity for continuous ones."""
        a = np.asarray(actions)
        if self.discrete:
            a = a.astype(np.int64)
            if a.size and (a.min() < 0 or a.max() >= self.size):
                raise ValueError("action index out of range")
            return np.eye(self.size)[a]
        a = a.astype(np.float64)
        if a.shape[-1] != self.size:
            raise DimensionError(f"action width {a.shape[-1]} != {self.size}")
        return a

    def to_dict(self) -> dict:
        return {"kind": self.kind, "size": self.size}


def one_hot(idx, n: int) -> np.ndarray:
    return np.eye(n)[np.asarray(idx, dtype=np.int64)]


@dataclass
class Trajectory:
    """States ``S_0..S_L``, actions ``A_0..A_{L-1}``, options ``Z_0..Z_L``.

    ``options[0]`` is the dummy option. ``logp[t]`` is the behavior log-probability
    of ``(Z_{t+1}, A_t)`` given ``(S_t, Z_t)`` when produced by a rollout.
    """

    states: np.ndarray
    actions: np.ndarray
    options: np.ndarray | None = None
    env_rewards: np.ndarray | None = None
    logp: np.ndarray | None = None
    terminated: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions)
        if self.states.ndim != 2:
            raise SchemaError("states must be a list of vectors")
        if len(self.states) != len(self.actions) + 1:
            raise SchemaError(
                f"{len(self.states)} states but {len(self.actions)} actions; need one more state")
        if self.options is not None:
            self.options = np.asarray(self.options, dtype=np.int64)
            if len(self.options) != len(self.states):
                raise SchemaError("options must align with states")

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def env_return(self) -> float:
        return float(np.sum(self.env_rewards)) if self.env_rewards is not None else float("nan")


@dataclass
class Batch:
    """Right-padded view of several trajectories (``mask[b, t]`` marks real steps)."""

    states: np.ndarray        # (B, L+1, s)
    actions: np.ndarray       # (B, L) int or (B, L, d)
    actions_enc: np.ndarray   # (B, L, a)
    options: np.ndarray       # (B, L+1)
    mask: np.ndarray          # (B, L) bool
    lengths: np.ndarray       # (B,)
    terminated: np.ndarray    # (B,) bool
    action_spec: ActionSpec

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory], spec: ActionSpec,
                          options: list[np.ndarray] | None = None) -> "Batch":
        if not trajs:
            raise ValueError("empty trajectory batch")
        B = len(trajs)
        L = max(t.length for t in trajs)
        s_dim = trajs[0].states.shape[1]
        states = np.zeros((B, L + 1, s_dim))
        if spec.discrete:
            actions = np.zeros((B, L), dtype=np.int64)
        else:
            actions = np.zeros((B, L, spec.size))
        opts = np.zeros((B, L + 1), dtype=np.int64)
        mask = np.zeros((B, L), dtype=bool)
        lengths = np.array([t.length for t in trajs], dtype=np.int64)
        for b, tr in enumerate(trajs):
            n = tr.length
            if tr.states.shape[1] != s_dim:
                raise DimensionError("inconsistent state dimension in batch")
            states[b, : n + 1] = tr.states
            states[b, n + 1:] = tr.states[-1]
            actions[b, :n] = tr.actions
            z = options[b] if options is not None else tr.options
            if z is not None:
                opts[b, : n + 1] = z
                opts[b, n + 1:] = z[-1]
            mask[b, :n] = True
        return cls(states, actions, spec.encode(actions), opts, mask, lengths,
                   np.array([t.terminated for t in trajs]), spec)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.mask.shape[1]

    def step_index(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.mask)

    def steps(self):
        """Flat arrays over real steps: ``S_t, Z_t, Z_{t+1}, A_t, enc(A_t)``."""
        bi, ti = self.step_index()
        return (self.states[bi, ti], self.options[bi, ti], self.options[bi, ti + 1],
                self.actions[bi, ti], self.actions_enc[bi, ti])

    def observations(self) -> np.ndarray:
        """``X_t = (A_{t-1}, S_t)`` for ``t = 0..L`` with a zero dummy ``A_{-1}``."""
        B, L1, _ = self.states.shape
        prev_a = np.concatenate(
            [np.zeros((B, 1, self.actions_enc.shape[2])), self.actions_enc], axis=1)
        return np.concatenate([prev_a, self.states], axis=2)
