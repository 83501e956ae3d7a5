"""Tiny fully tabulated MDPs on which every expectation can be enumerated."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import ActionSpec

ROW_TOL = 1e-12


@dataclass
class EnumerableMDP:
    """Transition table ``P[s, a, s']``, initial distribution ``mu[s]``, horizon ``T``.

    ``reward[s, a]`` is an optional evaluation-only reward. Episodes never
    terminate early. Features are one-hot state vectors.
    """

    P: np.ndarray
    mu: np.ndarray
    horizon: int
    reward: np.ndarray | None = None
    name: str = "custom"

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ValueError("transition table must have shape (S, A, S)")
        if self.mu.shape != (self.P.shape[0],):
            raise ValueError("initial distribution must have one entry per state")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if (self.P < 0).any() or np.abs(self.P.sum(axis=2) - 1).max() > ROW_TOL:
            raise ValueError("transition rows must be distributions")
        if (self.mu < 0).any() or abs(self.mu.sum() - 1) > ROW_TOL:
            raise ValueError("initial distribution must sum to one")
        if self.reward is None:
            self.reward = np.zeros(self.P.shape[:2])
        self.action_spec = ActionSpec("discrete", self.num_actions)
        self.state_dim = self.num_states

    @property
    def env_id(self) -> str:
        return f"enum-{self.name}"

    @property
    def num_states(self) -> int:
        return self.P.shape[0]

    @property
    def num_actions(self) -> int:
        return self.P.shape[1]

    def reset(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return _draw(np.broadcast_to(self.mu, (n, self.num_states)), rng)

    def step(self, states, actions, rng: np.random.Generator):
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions)
        if not np.issubdtype(actions.dtype, np.integer) or actions.shape != states.shape:
            raise ValueError("actions must be one integer per state")
        if actions.size and (actions.min() < 0 or actions.max() >= self.num_actions):
            raise ValueError("action index out of range")
        nxt = _draw(self.P[states, actions], rng)
        return nxt, self.reward[states, actions], np.zeros(len(states), dtype=bool)

    def features(self, states) -> np.ndarray:
        return np.eye(self.num_states)[np.asarray(states, dtype=np.int64)]


def _draw(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    return np.minimum((np.cumsum(probs, axis=1) <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


def random_mdp(rng: np.random.Generator, num_states: int = 3, num_actions: int = 2,
               horizon: int = 2, concentration: float = 1.0, name: str = "random") -> EnumerableMDP:
    P = rng.dirichlet(np.full(num_states, concentration), size=(num_states, num_actions))
    mu = rng.dirichlet(np.full(num_states, concentration))
    # Dirichlet draws sum to one only up to rounding; renormalize explicitly.
    P /= P.sum(axis=2, keepdims=True)
    mu /= mu.sum()
    return EnumerableMDP(P, mu, horizon, name=name)


def bandit(reward_action: int = 1, num_actions: int = 2) -> EnumerableMDP:
    """One state, one step; only ``reward_action`` pays 1."""
    P = np.ones((1, num_actions, 1))
    reward = np.zeros((1, num_actions))
    reward[0, reward_action] = 1.0
    return EnumerableMDP(P, np.ones(1), 1, reward=reward, name="bandit")


def deterministic_chain(num_states: int = 3, horizon: int = 2) -> EnumerableMDP:
    """Action 0 stays, action 1 moves right (saturating); starts in state 0."""
    P = np.zeros((num_states, 2, num_states))
    for s in range(num_states):
        P[s, 0, s] = 1.0
        P[s, 1, min(s + 1, num_states - 1)] = 1.0
    mu = np.zeros(num_states)
    mu[0] = 1.0
    return EnumerableMDP(P, mu, horizon, name="chain")


# Shipped instances addressable as ``enum-<name>``.
SHIPPED = {
    "tiny": lambda: random_mdp(np.random.default_rng(11), 3, 2, 2, name="tiny"),
    "small": lambda: random_mdp(np.random.default_rng(12), 4, 2, 3, name="small"),
    "chain": deterministic_chain,
    "bandit": bandit,
}


class TabularExpert:
    """Fixed stochastic state-to-action table (``probs[s, a]``) for enumerable MDPs."""

    def __init__(self, env: EnumerableMDP, seed: int = 0, probs: np.ndarray | None = None):
        self.env = env
        if probs is None:
            probs = np.random.default_rng(seed).dirichlet(np.ones(env.num_actions) * 0.5,
                                                          size=env.num_states)
        self.probs = np.asarray(probs, dtype=np.float64)

    def act(self, states, t: int, rng: np.random.Generator) -> np.ndarray:
        return _draw(self.probs[np.asarray(states)], rng)

    def label(self, states, actions) -> np.ndarray:
        return np.asarray(actions, dtype=np.int64)
