"""Environment registry, experts and demonstration I/O."""
from __future__ import annotations

import numpy as np

from ..data import DUMMY_OPTION, Trajectory
from .demos import DemoSet, read_demos, write_demos
from .enumerable import SHIPPED, EnumerableMDP, TabularExpert, bandit, random_mdp
from .fourrooms import FourRooms, FourRoomsExpert
from .pointmaze import LAYOUTS, PointMaze, WaypointExpert

ENV_IDS = ("fourrooms-t1", "fourrooms-t2", "pointroom-t1", "pointroom-t2",
           "pointcorridor-t1", "pointcorridor-t2")

__all__ = ["DemoSet", "read_demos", "write_demos", "EnumerableMDP", "FourRooms", "PointMaze",
           "make_env", "make_expert", "expert_rollouts", "expert_demos", "resolve_env_id",
           "random_mdp", "bandit", "ENV_IDS"]


def resolve_env_id(env: str, task: str | None = None) -> str:
    """Accept ``fourrooms-t1`` or ``("fourrooms", "t1")``."""
    if task is None:
        return env
    if env.endswith(f"-{task}"):
        return env
    return f"{env}-{task}"


def make_env(env_id: str, task: str | None = None, horizon: int | None = None):
    env_id = resolve_env_id(env_id, task)
    name, _, suffix = env_id.partition("-")
    kw = {} if horizon is None else {"horizon": horizon}
    if name == "fourrooms":
        return FourRooms(suffix, **kw)
    if name in LAYOUTS:
        return PointMaze(name, suffix, **kw)
    if name == "enum":
        if suffix not in SHIPPED:
            raise ValueError(f"unknown enumerable instance {suffix!r}")
        env = SHIPPED[suffix]()
        if horizon is not None:
            env.horizon = horizon
        return env
    raise ValueError(f"unknown environment {env_id!r}")


def make_expert(env, seed: int = 0):
    if isinstance(env, FourRooms):
        return FourRoomsExpert(env)
    if isinstance(env, PointMaze):
        return WaypointExpert(env)
    if isinstance(env, EnumerableMDP):
        return TabularExpert(env, seed)
    raise ValueError(f"no expert for {type(env).__name__}")


def expert_rollouts(env, expert, n: int, rng: np.random.Generator,
                    annotate: bool = True) -> list[Trajectory]:
    """Run the expert for ``n`` lockstep episodes, cut at the first terminal step."""
    raw = env.reset(n, rng)
    S, A, Z, R = [env.features(raw)], [], [np.full(n, DUMMY_OPTION)], []
    length = np.full(n, env.horizon, dtype=np.int64)
    finished = np.zeros(n, dtype=bool)
    for t in range(env.horizon):
        a = expert.act(raw, t, rng)
        Z.append(expert.label(raw, a))
        raw, r, done = env.step(raw, a, rng)
        S.append(env.features(raw))
        A.append(a)
        R.append(r)
        length[done & ~finished] = t + 1
        finished |= done
        if finished.all():
            break
    S, A, Z, R = (np.stack(x, axis=1) for x in (S, A, Z, R))
    out = []
    for i in range(n):
        L = int(length[i])
        out.append(Trajectory(S[i, : L + 1], A[i, :L], Z[i, : L + 1] if annotate else None,
                              R[i, :L], terminated=bool(finished[i])))
    return out


def expert_demos(env_id: str, episodes: int, seed: int = 0, annotate: bool = False,
                 task: str | None = None) -> DemoSet:
    env = make_env(env_id, task)
    expert = make_expert(env, seed)
    rng = np.random.default_rng(seed)
    trajs = expert_rollouts(env, expert, episodes, rng, annotate)
    returns = np.array([t.env_return for t in trajs])
    return DemoSet(env.env_id, env.state_dim, env.action_spec, trajs,
                   float(returns.mean()), float(returns.std()),
                   {"seed": seed, "horizon": env.horizon})
