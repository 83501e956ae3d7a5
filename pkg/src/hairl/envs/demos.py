"""Line-delimited JSON demonstration files.

Line 1 is a header (env id, dimensions, expert return); every following line is
one trajectory ``{"states": [[...]], "actions": [...], "options": [...]}``.
Floats are written with ``repr`` precision, which round-trips exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import DUMMY_OPTION, ActionSpec, Trajectory
from ..errors import DemoParseError, SchemaError

FORMAT = "hairl-demos"
VERSION = 1


@dataclass
class DemoSet:
    env_id: str
    state_dim: int
    action_spec: ActionSpec
    trajectories: list[Trajectory]
    expert_return: float = float("nan")
    expert_return_std: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, tr in enumerate(self.trajectories):
            _validate(tr, self.state_dim, self.action_spec, f"trajectory {i}")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def annotated(self) -> bool:
        return bool(self.trajectories) and all(t.options is not None for t in self.trajectories)

    def without_options(self) -> "DemoSet":
        trajs = [Trajectory(t.states, t.actions, None, t.env_rewards, terminated=t.terminated)
                 for t in self.trajectories]
        return DemoSet(self.env_id, self.state_dim, self.action_spec, trajs,
                       self.expert_return, self.expert_return_std, dict(self.meta))

    def subset(self, n: int) -> "DemoSet":
        return DemoSet(self.env_id, self.state_dim, self.action_spec, self.trajectories[:n],
                       self.expert_return, self.expert_return_std, dict(self.meta))


def _validate(tr: Trajectory, state_dim: int, spec: ActionSpec, where: str):
    if tr.states.shape[1] != state_dim:
        raise SchemaError(f"{where}: state width {tr.states.shape[1]} != {state_dim}")
    if spec.discrete:
        if tr.actions.ndim != 1:
            raise SchemaError(f"{where}: discrete actions must be integers")
        if tr.length and (tr.actions.min() < 0 or tr.actions.max() >= spec.size):
            raise SchemaError(f"{where}: action index out of range")
    elif tr.actions.ndim != 2 or (tr.length and tr.actions.shape[1] != spec.size):
        raise SchemaError(f"{where}: actions must be vectors of width {spec.size}")
    if tr.options is not None:
        if tr.options[0] != DUMMY_OPTION or (tr.options < 0).any():
            raise SchemaError(f"{where}: options must be non-negative with the dummy first")


def _traj_record(tr: Trajectory, spec: ActionSpec) -> dict:
    rec = {"states": tr.states.tolist()}
    rec["actions"] = [int(a) for a in tr.actions] if spec.discrete else tr.actions.tolist()
    if tr.options is not None:
        rec["options"] = [int(z) for z in tr.options]
    if tr.env_rewards is not None:
        rec["rewards"] = np.asarray(tr.env_rewards, dtype=np.float64).tolist()
    if tr.terminated:
        rec["terminated"] = True
    return rec


def write_demos(path, demos: DemoSet) -> None:
    header = {"format": FORMAT, "version": VERSION, "env": demos.env_id,
              "state_dim": demos.state_dim, "action": demos.action_spec.to_dict(),
              "num_trajectories": len(demos), "annotated": demos.annotated,
              "expert_return": demos.expert_return,
              "expert_return_std": demos.expert_return_std, **demos.meta}
    lines = [json.dumps(header)]
    lines += [json.dumps(_traj_record(t, demos.action_spec)) for t in demos.trajectories]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_traj(rec: dict, spec: ActionSpec, state_dim: int, lineno: int) -> Trajectory:
    if not isinstance(rec, dict) or "states" not in rec or "actions" not in rec:
        raise DemoParseError(lineno, "record needs 'states' and 'actions'")
    dtype = np.int64 if spec.discrete else np.float64
    try:
        states = np.asarray(rec["states"], dtype=np.float64)
        actions = np.asarray(rec["actions"], dtype=dtype)
        if not spec.discrete and actions.size == 0:
            actions = actions.reshape(0, spec.size)
        if states.ndim == 2 and states.shape[0] == 0:
            raise SchemaError("a trajectory needs at least one state")
    except (TypeError, ValueError) as e:
        if isinstance(e, SchemaError):
            raise SchemaError(f"line {lineno}: {e}") from None
        raise DemoParseError(lineno, f"bad array: {e}") from None
    rewards = rec.get("rewards")
    try:
        tr = Trajectory(states, actions, rec.get("options"),
                        None if rewards is None else np.asarray(rewards, dtype=np.float64),
                        terminated=bool(rec.get("terminated", False)))
    except SchemaError as e:
        raise SchemaError(f"line {lineno}: {e}") from None
    _validate(tr, state_dim, spec, f"line {lineno}")
    return tr


def read_demos(path) -> DemoSet:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise DemoParseError(1, "empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DemoParseError(1, f"invalid JSON: {e.msg}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise DemoParseError(1, "missing demo header")
    try:
        spec = ActionSpec(header["action"]["kind"], int(header["action"]["size"]))
        state_dim = int(header["state_dim"])
        env_id = str(header["env"])
    except (KeyError, TypeError, ValueError) as e:
        raise DemoParseError(1, f"malformed header: {e}") from None
    trajs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DemoParseError(lineno, f"invalid JSON: {e.msg}") from None
        trajs.append(_parse_traj(rec, spec, state_dim, lineno))
    known = {"format", "version", "env", "state_dim", "action", "num_trajectories",
             "annotated", "expert_return", "expert_return_std"}
    meta = {k: v for k, v in header.items() if k not in known}
    return DemoSet(env_id, state_dim, spec, trajs, float(header.get("expert_return", "nan")),
                   float(header.get("expert_return_std", "nan")), meta)
