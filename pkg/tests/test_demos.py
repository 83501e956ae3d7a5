import json

import numpy as np
import pytest

from hairl.data import ActionSpec, Trajectory
from hairl.envs import DemoSet, expert_demos, read_demos, write_demos
from hairl.errors import DemoParseError, SchemaError


def _same(a: Trajectory, b: Trajectory):
    assert np.array_equal(a.states, b.states) and a.states.dtype == b.states.dtype
    assert np.array_equal(a.actions, b.actions)
    assert (a.options is None) == (b.options is None)
    if a.options is not None:
        assert np.array_equal(a.options, b.options)
    assert np.array_equal(a.env_rewards, b.env_rewards)
    assert a.terminated == b.terminated


@pytest.mark.parametrize("env_id", ["fourrooms-t1", "pointroom-t1"])
def test_round_trip_is_bit_exact(tmp_path, env_id):
    d = expert_demos(env_id, 10, seed=1, annotate=True)
    write_demos(tmp_path / "d.jsonl", d)
    back = read_demos(tmp_path / "d.jsonl")
    assert back.env_id == d.env_id and back.action_spec == d.action_spec
    assert back.expert_return == d.expert_return and back.meta == d.meta
    assert len(back) == 10 and back.annotated
    for a, b in zip(d.trajectories, back.trajectories):
        _same(a, b)


def test_random_floats_round_trip(tmp_path, rng):
    spec = ActionSpec("continuous", 2)
    trajs = [Trajectory(rng.standard_normal((4, 3)) * 10.0 ** rng.integers(-300, 300, (4, 3)),
                        rng.standard_normal((3, 2)))]
    write_demos(tmp_path / "r.jsonl", DemoSet("custom", 3, spec, trajs))
    _same(trajs[0], read_demos(tmp_path / "r.jsonl").trajectories[0])


def test_missing_options_means_unannotated(tmp_path):
    d = expert_demos("fourrooms-t1", 3, seed=0, annotate=False)
    write_demos(tmp_path / "d.jsonl", d)
    assert "options" not in (tmp_path / "d.jsonl").read_text()
    back = read_demos(tmp_path / "d.jsonl")
    assert not back.annotated and all(t.options is None for t in back.trajectories)
    assert not expert_demos("fourrooms-t1", 2, annotate=True).without_options().annotated


def test_subset():
    d = expert_demos("fourrooms-t1", 5, seed=0)
    assert len(d.subset(2)) == 2 and d.subset(2).trajectories[0] is d.trajectories[0]


def _write(path, header, records):
    lines = [json.dumps(header)] + [r if isinstance(r, str) else json.dumps(r) for r in records]
    path.write_text("\n".join(lines) + "\n")


HEADER = {"format": "hairl-demos", "version": 1, "env": "fourrooms-t1", "state_dim": 2,
          "action": {"kind": "discrete", "size": 4}}


def test_mismatched_lengths_schema_error(tmp_path):
    _write(tmp_path / "d.jsonl", HEADER, [{"states": [[0, 0], [1, 1]], "actions": [0, 1]}])
    with pytest.raises(SchemaError, match="line 2"):
        read_demos(tmp_path / "d.jsonl")


def test_state_width_schema_error(tmp_path):
    _write(tmp_path / "d.jsonl", HEADER, [{"states": [[0, 0], [1, 1]], "actions": [0]},
                                          {"states": [[0, 0, 0], [1, 1, 1]], "actions": [0]}])
    with pytest.raises(SchemaError, match="line 3"):
        read_demos(tmp_path / "d.jsonl")


def test_action_out_of_range_schema_error(tmp_path):
    _write(tmp_path / "d.jsonl", HEADER, [{"states": [[0, 0], [1, 1]], "actions": [7]}])
    with pytest.raises(SchemaError):
        read_demos(tmp_path / "d.jsonl")


def test_malformed_line_reports_line_number(tmp_path):
    _write(tmp_path / "d.jsonl", HEADER, [{"states": [[0, 0], [1, 1]], "actions": [0]},
                                          "{not json"])
    with pytest.raises(DemoParseError) as e:
        read_demos(tmp_path / "d.jsonl")
    assert e.value.lineno == 3
    _write(tmp_path / "d.jsonl", HEADER, [{"states": [[0, 0]]}])
    with pytest.raises(DemoParseError) as e:
        read_demos(tmp_path / "d.jsonl")
    assert e.value.lineno == 2


def test_bad_header(tmp_path):
    (tmp_path / "d.jsonl").write_text('{"env": "x"}\n')
    with pytest.raises(DemoParseError) as e:
        read_demos(tmp_path / "d.jsonl")
    assert e.value.lineno == 1
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(DemoParseError):
        read_demos(tmp_path / "e.jsonl")
