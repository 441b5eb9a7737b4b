from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskforge import annotate, simworld
from taskforge.agents.builtin import lifting_task
from taskforge.agents.execute import run_policy
from taskforge.annotate import AnnotationRecord
from taskforge.errors import ChecksumMismatch, PreconditionError, SchemaError, TrajectoryIoError, VersionMismatch
from taskforge.trajectory import Trajectory, load_trajectory, save_trajectory

GOLDEN = Path(__file__).parent / "data" / "golden_lift.bin"
GOLDEN_SHA256 = "380309eb4da0e904ce6412eea8e5282a7f98ad697ffa736073eec206467ade6b"
GOLDEN_RESET = "place(red_cube, x=(0.45, 0.55), y=(-0.1, 0.1), yaw=(-0.5, 0.5))"


def record_golden() -> Trajectory:
    task = lifting_task("red_cube", GOLDEN_RESET)
    w = simworld.reset(task, 11)
    rec = w.start_recording()
    run_policy(w, w.program.policy)
    ok = simworld.check_success(w)
    w.stop_recording()
    return Trajectory(task.task_id, 11, rec.states, rec.actions, ok, rec.annotations, "scripted")


def parse_independently(data: bytes) -> dict:
    """Reader written from the documented layout, sharing no code with the package."""
    assert data[:4] == b"TFTR" and struct.unpack_from("<H", data, 4)[0] == 1
    assert hashlib.sha256(data[:-32]).digest() == data[-32:]
    (hl,) = struct.unpack_from("<I", data, 6)
    header = json.loads(data[10 : 10 + hl])
    pos = 10 + hl
    states = []
    for _ in range(header["n_states"]):
        (n,) = struct.unpack_from("<I", data, pos)
        states.append(data[pos + 4 : pos + 4 + n])
        pos += 4 + n
    actions = [struct.unpack_from("<8d", data, pos + 64 * i) for i in range(header["n_actions"])]
    pos += 64 * header["n_actions"]
    (nl,) = struct.unpack_from("<I", data, pos)
    notes = [json.loads(l) for l in data[pos + 4 : pos + 4 + nl].decode().splitlines()]
    assert pos + 4 + nl + 32 == len(data)
    return {"header": header, "states": states, "actions": actions, "notes": notes}


def test_golden_file_is_reproduced_bit_for_bit():
    data = GOLDEN.read_bytes()
    assert hashlib.sha256(data).hexdigest() == GOLDEN_SHA256
    assert record_golden().to_bytes() == data


def test_golden_file_matches_independent_reader():
    data = GOLDEN.read_bytes()
    raw = parse_independently(data)
    traj = load_trajectory(GOLDEN)
    assert raw["header"] == {
        "agent_id": "scripted", "n_actions": 59, "n_states": 60, "seed": 11, "success": True, "task_id": "builtin_lift_red_cube",
    }
    assert raw["states"] == traj.states
    assert [list(a) for a in raw["actions"]] == [a.to_list() for a in traj.actions]
    assert raw["notes"] == [a.to_dict() for a in traj.annotations]
    assert all(a[7] in (0.0, 1.0) for a in raw["actions"])


def test_corruption_and_version_errors(tmp_path):
    data = bytearray(GOLDEN.read_bytes())
    flipped = bytearray(data)
    flipped[200] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        Trajectory.from_bytes(bytes(flipped))
    with pytest.raises(ChecksumMismatch):
        Trajectory.from_bytes(bytes(data[:-10]))
    bumped = bytearray(data)
    bumped[4:6] = struct.pack("<H", 2)
    with pytest.raises(VersionMismatch):
        Trajectory.from_bytes(bytes(bumped))
    with pytest.raises(TrajectoryIoError):
        load_trajectory(tmp_path / "missing.bin")


def test_save_load_roundtrip(tmp_path):
    traj = load_trajectory(GOLDEN)
    save_trajectory(traj, tmp_path / "t.bin")
    assert load_trajectory(tmp_path / "t.bin") == traj


def test_state_action_count_invariant():
    traj = load_trajectory(GOLDEN)
    with pytest.raises(PreconditionError):
        Trajectory("t", 0, traj.states[:3], traj.actions[:3], False)


# ----------------------------------------------------------------------------- annotations


def test_annotations_are_dense_and_schema_complete():
    traj = load_trajectory(GOLDEN)
    steps = [a.step for a in traj.annotations]
    assert steps == sorted(steps) and steps[-1] <= len(traj.actions)
    for a in traj.annotations:
        assert set(a.content) >= {"step_description", "object_states", "robot_state"}
        assert set(a.content["object_states"]["red_cube"]) == {"position", "orientation"}
        assert a.content["robot_state"]["gripper"] in (0, 1)


def test_log_step_reads_world_only():
    w = simworld.reset(lifting_task("red_cube", GOLDEN_RESET), 0)
    before = w.get_state().to_bytes()
    rec = annotate.log_step(w, "look", skill="grasp", phase="enter", holding=None, note=1.23456789012)
    assert w.get_state().to_bytes() == before
    assert rec.content["step_description"] == {"action": "look", "skill": "grasp", "phase": "enter"}
    assert rec.content["extra"] == {"holding": None, "note": 1.23456789}


def test_drawer_annotation_has_joint_and_handle(family_tasks):
    task = family_tasks["drawer_opening"][0]
    w = simworld.reset(task, 0)
    rec = annotate.log_step(w, "x")
    drawer = next(o.name for o in w.objects if o.articulation is not None)
    assert "drawer" in rec.content["object_states"][drawer]["joint_positions"]
    assert f"{drawer}_handle" in rec.content["object_states"]


def test_jsonl_roundtrip(tmp_path):
    recs = load_trajectory(GOLDEN).annotations
    annotate.export_jsonl(recs, tmp_path / "a.jsonl")
    assert annotate.import_jsonl(tmp_path / "a.jsonl") == recs


@pytest.mark.parametrize(
    "line,msg",
    [
        ("not json", "invalid JSON"),
        ('{"step": 0}', "missing key 'content'"),
        ('{"step": -1, "content": {"step_description": {"action": "a"}, "object_states": {}, "robot_state": {"eef_pos": [0,0,0]}}}', "non-negative"),
        ('{"step": 0, "content": {"object_states": {}, "robot_state": {}}}', "content must hold"),
        ('{"step": 0, "content": {"step_description": {}, "object_states": {}, "robot_state": {"eef_pos": []}}}', "action missing"),
    ],
)
def test_schema_errors_carry_line_numbers(line, msg):
    good = annotate.dumps([AnnotationRecord(0, {"step_description": {"action": "a"}, "object_states": {}, "robot_state": {"eef_pos": [0, 0, 0]}})])
    with pytest.raises(SchemaError) as exc:
        annotate.loads(good + line + "\n")
    assert msg in str(exc.value) and exc.value.line == 2


def test_steps_must_not_decrease():
    mk = lambda s: AnnotationRecord(s, {"step_description": {"action": "a"}, "object_states": {}, "robot_state": {"eef_pos": [0]}})  # noqa: E731
    with pytest.raises(SchemaError):
        annotate.loads(annotate.dumps([mk(3), mk(1)]))


@settings(max_examples=50)
@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_numbers_keep_nine_significant_digits(v):
    got = annotate._num(v)
    assert got == float(f"{v:.9g}")
    assert annotate._num(got) == got
