from __future__ import annotations

import math

import numpy as np
import pytest

from helpers import builtin_scenes, grasp_collides, rot_of
from taskforge import contactsample as cs
from taskforge.errors import PreconditionError, SkillFailed
from taskforge.geometry import Pose, box_mesh


@pytest.fixture(scope="module")
def scenes():
    return builtin_scenes()


def sample_scene(task, world, target, seed):
    o = world.obj(target)
    mesh = world.catalog.assets.mesh(o.mesh_ref)
    hint = cs.default_hint(task.family)
    cands = cs.sample_candidates(mesh, o.pose, 1024, hint, np.random.default_rng(seed), scale=o.scale)
    return hint, cs.reject_invalid(cands, world, target, hint)


def test_rejection_agrees_with_independent_recheck(scenes):
    rng = np.random.default_rng(0)
    for task, world, target in scenes:
        hint, checked = sample_scene(task, world, target, 0)
        assert sum(c.valid for c in checked) > 0, task.task_id
        # full re-check on every valid candidate, plus a sample of rejected ones
        rejected = [c for c in checked if not c.valid]
        picks = [c for c in checked if c.valid] + [rejected[i] for i in rng.choice(len(rejected), min(40, len(rejected)), replace=False)]
        for c in picks:
            hit = grasp_collides(world, target, c, cs.GRIPPER_BOX_OFFSET, cs.GRIPPER_BOX_HALF)
            assert hit == (c.rejection_reason == "collision"), (task.task_id, c.to_dict())
            if c.valid:
                z = rot_of(c.gripper_pose.orientation)[:, 2]
                assert math.acos(min(1.0, float(z @ hint.axis))) <= hint.cone_half_angle + 1e-9
                assert world.workspace.contains(c.gripper_pose.position)
                assert -z[2] >= math.cos(math.radians(75)) - 1e-12


def test_candidates_deterministic_in_seed(scenes):
    task, world, target = scenes[4]
    _, a = sample_scene(task, world, target, 3)
    _, b = sample_scene(task, world, target, 3)
    _, c = sample_scene(task, world, target, 4)
    assert a == b and a != c


def test_candidate_geometry():
    mesh = box_mesh((0.05, 0.05, 0.05))
    pose = Pose([0.5, 0.0, 0.025])
    for c in cs.sample_candidates(mesh, pose, 200, cs.DOWN_HINT, np.random.default_rng(1)):
        # contact on the surface, finger 5 mm off it, approach axis is the gripper z
        local = np.abs(c.contact_point - pose.position)
        assert np.isclose(local.max(), 0.025)
        assert np.linalg.norm(c.gripper_pose.position - c.contact_point) == pytest.approx(cs.FINGER_OFFSET)
        assert np.allclose(rot_of(c.gripper_pose.orientation)[:, 2], c.approach_dir, atol=1e-9)
        assert c.approach_dir @ cs.DOWN_HINT.axis >= math.cos(cs.DOWN_HINT.cone_half_angle) - 1e-9


def test_reason_order_is_collision_first(scenes):
    task, world, target = scenes[0]
    o = world.obj(target)
    mesh = world.catalog.assets.mesh(o.mesh_ref)
    # pointing up: every candidate is out of cone; those under the table still report collision
    up = cs.AxisHint((0.0, 0.0, 1.0), math.radians(10))
    cands = cs.reject_invalid(cs.sample_candidates(mesh, o.pose, 256, up, np.random.default_rng(0), scale=o.scale), world, target)
    reasons = {c.rejection_reason for c in cands}
    assert not any(c.valid for c in cands)
    assert reasons <= {"collision", "invalid_orientation"}


def test_get_grasp_pose_best_aligned(scenes):
    task, world, target = scenes[0]
    best = cs.get_grasp_pose(world, target, rng=np.random.default_rng(0))
    valid = cs.sample_valid(world, target, rng=np.random.default_rng(0))
    assert best == max(valid, key=lambda c: c.approach_dir @ cs.DOWN_HINT.axis)


def test_no_valid_candidate_raises(scenes):
    task, world, target = scenes[0]
    with pytest.raises(SkillFailed):
        cs.get_grasp_pose(world, target, cs.AxisHint((0.0, 0.0, 1.0), 0.1), np.random.default_rng(0), n=32)


def test_summary_counts(scenes, tmp_path):
    task, world, target = scenes[2]
    _, checked = sample_scene(task, world, target, 0)
    s = cs.summarize(checked)
    assert s["candidates"] == 1024 and s["valid"] + sum(s["rejections"].values()) == 1024
    cs.export_jsonl(checked[:5], tmp_path / "c.jsonl")
    assert len((tmp_path / "c.jsonl").read_text().splitlines()) == 5


@pytest.mark.parametrize("rate,want", [(0.0, 1.0), (0.5, 0.5), (0.95, 0.1), (1.0, 0.1)])
def test_decay_schedule(rate, want):
    assert cs.decay_schedule(rate) == pytest.approx(want)


def test_preconditions():
    with pytest.raises(PreconditionError):
        cs.decay_schedule(1.5)
    with pytest.raises(PreconditionError):
        cs.AxisHint((0.0, 0.0, 2.0), 0.3)
    with pytest.raises(PreconditionError):
        cs.sample_candidates(box_mesh((0.1, 0.1, 0.1)), Pose(), 0)
