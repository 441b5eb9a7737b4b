"""Hybrid agent: planned motion to a sampled grasp, a learned skill for the contact phase."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dsl, simworld
from ..errors import PreconditionError, SkillFailed, SkillMissing
from ..annotate import log_step
from ..objectdb import Catalog, default_catalog
from ..simworld import SkillResult, World
from ..taskgen import TaskSpec
from ..templates import HOVER
from ..trajectory import Trajectory
from .execute import RL_SKILL_CAP, SkillPolicy, run_skill
from .ppo import PolicySnapshot, apply_action

PICK_LIFT = 0.05


def pick_success_source(obj: str) -> str:
    return f"holding({obj}) and z({obj}) - z0({obj}) >= {PICK_LIFT:g}"


class PolicySkill:
    """Steps a trained policy until the skill predicate holds or the step cap."""

    def __init__(self, snapshot: PolicySnapshot, success_template: str = "", cap: int = RL_SKILL_CAP):
        self.snapshot = snapshot
        self.success_template = success_template
        self.cap = cap

    def run(self, world: World, obj: str) -> SkillResult:
        symbols = world.program.symbols
        state = dsl.parse_state_spec(", ".join(self.snapshot.obs_spec), symbols)
        if dsl.state_length(state) != self.snapshot.obs_dim:
            raise PreconditionError("policy observation layout does not match this world")
        src = self.success_template.format(obj=obj) if self.success_template else pick_success_source(obj)
        pred = dsl.compile_expr(src, symbols, "check_success", expect=dsl.BOOL)
        for n in range(1, self.cap + 1):
            a = self.snapshot.act(simworld.compose_state(world, state))[0]
            world.step(apply_action(world, a))
            if pred(world):
                return SkillResult(True, "reached", n)
        return SkillResult(False, "timeout", self.cap)


class ScriptedPickSkill:
    """Closed-loop close-and-lift; a deterministic stand-in for a trained pick policy."""

    def __init__(self, cap: int = RL_SKILL_CAP):
        self.cap = cap

    def run(self, world: World, obj: str) -> SkillResult:
        z0 = float(world.obj_position(obj)[2])
        for n in range(1, self.cap + 1):
            lifted = world.holding_name() == obj and world.obj_position(obj)[2] - z0 >= PICK_LIFT
            if lifted:
                return SkillResult(True, "reached", n - 1)
            up = 1.0 if world.gripper_closed() else 0.0
            world.step(apply_action(world, np.array([0, 0, up, 0, 0, 0, 1.0])))
            if world.gripper_closed() and world.holding_name() is None:
                return SkillResult(False, "missed", n)
        return SkillResult(False, "timeout", self.cap)


def hybrid_plan(task: TaskSpec, skill: str = "pick") -> list[dsl.SkillCall]:
    """Plan prefix to a sampled grasp, one learned pick, then a planned suffix."""
    if task.family not in ("lifting", "stacking", "pick_and_place"):
        raise PreconditionError(f"no hybrid plan for family {task.family!r}")
    obj = next(iter(task.roles.values()))
    lines = [f"move_to_grasp(obj={obj})", f"rl_skill(name={skill!r}, obj={obj})"]
    if task.family == "lifting":
        lines.append(f"move_to(target=eef + [0, 0, {HOVER:g}], gripper_open=False)")
    else:
        dest = task.roles.get("base") or task.roles["receptacle"]
        lift = 0.02 if task.family == "pick_and_place" else 0.01
        lines.append(f"move_to(target=eef + [0, 0, {HOVER:g}], gripper_open=False)")
        lines.append(
            f"move_to(target=[x({dest}) + x(eef) - x({obj}), y({dest}) + y(eef) - y({obj}), "
            f"top({dest}) + z(eef) - bottom({obj}) + {lift:g}], gripper_open=False)"
        )
        lines.append("open_gripper()")
    return [dsl.parse_skill_line(l) for l in lines]


@dataclass
class Segment:
    kind: str
    first_step: int
    last_step: int


def hybrid_rollout(
    task: TaskSpec,
    skill_bank: dict[str, SkillPolicy],
    world: World | None = None,
    seed: int = 0,
    plan: list[dsl.SkillCall] | None = None,
    catalog: Catalog | None = None,
    agent_id: str = "hybrid",
    on_state=None,
) -> Trajectory:
    """Execute a plan mixing planned skills and learned ``rl_skill`` segments.

    Every segment boundary is annotated with ``segment`` and ``boundary``
    extras; a failed or missing-parameter skill ends the rollout as a failure.
    """
    catalog = catalog or default_catalog()
    plan = plan if plan is not None else hybrid_plan(task)
    missing = sorted({c.kwargs["name"].strip("'\"") for c in plan if c.skill == "rl_skill"} - set(skill_bank or {}))
    if missing:
        raise SkillMissing(f"skill bank lacks {missing}")
    if world is None:
        world = simworld.reset(task, seed, catalog)
    steps = [dsl.bind_skill(c, world.program.symbols) for c in plan]
    rec = world.start_recording(on_state)
    current: str | None = None
    failed = False
    for bound in steps:
        kind = "policy" if bound.skill == "rl_skill" else "plan"
        if kind != current or kind == "policy":
            if current is not None:
                rec.annotations.append(log_step(world, f"end of {current} segment", segment=current, boundary="end"))
            rec.annotations.append(log_step(world, f"start of {kind} segment", segment=kind, boundary="start"))
            current = kind
        try:
            res = run_skill(world, bound, skill_bank)
        except SkillFailed as exc:
            rec.annotations.append(log_step(world, f"skill failed: {exc}", segment=kind, boundary="error"))
            failed = True
            break
        if res is not None and not res.ok:
            failed = True
            break
    if current is not None:
        rec.annotations.append(log_step(world, f"end of {current} segment", segment=current, boundary="end"))
    success = (not failed) and simworld.check_success(world)
    world.stop_recording()
    return Trajectory(task.task_id, seed, rec.states, rec.actions, success, rec.annotations, agent_id)


def segments(traj: Trajectory) -> list[Segment]:
    """Segment list recovered from the boundary annotations."""
    out: list[Segment] = []
    for a in traj.annotations:
        extra = a.content.get("extra", {})
        if extra.get("boundary") == "start":
            out.append(Segment(extra["segment"], a.step, a.step))
        elif extra.get("boundary") == "end" and out:
            out[-1].last_step = a.step
    return out


class HybridAgent:
    def __init__(self, skill_bank: dict[str, SkillPolicy], catalog: Catalog | None = None, agent_id: str = "hybrid"):
        self.skill_bank = skill_bank
        self.catalog = catalog or default_catalog()
        self.agent_id = agent_id

    def run(self, task: TaskSpec, seed: int, on_state=None) -> Trajectory:
        return hybrid_rollout(task, self.skill_bank, seed=seed, catalog=self.catalog, agent_id=self.agent_id, on_state=on_state)
