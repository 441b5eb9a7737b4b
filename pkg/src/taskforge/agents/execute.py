"""Executing skill-call sequences in a world."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from .. import contactsample, dsl, simworld
from ..annotate import log_step
from ..errors import InvalidDsl, SkillFailed, SkillMissing
from ..geometry import Pose
from ..simworld import SkillResult, World

RL_SKILL_CAP = 200


class SkillPolicy(Protocol):
    """A learned (or scripted) closed-loop skill usable through ``rl_skill``."""

    def run(self, world: World, obj: str) -> SkillResult: ...


@dataclass
class ExecutionLog:
    results: list[tuple[str, SkillResult]] = field(default_factory=list)
    segments: list[tuple[str, int, int]] = field(default_factory=list)  # (kind, first step, last step)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and all(r.ok for _, r in self.results)


def _eval(expr, world: World):
    try:
        return expr(world)
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise SkillFailed(f"parameter evaluation failed: {exc}") from None


@simworld.skill("move_to_grasp")
def move_to_grasp(world: World, obj: str, hint: contactsample.AxisHint | None = None, seed: int = 0) -> SkillResult:
    """Hover 0.1 m above a sampled grasp pose, then descend onto it."""
    hint = hint or contactsample.DOWN_HINT
    rng = np.random.default_rng(seed)
    try:
        cand = contactsample.get_grasp_pose(world, obj, hint, rng)
    except SkillFailed:
        return SkillResult(False, "unreachable", 0)
    grasp = cand.gripper_pose
    hover = Pose(grasp.position + np.array([0.0, 0.0, 0.1]), grasp.orientation, canonical=True)
    total = 0
    for target in (hover, grasp):
        r = simworld._move(world, target, True)
        total += r.steps_taken
        if not r.ok:
            return SkillResult(False, r.reason, total)
    return SkillResult(True, "reached", total)


def run_skill(world: World, bound: dsl.BoundSkill, bank: dict[str, SkillPolicy] | None = None) -> SkillResult | None:
    a = bound.args
    s = bound.skill
    if s == "log_step":
        if world.recorder is not None:
            world.recorder.annotations.append(log_step(world, a["description"]))
        return None
    if s == "move_to":
        target = np.asarray(_eval(a["target"], world), dtype=float)
        q = _eval(a["orientation"], world) if "orientation" in a else world.eef_pose.orientation
        gripper_open = a.get("gripper_open", not world.gripper_closed())
        return simworld.move_to(world, Pose(target, q), gripper_open)
    if s == "open_gripper":
        return simworld.open_gripper(world)
    if s == "close_gripper":
        return simworld.close_gripper(world)
    if s == "grasp":
        return simworld.grasp(world, a["obj"])
    if s == "open_drawer":
        return simworld.open_drawer(world, a["obj"])
    if s == "move_to_grasp":
        return move_to_grasp(world, a["obj"])
    if s == "rl_skill":
        name = a["name"]
        if not bank or name not in bank:
            raise SkillMissing(f"skill bank has no policy {name!r}")
        return bank[name].run(world, a["obj"])
    raise InvalidDsl(f"unknown skill {s!r}", section="scripted_policy", error_class="unknown symbol")


def run_policy(
    world: World,
    steps: list[dsl.BoundSkill],
    bank: dict[str, SkillPolicy] | None = None,
    stop_on_failure: bool = True,
    on_step: Callable[[int, Any], None] | None = None,
) -> ExecutionLog:
    """Execute skills in order; by default the first failing skill ends the episode."""
    log = ExecutionLog()
    for i, bound in enumerate(steps):
        first = world.step_count
        kind = "policy" if bound.skill == "rl_skill" else "plan"
        try:
            res = run_skill(world, bound, bank)
        except SkillFailed as exc:
            log.error = str(exc)
            res = SkillResult(False, "unreachable", 0)
        if res is None:
            continue
        log.results.append((bound.skill, res))
        if log.segments and log.segments[-1][0] == kind and kind == "plan":
            log.segments[-1] = (kind, log.segments[-1][1], world.step_count)
        else:
            log.segments.append((kind, first, world.step_count))
        if on_step is not None:
            on_step(i, res)
        if not res.ok and stop_on_failure:
            break
    return log
