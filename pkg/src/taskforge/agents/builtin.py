"""Built-in benchmark tasks with known structure."""

from __future__ import annotations

from .. import dsl
from ..taskgen import TaskSpec
from ..templates import LIFT_HEIGHT, REACH_HEIGHT, policy_section, reward_section, state_section, success_section
from .tamp import Plan

OFFSET = 0.04
REACH_TOL = 0.02

# (object, axis of the offset) with the offset taken along a thin dimension so
# the off-centre close never lands within grasp tolerance
OFFSET_SUITE = (
    ("red_cube", 0),
    ("blue_cube", 1),
    ("green_cube", 0),
    ("yellow_cube", 1),
    ("strawberry", 0),
    ("marker", 1),
    ("banana", 1),
    ("fork", 1),
    ("spoon", 1),
    ("sponge", 2),
)


def _task(task_id: str, family: str, description: str, objects, roles, **sections) -> TaskSpec:
    return TaskSpec(task_id, family, description, tuple(objects), dsl.TaskDsl(**sections), {"source": "builtin"}, roles)


def lifting_task(obj: str, reset: str, task_id: str | None = None) -> TaskSpec:
    roles = {"target": obj}
    return _task(
        task_id or f"builtin_lift_{obj}",
        "lifting",
        f"pick up the {obj.replace('_', ' ')} and lift it {int(LIFT_HEIGHT * 100)} cm",
        [obj],
        roles,
        reset=reset,
        check_success=success_section("lifting", roles),
        compose_state=state_section("lifting", roles),
        reward_function=reward_section("lifting", roles),
        scripted_policy=policy_section("lifting", roles),
    )


def offset_plan(obj: str, axis: int, offset: float = OFFSET) -> Plan:
    """Lifting plan whose approach waypoints miss the object centre by ``offset``."""
    d = [0.0, 0.0, 0.0]
    d[axis] = offset
    shift = ", ".join(f"{v:g}" for v in d)
    text = "\n".join(
        [
            f"move_to(target=pos({obj}) + [{shift}] + [0, 0, 0.1], gripper_open=True)",
            f"move_to(target=pos({obj}) + [{shift}], gripper_open=True)",
            "close_gripper()",
            f"move_to(target=pos({obj}) + [0, 0, 0.15], gripper_open=False)",
        ]
    )
    return Plan.from_text(text)


def offset_grasp_suite(offset: float = OFFSET) -> list[tuple[TaskSpec, Plan]]:
    out = []
    for obj, axis in OFFSET_SUITE:
        reset = f"place({obj}, x=(0.45, 0.6), y=(-0.15, 0.15), yaw=0)"
        out.append((lifting_task(obj, reset, f"offset_grasp_{obj}"), offset_plan(obj, axis, offset)))
    return out


def narrow_grasp_task() -> TaskSpec:
    """Lift a thin marker from a wide range of start poses."""
    reset = "\n".join(
        [
            "place(marker, x=(0.45, 0.55), y=(-0.1, 0.1), yaw=(-pi, pi))",
            "eef(x=(0.2, 0.7), y=(-0.3, 0.3), z=(0.2, 0.4))",
        ]
    )
    return lifting_task("marker", reset, "builtin_narrow_grasp")


def reach_task() -> TaskSpec:
    goal = f"pos(red_cube) + [0, 0, {REACH_HEIGHT:g}]"
    return _task(
        "builtin_reach",
        "reaching",
        f"move the gripper {int(REACH_HEIGHT * 100)} cm above the red cube",
        ["red_cube"],
        {"target": "red_cube"},
        reset="place(red_cube, x=(0.4, 0.6), y=(-0.15, 0.15), yaw=0)\neef(x=(0.25, 0.65), y=(-0.25, 0.25), z=(0.15, 0.4))",
        check_success=f"dist(eef, {goal}) < {REACH_TOL:g}",
        compose_state="eef_pos, pos(red_cube)",
        reward_function=f"-dist(eef, {goal})",
        scripted_policy=f"move_to(target={goal})",
    )
