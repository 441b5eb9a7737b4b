from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskforge import dsl
from taskforge.errors import InvalidDsl

SYMS = dsl.Symbols.of(["cube", "drawer"], ["drawer"])


class Ctx:
    """Minimal evaluation context with fixed object states."""

    def __init__(self):
        self.pos = {"cube": np.array([0.5, 0.1, 0.12]), "drawer": np.array([0.6, 0.0, 0.1])}
        self.pos0 = {"cube": np.array([0.5, 0.1, 0.02]), "drawer": np.array([0.6, 0.0, 0.1])}
        self.held = "cube"

    def obj_position(self, n):
        return self.pos[n]

    def obj_initial_position(self, n):
        return self.pos0[n]

    def obj_orientation(self, n):
        return np.array([1.0, 0, 0, 0])

    def obj_joint(self, n):
        return 0.07

    def obj_bounds(self, n):
        return self.pos[n] - 0.02, self.pos[n] + 0.02

    def is_holding(self, n):
        return n == self.held

    def eef_position(self):
        return np.array([0.5, 0.1, 0.15])

    def eef_orientation(self):
        return np.array([0.0, 1.0, 0, 0])

    def gripper_closed(self):
        return True


def ev(src, expect=None, extra=None, env=None):
    return dsl.compile_expr(src, SYMS, "check_success", expect=expect, extra_names=extra)(Ctx(), env or {})


def test_lift_predicate():
    assert ev("holding(cube) and z(cube) - z0(cube) > 0.05", dsl.BOOL) is True
    assert ev("holding(drawer)", dsl.BOOL) is False


@pytest.mark.parametrize(
    "src,want",
    [
        ("dist(eef, cube)", 0.03),
        ("xy_dist(cube, drawer)", math.hypot(0.1, 0.1)),
        ("top(cube)", 0.14),
        ("bottom(cube) - 0.1", 0.0),
        ("joint(drawer)", 0.07),
        ("norm(pos(cube) - pos0(cube))", 0.1),
        ("clip(5, 0, 1)", 1.0),
        ("min(1, 2, -3) + max(0, 4)", 1.0),
        ("-abs(-2) ** 2", -4.0),
        ("x(eef + [1, 0, 0])", 1.5),
        ("cos(pi)", -1.0),
    ],
)
def test_numeric_builtins(src, want):
    assert math.isclose(ev(src, dsl.NUM), want, abs_tol=1e-12)


def test_bool_coerces_to_num_where_number_expected():
    assert ev("1 - holding(cube)", dsl.NUM) == 0.0
    assert ev("holding(cube)", dsl.NUM) == 1.0


def test_reward_extra_name():
    assert ev("-dist(eef, cube) + 2 * success", dsl.NUM, {"success": dsl.NUM}, {"success": 1.0}) == pytest.approx(1.97)


def test_division_by_zero_raises_at_eval():
    with pytest.raises(ZeroDivisionError):
        ev("1 / (x(cube) - 0.5)", dsl.NUM)


@pytest.mark.parametrize(
    "src,cls",
    [
        ("pos(ghost)", "unknown symbol"),
        ("import os", "syntax error"),
        ("__import__('os')", "unknown symbol"),
        ("cube.pos", "unsupported construct"),
        ("pos(cube) > 1", "type error"),
        ("joint(cube)", "type error"),
        ("dist(cube)", "arity"),
        ("lambda: 1", "unsupported construct"),
        ("", "syntax error"),
    ],
)
def test_rejections_carry_error_class(src, cls):
    with pytest.raises(InvalidDsl) as exc:
        dsl.compile_expr(src, SYMS, "check_success", expect=dsl.BOOL)
    assert exc.value.error_class == cls
    assert exc.value.section == "check_success"


def test_expect_type_mismatch():
    with pytest.raises(InvalidDsl) as exc:
        dsl.compile_expr("pos(cube)", SYMS, "check_success", expect=dsl.BOOL)
    assert exc.value.error_class == "type error"


# arithmetic against Python's own evaluator
leaf = st.floats(-10, 10, allow_nan=False).map(lambda v: f"({v!r})")


def _combine(children):
    return st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})")


arith = st.recursive(leaf, _combine, max_leaves=8)


@settings(max_examples=100)
@given(arith)
def test_arithmetic_matches_python(src):
    want = eval(src, {"__builtins__": {}})
    assert ev(src, dsl.NUM) == pytest.approx(want, rel=1e-12, abs=1e-12)


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_comparison_chain_matches_python(a, b):
    src = f"{a!r} < {b!r} <= {b!r}"
    assert ev(src, dsl.BOOL) == (a < b <= b)


# ----------------------------------------------------------------------------- sections


def test_parse_reset_specs():
    specs = dsl.parse_reset("place(cube, x=(0.4, 0.5), y=(-0.1, 0.1), yaw=0)\nfix(drawer, at=(0.6, 0.0))\neef(x=0.3, y=0, z=(0.3, 0.4))", SYMS)
    assert [type(s).__name__ for s in specs] == ["PlaceSpec", "FixSpec", "EefSpec"]
    assert specs[0].x == (0.4, 0.5)


@pytest.mark.parametrize(
    "src,cls",
    [
        ("place(cube, x=(0.4, 0.5), y=0)", "unknown symbol"),  # drawer never placed
        ("place(cube, x=(0.5, 0.4), y=0)\nfix(drawer, at=(0.6, 0))", "invalid range"),
        ("place(cube, x=0.4, y=0)\nplace(cube, x=0.4, y=0)\nfix(drawer, at=(0.6, 0))", "duplicate placement"),
        ("spawn(cube)", "unknown symbol"),
        ("place(cube)\nfix(drawer, at=(0.6, 0))", "arity"),
    ],
)
def test_reset_rejections(src, cls):
    with pytest.raises(InvalidDsl) as exc:
        dsl.parse_reset(src, SYMS)
    assert exc.value.error_class == cls and exc.value.section == "reset"


def test_state_spec_length():
    spec = dsl.parse_state_spec("eef_pos, eef_quat, gripper, pos(cube), joint(drawer)", SYMS)
    assert dsl.state_length(spec) == 3 + 4 + 1 + 3 + 1


def test_skill_lines_roundtrip():
    calls = dsl.parse_policy("move_to(target=pos(cube) + [0, 0, 0.1])\nclose_gripper()\ngrasp(obj=cube)")
    again = dsl.parse_policy("\n".join(c.to_source() for c in calls))
    assert calls == again
    bound = dsl.bind_skill(calls[0], SYMS)
    assert np.allclose(bound.args["target"](Ctx(), {}), [0.5, 0.1, 0.22])


@pytest.mark.parametrize("line", ["teleport(obj=cube)", "grasp(obj=ghost)", "move_to()", "move_to(target=[0,0,0], speed=1)"])
def test_skill_rejections(line):
    with pytest.raises(InvalidDsl):
        dsl.bind_skill(dsl.parse_skill_line(line), SYMS)


def test_task_dsl_text_roundtrip():
    prog = dsl.TaskDsl("place(cube, x=0.5, y=0)", "holding(cube)", "eef_pos", "-dist(eef, cube)", "grasp(obj=cube)")
    assert dsl.TaskDsl.from_text(prog.to_text()) == prog


def test_missing_section_rejected():
    with pytest.raises(InvalidDsl) as exc:
        dsl.TaskDsl.from_text("[reset]\nplace(cube, x=0.5, y=0)\n")
    assert exc.value.error_class == "missing section"
