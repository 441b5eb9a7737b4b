"""The task program language.

A task program has five sections (``reset``, ``check_success``,
``compose_state``, ``reward_function``, ``scripted_policy``). Expressions use
a small, statically typed subset of Python expression syntax, parsed with
:mod:`ast` and compiled into closures. ``docs/dsl.md`` carries the grammar.

Expressions are evaluated against a *context* object (the simulated world)
that provides the query methods listed in :class:`DslContext`.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from .errors import InvalidDsl

GRAMMAR_VERSION = 1

SECTION_NAMES = ("reset", "check_success", "compose_state", "reward_function", "scripted_policy")

NUM, BOOL, VEC, QUAT, OBJ, STR = "num", "bool", "vec3", "quat", "obj", "str"
TYPE_WIDTH = {NUM: 1, BOOL: 1, VEC: 3, QUAT: 4}


class DslContext(Protocol):
    def obj_position(self, name: str) -> np.ndarray: ...
    def obj_initial_position(self, name: str) -> np.ndarray: ...
    def obj_orientation(self, name: str) -> np.ndarray: ...
    def obj_joint(self, name: str) -> float: ...
    def obj_bounds(self, name: str) -> tuple[np.ndarray, np.ndarray]: ...
    def is_holding(self, name: str) -> bool: ...
    def eef_position(self) -> np.ndarray: ...
    def eef_orientation(self) -> np.ndarray: ...
    def gripper_closed(self) -> bool: ...


@dataclass(frozen=True)
class ObjInfo:
    has_joint: bool = False


@dataclass(frozen=True)
class Symbols:
    objects: dict[str, ObjInfo]

    @classmethod
    def of(cls, names, jointed=()) -> "Symbols":
        jointed = set(jointed)
        return cls({n: ObjInfo(n in jointed) for n in names})


# --------------------------------------------------------------------------- program container


@dataclass(frozen=True)
class TaskDsl:
    reset: str
    check_success: str
    compose_state: str
    reward_function: str
    scripted_policy: str

    def section(self, name: str) -> str:
        if name not in SECTION_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def replace(self, **sections: str) -> "TaskDsl":
        values = {n: getattr(self, n) for n in SECTION_NAMES}
        values.update(sections)
        return TaskDsl(**values)

    def to_text(self) -> str:
        parts = [f"# task program, grammar v{GRAMMAR_VERSION}"]
        for name in SECTION_NAMES:
            parts.append(f"[{name}]")
            parts.append(getattr(self, name).strip())
        return "\n".join(parts) + "\n"

    def to_dict(self) -> dict[str, str]:
        return {n: getattr(self, n) for n in SECTION_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskDsl":
        missing = [n for n in SECTION_NAMES if n not in d]
        if missing:
            raise InvalidDsl(f"missing sections: {missing}", section=missing[0], error_class="missing section")
        return cls(**{n: str(d[n]) for n in SECTION_NAMES})

    @classmethod
    def from_text(cls, text: str) -> "TaskDsl":
        sections: dict[str, list[str]] = {}
        current = None
        for line in text.splitlines():
            m = re.fullmatch(r"\s*\[(\w+)\]\s*", line)
            if m:
                current = m.group(1)
                if current not in SECTION_NAMES:
                    raise InvalidDsl(f"unknown section [{current}]", error_class="unknown section")
                sections[current] = []
            elif current is not None:
                sections[current].append(line)
        return cls.from_dict({k: "\n".join(v).strip() for k, v in sections.items()})


# --------------------------------------------------------------------------- expression compiler

Fn = Callable[[Any, dict], Any]


@dataclass(frozen=True)
class Expr:
    source: str
    type: str
    fn: Fn = field(repr=False, compare=False)

    def __call__(self, ctx, env: dict | None = None):
        return self.fn(ctx, env or {})


def _err(msg: str, section: str | None, cls: str) -> InvalidDsl:
    return InvalidDsl(msg, section=section, error_class=cls)


def _safe_div(a, b):
    if np.ndim(b) == 0 and b == 0:
        raise ZeroDivisionError("division by zero")
    return a / b


def _xy_dist(a, b) -> float:
    return math.hypot(float(a[0] - b[0]), float(a[1] - b[1]))


def _dist(a, b) -> float:
    d = a - b
    return math.sqrt(float(d @ d))


_SCALAR_FUNCS: dict[str, Callable] = {
    "abs": abs,
    "sqrt": math.sqrt,
    "exp": math.exp,
    "tanh": math.tanh,
    "cos": math.cos,
    "sin": math.sin,
}

_CONSTANTS = {"pi": math.pi}

_ROBOT_FIELDS = {
    "eef": (VEC, lambda c, e: c.eef_position()),
    "eef_pos": (VEC, lambda c, e: c.eef_position()),
    "eef_quat": (QUAT, lambda c, e: c.eef_orientation()),
    "gripper": (NUM, lambda c, e: 1.0 if c.gripper_closed() else 0.0),
}


class _Compiler:
    def __init__(self, symbols: Symbols, section: str | None, extra_names: dict[str, str] | None = None):
        self.symbols = symbols
        self.section = section
        self.extra = extra_names or {}

    def fail(self, msg: str, cls: str) -> InvalidDsl:
        return _err(msg, self.section, cls)

    # objects are referenced by bare identifiers only
    def obj_name(self, node) -> str:
        if isinstance(node, ast.Name):
            if node.id in self.symbols.objects:
                return node.id
            raise self.fail(f"unknown object {node.id!r}", "unknown symbol")
        raise self.fail("expected an object name", "type error")

    def vecish(self, node, fname: str) -> Fn:
        if isinstance(node, ast.Name) and node.id in self.symbols.objects:
            name = node.id
            return lambda c, e: c.obj_position(name)
        fn, t = self.compile(node)
        if t != VEC:
            raise self.fail(f"{fname}() expects a vector or object, got {t}", "type error")
        return fn

    def num(self, node, what: str) -> Fn:
        fn, t = self.compile(node)
        if t == BOOL:
            return lambda c, e: 1.0 if fn(c, e) else 0.0
        if t != NUM:
            raise self.fail(f"{what} expects a number, got {t}", "type error")
        return fn

    def compile(self, node) -> tuple[Fn, str]:
        method = getattr(self, "_" + type(node).__name__, None)
        if method is None:
            raise self.fail(f"unsupported construct {type(node).__name__}", "unsupported construct")
        return method(node)

    def _Expression(self, node):
        return self.compile(node.body)

    def _Constant(self, node):
        v = node.value
        if isinstance(v, bool):
            return (lambda c, e: v), BOOL
        if isinstance(v, (int, float)):
            f = float(v)
            return (lambda c, e: f), NUM
        if isinstance(v, str):
            return (lambda c, e: v), STR
        raise self.fail(f"unsupported literal {v!r}", "unsupported construct")

    def _Name(self, node):
        n = node.id
        if n in _ROBOT_FIELDS:
            t, fn = _ROBOT_FIELDS[n]
            return fn, t
        if n in _CONSTANTS:
            v = _CONSTANTS[n]
            return (lambda c, e: v), NUM
        if n in self.extra:
            t = self.extra[n]
            return (lambda c, e: e[n]), t
        if n in self.symbols.objects:
            return (lambda c, e: n), OBJ
        raise self.fail(f"unknown symbol {n!r}", "unknown symbol")

    def _List(self, node):
        if len(node.elts) != 3:
            raise self.fail("vector literals need exactly 3 components", "type error")
        parts = [self.num(el, "vector component") for el in node.elts]
        a, b, d = parts
        return (lambda c, e: np.array([a(c, e), b(c, e), d(c, e)])), VEC

    _Tuple = _List

    def _UnaryOp(self, node):
        if isinstance(node.op, ast.Not):
            fn, t = self.compile(node.operand)
            if t != BOOL:
                raise self.fail("'not' needs a boolean operand", "type error")
            return (lambda c, e: not fn(c, e)), BOOL
        fn, t = self.compile(node.operand)
        if t == BOOL:
            fn, t = self.num(node.operand, "unary operator"), NUM
        if t not in (NUM, VEC):
            raise self.fail(f"unary operator on {t}", "type error")
        if isinstance(node.op, ast.USub):
            return (lambda c, e: -fn(c, e)), t
        if isinstance(node.op, ast.UAdd):
            return fn, t
        raise self.fail("unsupported unary operator", "unsupported construct")

    def _BinOp(self, node):
        lf, lt = self.compile(node.left)
        rf, rt = self.compile(node.right)
        if lt == BOOL:
            lf, lt = self.num(node.left, "arithmetic"), NUM
        if rt == BOOL:
            rf, rt = self.num(node.right, "arithmetic"), NUM
        op = type(node.op)
        if op in (ast.Add, ast.Sub):
            if lt != rt or lt not in (NUM, VEC):
                raise self.fail(f"cannot add/subtract {lt} and {rt}", "type error")
            if op is ast.Add:
                return (lambda c, e: lf(c, e) + rf(c, e)), lt
            return (lambda c, e: lf(c, e) - rf(c, e)), lt
        if op is ast.Mult:
            if (lt, rt) in ((NUM, NUM), (NUM, VEC), (VEC, NUM)):
                return (lambda c, e: lf(c, e) * rf(c, e)), VEC if VEC in (lt, rt) else NUM
            raise self.fail(f"cannot multiply {lt} by {rt}", "type error")
        if op is ast.Div:
            if rt == NUM and lt in (NUM, VEC):
                return (lambda c, e: _safe_div(lf(c, e), rf(c, e))), lt
            raise self.fail(f"cannot divide {lt} by {rt}", "type error")
        if op is ast.Pow:
            if lt == rt == NUM:
                return (lambda c, e: float(lf(c, e)) ** rf(c, e)), NUM
            raise self.fail("'**' needs numbers", "type error")
        raise self.fail("unsupported binary operator", "unsupported construct")

    def _BoolOp(self, node):
        fns = []
        for v in node.values:
            fn, t = self.compile(v)
            if t != BOOL:
                raise self.fail("'and'/'or' need boolean operands", "type error")
            fns.append(fn)
        if isinstance(node.op, ast.And):
            return (lambda c, e: all(f(c, e) for f in fns)), BOOL
        return (lambda c, e: any(f(c, e) for f in fns)), BOOL

    def _Compare(self, node):
        ops = {
            ast.Lt: lambda a, b: a < b,
            ast.LtE: lambda a, b: a <= b,
            ast.Gt: lambda a, b: a > b,
            ast.GtE: lambda a, b: a >= b,
            ast.Eq: lambda a, b: a == b,
            ast.NotEq: lambda a, b: a != b,
        }
        terms = [self.num(x, "comparison") for x in [node.left, *node.comparators]]
        fs = []
        for o in node.ops:
            if type(o) not in ops:
                raise self.fail("unsupported comparison", "unsupported construct")
            fs.append(ops[type(o)])

        def run(c, e):
            vals = [t(c, e) for t in terms]
            return all(f(vals[i], vals[i + 1]) for i, f in enumerate(fs))

        return run, BOOL

    def _IfExp(self, node):
        cf, ct = self.compile(node.test)
        if ct != BOOL:
            raise self.fail("conditional test must be boolean", "type error")
        af, at = self.compile(node.body)
        bf, bt = self.compile(node.orelse)
        if at != bt:
            raise self.fail("conditional branches differ in type", "type error")
        return (lambda c, e: af(c, e) if cf(c, e) else bf(c, e)), at

    def _Call(self, node):
        if not isinstance(node.func, ast.Name):
            raise self.fail("only plain function calls are allowed", "unsupported construct")
        if node.keywords:
            raise self.fail("keyword arguments are not allowed in expressions", "unsupported construct")
        name = node.func.id
        args = node.args

        def arity(n: int):
            if len(args) != n:
                raise self.fail(f"{name}() takes {n} argument(s), got {len(args)}", "arity")

        if name in ("pos", "pos0", "quat"):
            arity(1)
            o = self.obj_name(args[0])
            if name == "pos":
                return (lambda c, e: c.obj_position(o)), VEC
            if name == "pos0":
                return (lambda c, e: c.obj_initial_position(o)), VEC
            return (lambda c, e: c.obj_orientation(o)), QUAT
        if name in ("x", "y", "z"):
            arity(1)
            i = "xyz".index(name)
            v = self.vecish(args[0], name)
            return (lambda c, e: float(v(c, e)[i])), NUM
        if name in ("x0", "y0", "z0"):
            arity(1)
            i = "xyz".index(name[0])
            o = self.obj_name(args[0])
            return (lambda c, e: float(c.obj_initial_position(o)[i])), NUM
        if name in ("dist", "xy_dist"):
            arity(2)
            a, b = self.vecish(args[0], name), self.vecish(args[1], name)
            f = _dist if name == "dist" else _xy_dist
            return (lambda c, e: f(a(c, e), b(c, e))), NUM
        if name == "norm":
            arity(1)
            v = self.vecish(args[0], name)
            return (lambda c, e: math.sqrt(float(v(c, e) @ v(c, e)))), NUM
        if name == "joint":
            arity(1)
            o = self.obj_name(args[0])
            if not self.symbols.objects[o].has_joint:
                raise self.fail(f"object {o!r} has no joint", "type error")
            return (lambda c, e: c.obj_joint(o)), NUM
        if name in ("top", "bottom", "height"):
            arity(1)
            o = self.obj_name(args[0])
            if name == "top":
                return (lambda c, e: float(c.obj_bounds(o)[1][2])), NUM
            if name == "bottom":
                return (lambda c, e: float(c.obj_bounds(o)[0][2])), NUM
            return (lambda c, e: float(c.obj_bounds(o)[1][2] - c.obj_bounds(o)[0][2])), NUM
        if name == "size":
            arity(1)
            o = self.obj_name(args[0])
            return (lambda c, e: c.obj_bounds(o)[1] - c.obj_bounds(o)[0]), VEC
        if name == "holding":
            arity(1)
            o = self.obj_name(args[0])
            return (lambda c, e: c.is_holding(o)), BOOL
        if name in ("min", "max"):
            if len(args) < 2:
                raise self.fail(f"{name}() needs at least 2 arguments", "arity")
            fs = [self.num(a, name) for a in args]
            agg = min if name == "min" else max
            return (lambda c, e: agg(f(c, e) for f in fs)), NUM
        if name == "clip":
            arity(3)
            v, lo, hi = (self.num(a, name) for a in args)
            return (lambda c, e: min(max(v(c, e), lo(c, e)), hi(c, e))), NUM
        if name in _SCALAR_FUNCS:
            arity(1)
            f = _SCALAR_FUNCS[name]
            v = self.num(args[0], name)
            return (lambda c, e: float(f(v(c, e)))), NUM
        raise self.fail(f"unknown function {name!r}", "unknown symbol")


def _parse(src: str, section: str | None, mode: str = "eval") -> ast.AST:
    try:
        return ast.parse(src.strip(), mode=mode)
    except SyntaxError as exc:
        raise _err(f"syntax error: {exc.msg}", section, "syntax error") from None


def _strip_comments(src: str) -> list[str]:
    out = []
    for line in src.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def compile_expr(
    src: str,
    symbols: Symbols,
    section: str | None = None,
    expect: str | tuple[str, ...] | None = None,
    extra_names: dict[str, str] | None = None,
) -> Expr:
    src = " ".join(_strip_comments(src))
    if not src:
        raise _err("empty expression", section, "syntax error")
    tree = _parse(src, section)
    comp = _Compiler(symbols, section, extra_names)
    fn, t = comp.compile(tree)
    if expect is not None:
        allowed = (expect,) if isinstance(expect, str) else expect
        if t not in allowed:
            if t == BOOL and NUM in allowed:
                inner = fn
                fn, t = (lambda c, e: 1.0 if inner(c, e) else 0.0), NUM
            else:
                raise _err(f"expression has type {t}, expected {'/'.join(allowed)}", section, "type error")
    return Expr(src, t, fn)


# --------------------------------------------------------------------------- reset section


@dataclass(frozen=True)
class PlaceSpec:
    obj: str
    x: tuple[float, float]
    y: tuple[float, float]
    yaw: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class FixSpec:
    obj: str
    at: tuple[float, float]
    yaw: float = 0.0
    joint: float = 0.0


@dataclass(frozen=True)
class EefSpec:
    x: tuple[float, float]
    y: tuple[float, float]
    z: tuple[float, float]


ResetSpec = PlaceSpec | FixSpec | EefSpec


def _literal_number(node, section: str) -> float:
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        return -_literal_number(node.operand, section)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Mult, ast.Div)):
        a, b = _literal_number(node.left, section), _literal_number(node.right, section)
        if isinstance(node.op, ast.Mult):
            return a * b
        if b == 0:
            raise _err("division by zero in literal", section, "type error")
        return a / b
    raise _err("expected a numeric literal", section, "type error")


def _literal_range(node, section: str) -> tuple[float, float]:
    if isinstance(node, (ast.Tuple, ast.List)) and len(node.elts) == 2:
        lo, hi = (_literal_number(e, section) for e in node.elts)
        if lo > hi:
            raise _err(f"range ({lo}, {hi}) has lo > hi", section, "invalid range")
        return lo, hi
    v = _literal_number(node, section)
    return v, v


_RESET_SIGS = {
    "place": (("obj", "x", "y", "yaw"), 3),
    "fix": (("obj", "at", "yaw", "joint"), 2),
    "eef": (("x", "y", "z"), 3),
}


def _bind_call(node: ast.Call, sigs: dict, section: str) -> tuple[str, dict]:
    if not isinstance(node.func, ast.Name):
        raise _err("expected a plain call", section, "unsupported construct")
    name = node.func.id
    if name not in sigs:
        raise _err(f"unknown statement {name!r}", section, "unknown symbol")
    params, required = sigs[name]
    if len(node.args) > len(params):
        raise _err(f"{name}() takes at most {len(params)} arguments", section, "arity")
    bound = dict(zip(params, node.args))
    for kw in node.keywords:
        if kw.arg not in params:
            raise _err(f"{name}() has no parameter {kw.arg!r}", section, "unknown symbol")
        if kw.arg in bound:
            raise _err(f"{name}() got {kw.arg!r} twice", section, "arity")
        bound[kw.arg] = kw.value
    missing = [p for p in params[:required] if p not in bound]
    if missing:
        raise _err(f"{name}() missing {missing}", section, "arity")
    return name, bound


def _statements(src: str, section: str) -> list[ast.Call]:
    calls = []
    for line in _strip_comments(src):
        tree = _parse(line, section)
        if not isinstance(tree.body, ast.Call):
            raise _err(f"expected a call statement, got {line!r}", section, "syntax error")
        calls.append(tree.body)
    return calls


def parse_reset(src: str, symbols: Symbols) -> list[ResetSpec]:
    section = "reset"
    specs: list[ResetSpec] = []
    seen: set[str] = set()
    for call in _statements(src, section):
        name, b = _bind_call(call, _RESET_SIGS, section)
        if name == "eef":
            specs.append(EefSpec(*(_literal_range(b[k], section) for k in ("x", "y", "z"))))
            continue
        obj_node = b["obj"]
        if not isinstance(obj_node, ast.Name) or obj_node.id not in symbols.objects:
            label = obj_node.id if isinstance(obj_node, ast.Name) else ast.unparse(obj_node)
            raise _err(f"unknown object {label!r}", section, "unknown symbol")
        obj = obj_node.id
        if obj in seen:
            raise _err(f"object {obj!r} placed twice", section, "duplicate placement")
        seen.add(obj)
        if name == "place":
            yaw = _literal_range(b["yaw"], section) if "yaw" in b else (0.0, 0.0)
            specs.append(PlaceSpec(obj, _literal_range(b["x"], section), _literal_range(b["y"], section), yaw))
        else:
            at = b["at"]
            if not isinstance(at, (ast.Tuple, ast.List)) or len(at.elts) != 2:
                raise _err("fix(at=...) needs an (x, y) pair", section, "type error")
            xy = tuple(_literal_number(e, section) for e in at.elts)
            yaw = _literal_number(b["yaw"], section) if "yaw" in b else 0.0
            joint = _literal_number(b["joint"], section) if "joint" in b else 0.0
            specs.append(FixSpec(obj, xy, yaw, joint))
    unplaced = set(symbols.objects) - seen
    if unplaced:
        raise _err(f"objects never placed: {sorted(unplaced)}", section, "unknown symbol")
    return specs


# --------------------------------------------------------------------------- compose_state


def parse_state_spec(src: str, symbols: Symbols) -> list[Expr]:
    lines = _strip_comments(src)
    if not lines:
        raise _err("compose_state is empty", "compose_state", "syntax error")
    exprs = []
    for line in lines:
        for part in _split_top_level(line):
            exprs.append(compile_expr(part, symbols, "compose_state", expect=(NUM, BOOL, VEC, QUAT)))
    return exprs


def _split_top_level(line: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in line:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        out.append("".join(cur).strip())
    return out


def state_length(exprs: list[Expr]) -> int:
    return sum(TYPE_WIDTH[e.type] for e in exprs)


# --------------------------------------------------------------------------- scripted_policy

# skill -> (parameter names, number required, parameter kinds)
SKILL_SIGNATURES: dict[str, tuple[tuple[str, ...], int, tuple[str, ...]]] = {
    "move_to": (("target", "gripper_open", "orientation"), 1, (VEC, BOOL, QUAT)),
    "open_gripper": ((), 0, ()),
    "close_gripper": ((), 0, ()),
    "grasp": (("obj",), 1, (OBJ,)),
    "open_drawer": (("obj",), 1, (OBJ,)),
    "move_to_grasp": (("obj",), 1, (OBJ,)),
    "rl_skill": (("name", "obj"), 2, (STR, OBJ)),
    "log_step": (("description",), 1, (STR,)),
}


@dataclass(frozen=True)
class SkillCall:
    skill: str
    params: tuple[tuple[str, str], ...] = ()

    @property
    def kwargs(self) -> dict[str, str]:
        return dict(self.params)

    def to_source(self) -> str:
        return f"{self.skill}({', '.join(f'{k}={v}' for k, v in self.params)})"

    @classmethod
    def make(cls, skill: str, **params: str) -> "SkillCall":
        return cls(skill, tuple(params.items()))


def parse_skill_line(line: str, section: str = "scripted_policy") -> SkillCall:
    tree = _parse(line, section)
    call = tree.body
    if not isinstance(call, ast.Call) or not isinstance(call.func, ast.Name):
        raise _err(f"expected a skill call, got {line!r}", section, "syntax error")
    name = call.func.id
    if name not in SKILL_SIGNATURES:
        raise _err(f"unknown skill {name!r}", section, "unknown symbol")
    params, required, _ = SKILL_SIGNATURES[name]
    sigs = {name: (params, required)}
    _, bound = _bind_call(call, sigs, section)
    ordered = tuple((p, ast.unparse(bound[p])) for p in params if p in bound)
    return SkillCall(name, ordered)


def parse_policy(src: str) -> list[SkillCall]:
    return [parse_skill_line(line) for line in _strip_comments(src)]


@dataclass(frozen=True)
class BoundSkill:
    skill: str
    args: dict[str, Any]  # Expr, literal value or object name per parameter


def bind_skill(call: SkillCall, symbols: Symbols, section: str = "scripted_policy") -> BoundSkill:
    if call.skill not in SKILL_SIGNATURES:
        raise _err(f"unknown skill {call.skill!r}", section, "unknown symbol")
    params, required, kinds = SKILL_SIGNATURES[call.skill]
    given = call.kwargs
    for p in params[:required]:
        if p not in given:
            raise _err(f"{call.skill}() missing parameter {p!r}", section, "arity")
    args: dict[str, Any] = {}
    for p, kind in zip(params, kinds):
        if p not in given:
            continue
        src = given[p]
        if kind == OBJ:
            if src not in symbols.objects:
                raise _err(f"unknown object {src!r}", section, "unknown symbol")
            args[p] = src
        elif kind == STR:
            node = _parse(src, section).body
            if not isinstance(node, ast.Constant) or not isinstance(node.value, str):
                raise _err(f"{call.skill}({p}) must be a string literal", section, "type error")
            args[p] = node.value
        elif kind == BOOL:
            node = _parse(src, section).body
            if not isinstance(node, ast.Constant) or not isinstance(node.value, bool):
                raise _err(f"{call.skill}({p}) must be True or False", section, "type error")
            args[p] = node.value
        else:
            args[p] = compile_expr(src, symbols, section, expect=kind)
    for p in given:
        if p not in params:
            raise _err(f"{call.skill}() has no parameter {p!r}", section, "unknown symbol")
    return BoundSkill(call.skill, args)


# --------------------------------------------------------------------------- whole program


@dataclass(frozen=True)
class CompiledProgram:
    dsl: TaskDsl
    symbols: Symbols
    reset: list[ResetSpec]
    success: Expr
    state: list[Expr]
    reward: Expr
    policy: list[BoundSkill]

    @property
    def state_length(self) -> int:
        return state_length(self.state)


def compile_section(dsl: TaskDsl, name: str, symbols: Symbols):
    src = dsl.section(name)
    if name == "reset":
        return parse_reset(src, symbols)
    if name == "check_success":
        return compile_expr(src, symbols, name, expect=BOOL)
    if name == "compose_state":
        return parse_state_spec(src, symbols)
    if name == "reward_function":
        return compile_expr(src, symbols, name, expect=NUM, extra_names={"success": NUM})
    return [bind_skill(c, symbols) for c in parse_policy(src)]


def compile_program(dsl: TaskDsl, symbols: Symbols) -> CompiledProgram:
    # check_success first: the other sections are generated against it
    success = compile_section(dsl, "check_success", symbols)
    return CompiledProgram(
        dsl=dsl,
        symbols=symbols,
        reset=compile_section(dsl, "reset", symbols),
        success=success,
        state=compile_section(dsl, "compose_state", symbols),
        reward=compile_section(dsl, "reward_function", symbols),
        policy=compile_section(dsl, "scripted_policy", symbols),
    )
