"""Family task templates and the deterministic offline provider built on them.

The offline provider answers every request kind from the structured payload
that accompanies the rendered prompt. Its answers are plain text that goes
through the same parsers and validators as any external provider's output.
"""

from __future__ import annotations

import json
import re

import numpy as np

from .errors import PreconditionError, ProviderError
from .objectdb import OfflineAnnotator
from .providers import ProviderRequest, stable_seed

FAMILIES = ("lifting", "pushing", "stacking", "pick_and_place", "drawer_opening")

LIFT_HEIGHT = 0.10
REACH_HEIGHT = 0.10
PUSH_DISTANCE = 0.15
PUSH_TOL = 0.03
STACK_TOL = 0.03
PLACE_TOL = 0.05
DRAWER_OPEN = 0.15
HOVER = 0.1

# role -> placement region (x range, y range, yaw range)
_SLOTS = {
    "main": ((0.38, 0.48), (-0.06, 0.06), (-0.3, 0.3)),
    "push": ((0.30, 0.38), (-0.05, 0.05), (0.0, 0.0)),
    "second": ((0.45, 0.55), (0.2, 0.28), (0.0, 0.0)),
}
_DISTRACTOR_SLOTS = [
    ((0.2, 0.3), (-0.4, -0.26)),
    ((0.58, 0.7), (-0.4, -0.26)),
    ((0.2, 0.3), (0.3, 0.4)),
    ((0.62, 0.72), (0.3, 0.4)),
]
_DRAWER_DISTRACTOR_SLOTS = [((0.15, 0.28), (-0.42, -0.3)), ((0.15, 0.28), (0.3, 0.42))]
DRAWER_AT = (0.6, 0.0)


def required_objects(family: str) -> int:
    return 2 if family in ("stacking", "pick_and_place") else 1


def assign_roles(family: str, objects: list[dict]) -> dict[str, str]:
    if family not in FAMILIES:
        raise PreconditionError(f"unknown task family {family!r}")
    keys = [o["key"] for o in objects]
    if len(keys) < required_objects(family):
        raise PreconditionError(f"{family} needs at least {required_objects(family)} objects")
    if family == "drawer_opening":
        drawers = [o["key"] for o in objects if o.get("articulated")]
        if not drawers:
            raise PreconditionError("drawer_opening needs an articulated object")
        return {"drawer": drawers[0]}
    movable = [o["key"] for o in objects if not o.get("articulated")]
    if len(movable) < required_objects(family):
        raise PreconditionError(f"{family} needs movable objects")
    if family == "stacking":
        return {"top": movable[0], "base": movable[1]}
    if family == "pick_and_place":
        return {"item": movable[0], "receptacle": movable[1]}
    return {"target": movable[0]}


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if v != 0 else "0"


def _range(r) -> str:
    return f"({_fmt(r[0])}, {_fmt(r[1])})"


# ----------------------------------------------------------------------------- sections


def reset_section(family: str, roles: dict[str, str], keys: list[str], seed: int) -> str:
    rng = np.random.default_rng(stable_seed("reset", family, seed))
    lines = []
    primary = next(iter(roles.values()))
    if family == "drawer_opening":
        lines.append(f"fix({primary}, at=({_fmt(DRAWER_AT[0])}, {_fmt(DRAWER_AT[1])}), yaw=0, joint=0)")
        slots = _DRAWER_DISTRACTOR_SLOTS
    else:
        slot = "push" if family == "pushing" else "main"
        (x, y, yaw) = _SLOTS[slot]
        lines.append(f"place({primary}, x={_range(x)}, y={_range(y)}, yaw={_range(yaw)})")
        if len(roles) > 1:
            second = list(roles.values())[1]
            x, y, yaw = _SLOTS["second"]
            lines.append(f"place({second}, x={_range(x)}, y={_range(y)}, yaw={_range(yaw)})")
        slots = _DISTRACTOR_SLOTS
    used = set(roles.values())
    free = [k for k in keys if k not in used]
    order = rng.permutation(len(slots))
    if len(free) > len(slots):
        raise PreconditionError(f"at most {len(slots)} distractor objects fit the layout")
    for key, si in zip(free, order):
        x, y = slots[si]
        lines.append(f"place({key}, x={_range(x)}, y={_range(y)}, yaw=(-pi, pi))")
    return "\n".join(lines)


def success_section(family: str, roles: dict[str, str]) -> str:
    if family == "lifting":
        t = roles["target"]
        return f"z({t}) - z0({t}) >= {_fmt(LIFT_HEIGHT)}"
    if family == "pushing":
        t = roles["target"]
        return f"xy_dist({t}, pos0({t}) + [{_fmt(PUSH_DISTANCE)}, 0, 0]) <= {_fmt(PUSH_TOL)}"
    if family == "stacking":
        a, b = roles["top"], roles["base"]
        return f"xy_dist({a}, {b}) <= {_fmt(STACK_TOL)} and z({a}) > z({b})"
    if family == "pick_and_place":
        i, r = roles["item"], roles["receptacle"]
        return f"xy_dist({i}, {r}) <= {_fmt(PLACE_TOL)} and bottom({i}) >= top({r}) - 0.005"
    d = roles["drawer"]
    return f"joint({d}) >= {_fmt(DRAWER_OPEN)}"


def state_section(family: str, roles: dict[str, str]) -> str:
    r = list(roles.values())
    if family == "lifting":
        return f"eef_pos, gripper, pos({r[0]}), z({r[0]}) - z0({r[0]})"
    if family == "pushing":
        return f"eef_pos, gripper, pos({r[0]}), pos0({r[0]})"
    if family == "drawer_opening":
        return f"eef_pos, gripper, joint({r[0]})"
    return f"eef_pos, gripper, pos({r[0]}), pos({r[1]})"


def reward_section(family: str, roles: dict[str, str]) -> str:
    r = list(roles.values())
    if family == "lifting":
        return f"-dist(eef, pos({r[0]})) + 5 * clip(z({r[0]}) - z0({r[0]}), 0, 0.12) + 2 * success"
    if family == "pushing":
        return f"-dist(eef, pos({r[0]})) - 3 * xy_dist({r[0]}, pos0({r[0]}) + [0.15, 0, 0]) + 2 * success"
    if family == "drawer_opening":
        return f"-dist(eef, pos({r[0]})) + 5 * joint({r[0]}) + 2 * success"
    if family == "reaching":
        return f"-dist(eef, pos({r[0]}) + [0, 0, {REACH_HEIGHT:g}]) + 2 * success"
    return f"-dist(eef, pos({r[0]})) - 2 * xy_dist({r[0]}, {r[1]}) + 2 * success"


def policy_section(family: str, roles: dict[str, str]) -> str:
    h = _fmt(HOVER)
    if family == "drawer_opening":
        d = roles["drawer"]
        return "\n".join([f'log_step(description="open the drawer of {d}")', f"open_drawer(obj={d})"])
    if family == "pushing":
        t = roles["target"]
        back = f"pos({t}) - [x(size({t})) / 2 + 0.03, 0, 0]"
        end = f"pos0({t}) + [{_fmt(PUSH_DISTANCE)} - x(size({t})) / 2 - 0.01, 0, 0]"
        return "\n".join(
            [
                "close_gripper()",
                f"move_to(target={back} + [0, 0, {h}], gripper_open=False)",
                f"move_to(target={back}, gripper_open=False)",
                f"move_to(target={end}, gripper_open=False)",
                f"move_to(target=eef + [0, 0, {h}], gripper_open=False)",
            ]
        )
    obj = next(iter(roles.values()))
    pick = [
        f"move_to(target=pos({obj}) + [0, 0, {h}], gripper_open=True)",
        f"move_to(target=pos({obj}), gripper_open=True)",
        "close_gripper()",
        f"move_to(target=pos({obj}) + [0, 0, 0.15], gripper_open=False)",
    ]
    if family == "lifting":
        return "\n".join(pick)
    dest = roles.get("base") or roles["receptacle"]
    lift = 0.02 if family == "pick_and_place" else 0.01
    above = f"[x({dest}) + x(eef) - x({obj}), y({dest}) + y(eef) - y({obj}), top({dest}) + z(eef) - bottom({obj}) + {_fmt(lift)}]"
    return "\n".join(pick + [f"move_to(target={above}, gripper_open=False)", "open_gripper()"])


SECTION_BUILDERS = {
    "check_success": lambda fam, roles, keys, seed: success_section(fam, roles),
    "reset": reset_section,
    "compose_state": lambda fam, roles, keys, seed: state_section(fam, roles),
    "reward_function": lambda fam, roles, keys, seed: reward_section(fam, roles),
    "scripted_policy": lambda fam, roles, keys, seed: policy_section(fam, roles),
}


def family_of_predicate(src: str) -> str | None:
    """Classify a success predicate by its structure."""
    s = src.replace(" ", "")
    if re.search(r"joint\(\w+\)>=", s):
        return "drawer_opening"
    if re.search(r"z\((\w+)\)-z0\(\1\)>=", s):
        return "lifting"
    if re.search(r"xy_dist\((\w+),pos0\(\1\)", s):
        return "pushing"
    if re.search(r"xy_dist\((\w+),(\w+)\)<=[\d.]+andbottom\(\1\)>=top\(\2\)", s):
        return "pick_and_place"
    if re.search(r"xy_dist\((\w+),(\w+)\)<=[\d.]+andz\(\1\)>z\(\2\)", s):
        return "stacking"
    return None


# ----------------------------------------------------------------------------- descriptions

_PHRASES = {
    "lifting": [
        "Pick up the {t} and lift it vertically off the table by about 10 cm.",
        "Grab the {t} and raise it roughly ten centimetres above where it rests.",
        "Lift the {t} straight up until it hangs about 10 cm over the table.",
        "Take hold of the {t} and hold it a hand's width above the tabletop.",
    ],
    "pushing": [
        "Push the {t} forward about 15 cm along the table without picking it up.",
        "Slide the {t} away from the robot by roughly fifteen centimetres.",
        "Nudge the {t} across the table, moving it about 15 cm further out.",
        "Use the closed gripper to shove the {t} 15 cm forward.",
    ],
    "stacking": [
        "Stack the {t} on top of the {b}.",
        "Place the {t} so that it rests on the {b}.",
        "Put the {t} onto the {b} to build a small tower.",
        "Pick up the {t} and set it down on top of the {b}.",
    ],
    "pick_and_place": [
        "Pick up the {t} and place it on the {b}.",
        "Move the {t} onto the {b}.",
        "Put the {t} on the {b} and let go.",
        "Transfer the {t} from the table to the {b}.",
    ],
    "drawer_opening": [
        "Open the drawer of the {t} by pulling its handle.",
        "Pull the {t} drawer out until it is mostly open.",
        "Grip the handle of the {t} and slide the drawer open.",
        "Open the {t} so its drawer sticks out at least 15 cm.",
    ],
}
_CLUTTER = [
    "Leave the {d} where it is.",
    "Do not disturb the {d}.",
    "The {d} is nearby and should stay put.",
    "Ignore the {d} on the side of the table.",
]


def _label(obj: dict, rng: np.random.Generator) -> str:
    name = obj.get("name", obj["key"]).replace("_", " ")
    choice = rng.integers(3)
    if choice == 1 and obj.get("color") and obj["color"] not in name:
        return f"{obj['color']} {name}"
    if choice == 2 and obj.get("material") not in ("", None, "organic"):
        return f"{name} made of {obj['material']}"
    return name


def describe(family: str, roles: dict[str, str], objects: list[dict], seed: int) -> str:
    rng = np.random.default_rng(stable_seed("describe", family, seed, tuple(o["key"] for o in objects)))
    by_key = {o["key"]: o for o in objects}
    ordered = list(roles.values())
    t = _label(by_key[ordered[0]], rng)
    b = _label(by_key[ordered[1]], rng) if len(ordered) > 1 else ""
    text = _PHRASES[family][rng.integers(len(_PHRASES[family]))].format(t=t, b=b)
    for key in sorted(set(by_key) - set(ordered)):
        text += " " + _CLUTTER[rng.integers(len(_CLUTTER))].format(d=_label(by_key[key], rng))
    return text


# phrases used when the task comes first and objects are retrieved afterwards
_OBJECT_PHRASES = {
    "lifting": [["small red fruit"], ["yellow fruit banana"], ["green felt tennis ball toy"], ["brown wood block"], ["yellow mustard bottle"]],
    "pushing": [["yellow foam sponge cleaning"], ["red wood cube block"], ["blue wood cube block"], ["silver metal tuna fish can"]],
    "stacking": [["red wood cube block", "blue wood cube block"], ["green wood cube", "yellow wood cube"], ["yellow foam sponge", "brown wood block"]],
    "pick_and_place": [["red fruit apple", "white ceramic plate dish"], ["yellow lemon fruit", "blue ceramic bowl"], ["green pear fruit", "white ceramic plate"]],
    "drawer_opening": [["wooden drawer cabinet furniture"], ["metal drawer cabinet furniture"]],
}


def object_phrases(family: str, seed: int) -> list[str]:
    options = _OBJECT_PHRASES[family]
    rng = np.random.default_rng(stable_seed("phrases", family, seed))
    return list(options[rng.integers(len(options))])


# ----------------------------------------------------------------------------- plan repair

_SHIFT_RE = re.compile(r"shift the grasp by \[(-?[\d.]+), (-?[\d.]+), (-?[\d.]+)\]")


def repair_plan_lines(lines: list[str], feedback: list[str]) -> list[str]:
    """Apply the mean grasp correction found in feedback to the approach waypoints.

    The waypoints adjusted are the ``move_to`` steps directly preceding the
    first ``close_gripper``.
    """
    shifts = [np.array([float(v) for v in m.groups()]) for f in feedback for m in [_SHIFT_RE.search(f)] if m]
    if not shifts:
        return list(lines)
    dx = np.mean(shifts, axis=0)
    if not np.any(np.abs(dx) > 5e-4):
        return list(lines)
    out = list(lines)
    try:
        close = next(i for i, l in enumerate(out) if l.startswith("close_gripper"))
    except StopIteration:
        return out
    shift = ", ".join(_fmt(round(float(v), 3)) for v in dx)
    i = close - 1
    while i >= 0 and out[i].startswith("move_to("):
        m = re.match(r"move_to\(target=(.*?)(, gripper_open=.*)?\)$", out[i])
        if m is None:
            break
        rest = m.group(2) or ""
        out[i] = f"move_to(target=({m.group(1)}) + [{shift}]{rest})"
        i -= 1
    return out


# ----------------------------------------------------------------------------- reward proposals

_SHAPING_TERMS = {
    "reach": "-dist(eef, pos({t}))",
    "reach_tanh": "-tanh(5 * dist(eef, pos({t})))",
    "hold": "0.5 * holding({t})",
    "close_near": "0.3 * gripper * (1 - clip(10 * dist(eef, pos({t})), 0, 1))",
}


def propose_rewards(family: str, roles: dict[str, str], n: int, seed: int, iteration: int, base: str | None) -> list[str]:
    """Perturb weights and toggle shaping terms around the family reward."""
    rng = np.random.default_rng(stable_seed("reward", family, seed, iteration))
    t = next(iter(roles.values()))
    goal = reward_section(family, roles).split(" + 2 * success")[0]
    goal_term = goal.replace(f"-dist(eef, pos({t}))", "").strip() or "0"
    if goal_term.startswith("+ "):
        goal_term = goal_term[2:]
    out = []
    for _ in range(n):
        terms = [f"{_fmt(round(float(rng.uniform(0.5, 2.0)), 2))} * ({goal_term})"] if goal_term != "0" else []
        for name, tpl in _SHAPING_TERMS.items():
            if rng.random() < (0.8 if name in ("reach", "hold") else 0.4):
                w = round(float(rng.uniform(0.5, 1.5)), 2)
                terms.append(f"{_fmt(w)} * ({tpl.format(t=t)})")
        terms.append(f"{_fmt(round(float(rng.uniform(1.0, 4.0)), 2))} * success")
        out.append(" + ".join(terms))
    return out


# ----------------------------------------------------------------------------- provider


class OfflineProvider:
    """Template-backed provider; a pure function of each request's payload and seed."""

    provider_id = "offline-templates-v1"

    def __init__(self):
        self._annotator = OfflineAnnotator()

    def complete(self, request: ProviderRequest) -> str:
        p = request.payload
        kind = request.kind
        if kind == "annotate_object":
            return self._annotator.complete(request)
        if kind == "propose_task":
            roles = assign_roles(p["family"], p["objects"])
            return json.dumps({"description": describe(p["family"], roles, p["objects"], request.seed)})
        if kind == "propose_objects":
            phrases = object_phrases(p["family"], request.seed)
            return json.dumps({"objects": phrases})
        if kind == "generate_section":
            build = SECTION_BUILDERS[p["section"]]
            return build(p["family"], p["roles"], [o["key"] for o in p["objects"]], request.seed)
        if kind == "propose_plan":
            return policy_section(p["family"], p["roles"])
        if kind == "repair_plan":
            return "\n".join(repair_plan_lines(p["plan"], p["feedback"]))
        if kind == "propose_reward":
            return "\n".join(
                propose_rewards(p["family"], p["roles"], int(p["n"]), request.seed, int(p.get("iteration", 0)), p.get("base"))
            )
        raise ProviderError(f"offline provider cannot answer {kind!r}")
