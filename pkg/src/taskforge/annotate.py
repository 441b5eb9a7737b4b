"""Dense per-step annotations and their JSON-lines encoding."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable

from .errors import SchemaError

if TYPE_CHECKING:
    from .simworld import World

SCHEMA_VERSION = 1
SIG_DIGITS = 9
_CONTENT_KEYS = {"step_description", "object_states", "robot_state"}
_DESCRIPTION_KEYS = {"action", "skill", "phase"}


def _num(v: float) -> float:
    return float(f"{float(v):.{SIG_DIGITS}g}")


def _vec(v) -> list[float]:
    return [_num(x) for x in v]


@dataclass(frozen=True)
class AnnotationRecord:
    step: int
    content: dict[str, Any]

    def __post_init__(self):
        if not isinstance(self.step, int) or isinstance(self.step, bool) or self.step < 0:
            raise SchemaError("step must be a non-negative integer")

    @property
    def description(self) -> str:
        return self.content["step_description"]["action"]

    def to_dict(self) -> dict[str, Any]:
        return {"step": self.step, "content": self.content}


def log_step(world: "World", description: str, **extra: Any) -> AnnotationRecord:
    """Snapshot object and robot state at the current step; reads the world only.

    ``skill`` and ``phase`` keyword arguments go into ``step_description``;
    anything else lands in the reserved ``extra`` map.
    """
    step_desc: dict[str, Any] = {"action": str(description)}
    rest: dict[str, Any] = {}
    for k, v in extra.items():
        (step_desc if k in _DESCRIPTION_KEYS else rest)[k] = v
    objects: dict[str, Any] = {}
    for o in world.objects:
        entry: dict[str, Any] = {"position": _vec(o.pose.position), "orientation": _vec(o.pose.orientation)}
        if o.articulation is not None:
            entry["joint_positions"] = {"drawer": _num(o.articulation.position)}
            objects[f"{o.name}_handle"] = {"position": _vec(world.handle_position(o))}
        objects[o.name] = entry
    content: dict[str, Any] = {
        "step_description": step_desc,
        "object_states": dict(sorted(objects.items())),
        "robot_state": {
            "eef_pos": _vec(world.eef_pose.position),
            "eef_orientation": _vec(world.eef_pose.orientation),
            "gripper": 1 if world.gripper == "closed" else 0,
        },
    }
    if rest:
        content["extra"] = _jsonable(rest)
    return AnnotationRecord(int(world.step_count), content)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
        return v
    if hasattr(v, "tolist"):
        return _jsonable(v.tolist())
    return _num(v)


def dumps(records: Iterable[AnnotationRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for r in records)


def export_jsonl(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    Path(path).write_text(dumps(records), encoding="utf-8")


def parse_record(obj: Any, line: int) -> AnnotationRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record is not a JSON object", line)
    if set(obj) != {"step", "content"}:
        missing = {"step", "content"} - set(obj)
        raise SchemaError(f"missing key {sorted(missing)[0]!r}" if missing else f"unexpected keys {sorted(set(obj) - {'step', 'content'})}", line)
    content = obj["content"]
    if not isinstance(content, dict) or not _CONTENT_KEYS <= set(content) or not set(content) <= _CONTENT_KEYS | {"extra"}:
        raise SchemaError("content must hold step_description, object_states and robot_state", line)
    if not isinstance(content["step_description"], dict) or "action" not in content["step_description"]:
        raise SchemaError("step_description.action missing", line)
    if "eef_pos" not in content["robot_state"]:
        raise SchemaError("robot_state.eef_pos missing", line)
    try:
        return AnnotationRecord(obj["step"], content)
    except SchemaError as exc:
        raise SchemaError(str(exc), line) from None


def loads(text: str) -> list[AnnotationRecord]:
    records = []
    last = -1
    for i, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", i) from None
        rec = parse_record(obj, i)
        if rec.step < last:
            raise SchemaError("step indices must be non-decreasing", i)
        last = rec.step
        records.append(rec)
    return records


def import_jsonl(path: str | Path) -> list[AnnotationRecord]:
    return loads(Path(path).read_text(encoding="utf-8"))
