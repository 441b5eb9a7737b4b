"""Task generation in object-first and task-first modes, plus runability checks."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from . import dsl, simworld
from .errors import (
    DslRejected,
    InvalidDsl,
    NoMatchingAsset,
    PlacementInfeasible,
    PreconditionError,
    ProviderError,
)
from .geometry import Aabb
from .objectdb import Catalog, EmbeddingIndex, ObjectRecord, default_catalog, query
from .providers import ProviderRequest, TextProvider, call_provider, render_prompt, stable_seed
from .templates import FAMILIES, assign_roles, family_of_predicate

log = logging.getLogger(__name__)

RETRIEVAL_THRESHOLD = 0.2
# sections are generated in this order; check_success comes first and is shown to the rest
GENERATION_ORDER = ("check_success", "reset", "compose_state", "reward_function", "scripted_policy")
RUNABILITY_SEEDS = (0, 1, 2)
# families used only by built-in benchmark tasks, never generated
BUILTIN_FAMILIES = ("reaching",)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    family: str
    description: str
    objects: tuple[str, ...]
    program: dsl.TaskDsl
    provenance: dict = field(default_factory=dict, compare=False)
    roles: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES + BUILTIN_FAMILIES:
            raise PreconditionError(f"unknown family {self.family!r}")
        if not self.description.strip():
            raise PreconditionError("task description is empty")
        object.__setattr__(self, "objects", tuple(self.objects))

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "family": self.family,
            "description": self.description,
            "objects": list(self.objects),
            "roles": dict(self.roles),
            "program": self.program.to_dict(),
            "provenance": dict(self.provenance),
            "grammar_version": dsl.GRAMMAR_VERSION,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(
            task_id=d["task_id"],
            family=d["family"],
            description=d["description"],
            objects=tuple(d["objects"]),
            program=dsl.TaskDsl.from_dict(d["program"]),
            provenance=dict(d.get("provenance", {})),
            roles=dict(d.get("roles", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "TaskSpec":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TaskSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class TaskDraft:
    family: str
    description: str
    objects: tuple[dict, ...]
    roles: dict
    seed: int

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(o["key"] for o in self.objects)


def object_payload(rec: ObjectRecord) -> dict:
    return {
        "key": rec.key,
        "name": rec.name,
        "description": rec.description,
        "extent": list(rec.extent),
        "color": rec.color,
        "material": rec.material,
        "articulated": rec.articulated,
    }


def _objects_block(objects: Iterable[dict]) -> str:
    return "\n".join(f"- {o['key']}: {o['description'] or o['name']} ({o['extent']})" for o in objects)


def _parse_json(text: str, kind: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        raise ProviderError(f"{kind} response is not JSON") from None
    if not isinstance(data, dict):
        raise ProviderError(f"{kind} response is not a JSON object")
    return data


def _task_id(family: str, keys, seed: int, description: str) -> str:
    return f"{family}-{stable_seed(family, tuple(keys), seed, description):016x}"[: len(family) + 11]


def _resolve(objects, catalog: Catalog) -> list[ObjectRecord]:
    recs = []
    for o in objects:
        if isinstance(o, ObjectRecord):
            recs.append(o)
        elif o in catalog:
            recs.append(catalog[o])
        else:
            raise PreconditionError(f"object {o!r} is not in the catalog")
    return recs


# ----------------------------------------------------------------------------- generation


def _section_prompt(draft: TaskDraft, section: str, success_text: str, feedback: str) -> str:
    ws = simworld.DEFAULT_WORKSPACE
    return render_prompt(
        "generate_section",
        grammar_version=str(dsl.GRAMMAR_VERSION),
        family=draft.family,
        description=draft.description,
        objects="; ".join(f"{o['key']} {o['extent']} joint={o['articulated']}" for o in draft.objects),
        roles=draft.roles,
        ws_xmin=str(ws.min[0]), ws_xmax=str(ws.max[0]),
        ws_ymin=str(ws.min[1]), ws_ymax=str(ws.max[1]),
        ws_zmin=str(ws.min[2]), ws_zmax=str(ws.max[2]),
        check_success=success_text or "(not yet written; write it now)",
        section=section,
        feedback=feedback,
    )


def generate_program(draft: TaskDraft, provider: TextProvider) -> dsl.TaskDsl:
    """Generate and validate all five sections, check_success first.

    A section that fails validation is re-prompted once with the validator
    message appended; a second failure raises DslRejected for that section.
    """
    symbols = dsl.Symbols.of(draft.keys, [o["key"] for o in draft.objects if o["articulated"]])
    sections: dict[str, str] = {}
    for name in GENERATION_ORDER:
        feedback = ""
        for attempt in range(2):
            payload = {
                "section": name,
                "family": draft.family,
                "objects": list(draft.objects),
                "roles": draft.roles,
                "check_success": sections.get("check_success", ""),
                "feedback": feedback,
            }
            prompt = _section_prompt(draft, name, sections.get("check_success", ""), feedback)
            text = call_provider(provider, ProviderRequest("generate_section", prompt, payload, draft.seed)).strip()
            try:
                _validate_section(name, text, symbols)
            except InvalidDsl as exc:
                if attempt == 1:
                    raise DslRejected(str(exc), section=name, error_class=exc.error_class) from None
                feedback = f"The previous answer was rejected by the validator: {exc}. Fix it."
                continue
            sections[name] = text
            break
    return dsl.TaskDsl(**sections)


def _validate_section(name: str, text: str, symbols: dsl.Symbols) -> None:
    probe = dsl.TaskDsl(**{s: text if s == name else "" for s in dsl.SECTION_NAMES})
    dsl.compile_section(probe, name, symbols)


def _finish(draft: TaskDraft, provider: TextProvider, catalog: Catalog, prompt_hash: str) -> TaskSpec:
    program = generate_program(draft, provider)
    fam = family_of_predicate(program.check_success)
    if fam is not None and fam != draft.family:
        raise DslRejected(
            f"success predicate looks like {fam}, task family is {draft.family}",
            section="check_success",
            error_class="family mismatch",
        )
    factory = simworld.WorldFactory(draft.keys, catalog)
    report = None
    for seed in RUNABILITY_SEEDS:
        report = check_runability(program, factory, seed)
        if report.runnable:
            break
    if not report.runnable:
        raise DslRejected(report.message, section=report.failing_section, error_class=report.error_class)
    return TaskSpec(
        task_id=_task_id(draft.family, draft.keys, draft.seed, draft.description),
        family=draft.family,
        description=draft.description,
        objects=draft.keys,
        program=program,
        provenance={"provider": provider.provider_id, "prompt_hash": prompt_hash, "seed": draft.seed},
        roles=dict(draft.roles),
    )


def propose_task_object_based(
    objects, family: str, provider: TextProvider, seed: int = 0, catalog: Catalog | None = None
) -> TaskSpec:
    """Objects first: the provider writes a task around an already sampled object set."""
    catalog = catalog or default_catalog()
    recs = _resolve(objects, catalog)
    if not recs:
        raise PreconditionError("object-based generation needs at least one object")
    payload_objs = [object_payload(r) for r in recs]
    roles = assign_roles(family, payload_objs)
    payload = {"family": family, "objects": payload_objs}
    prompt = render_prompt("propose_task", family=family, objects=_objects_block(payload_objs))
    req = ProviderRequest("propose_task", prompt, payload, seed)
    data = _parse_json(call_provider(provider, req), "propose_task")
    description = str(data.get("description", "")).strip()
    if not description:
        raise ProviderError("provider proposed an empty task description")
    draft = TaskDraft(family, description, tuple(payload_objs), roles, seed)
    return _finish(draft, provider, catalog, req.prompt_hash)


def retrieve(phrase: str, index: EmbeddingIndex, exclude=(), threshold: float = RETRIEVAL_THRESHOLD, accept=None) -> str:
    """Best-scoring catalog key for a phrase, skipping excluded keys."""
    hits = query(index, phrase, k=len(index))
    for key, score in hits:
        if score < threshold:
            break
        if key in exclude or (accept is not None and not accept(key)):
            continue
        return key
    best = hits[0][1] if hits else float("nan")
    raise NoMatchingAsset(f"no catalog object matches {phrase!r} (best cosine {best:.3f} < {threshold})")


def sample_objects(catalog: Catalog, family: str, seed: int, n_distractors: int | None = None) -> list[str]:
    """Seeded object set suited to a family, for object-based generation."""
    import numpy as np

    rng = np.random.default_rng(stable_seed("sample_objects", family, seed))
    keys = sorted(catalog.records)
    drawers = [k for k in keys if catalog[k].articulated]
    movable = [k for k in keys if not catalog[k].articulated and max(catalog[k].extent[:2]) <= 0.12]
    receptacles = [k for k in keys if "container" in catalog[k].tags or "flat" in catalog[k].tags]
    small = [k for k in movable if k not in receptacles]
    if n_distractors is None:
        n_distractors = int(rng.integers(0, 3))
    if family == "drawer_opening":
        if not drawers:
            raise NoMatchingAsset("catalog has no articulated drawer")
        chosen = [drawers[rng.integers(len(drawers))]]
    elif family == "pick_and_place":
        chosen = [small[rng.integers(len(small))], receptacles[rng.integers(len(receptacles))]]
    elif family == "stacking":
        blocks = [k for k in small if "block" in catalog[k].tags or "can" in catalog[k].tags]
        base = blocks[rng.integers(len(blocks))]
        top = [k for k in small if k != base and max(catalog[k].extent[:2]) <= 0.08]
        chosen = [top[rng.integers(len(top))], base]
    else:
        chosen = [small[rng.integers(len(small))]]
    rest = [k for k in small if k not in chosen]
    extra = rng.choice(len(rest), size=min(n_distractors, len(rest)), replace=False) if n_distractors else []
    return chosen + [rest[i] for i in sorted(extra)]


def propose_task_task_based(
    family: str,
    provider: TextProvider,
    index: EmbeddingIndex,
    seed: int = 0,
    catalog: Catalog | None = None,
    threshold: float = RETRIEVAL_THRESHOLD,
) -> TaskSpec:
    """Task first: the provider names the objects it needs and the index retrieves assets."""
    catalog = catalog or default_catalog()
    if family not in FAMILIES:
        raise PreconditionError(f"unknown family {family!r}")
    prompt = render_prompt("propose_objects", family=family)
    req = ProviderRequest("propose_objects", prompt, {"family": family}, seed)
    data = _parse_json(call_provider(provider, req), "propose_objects")
    phrases = [str(p) for p in data.get("objects", []) if str(p).strip()]
    if not phrases:
        raise ProviderError("provider proposed no objects")
    keys: list[str] = []
    for i, phrase in enumerate(phrases):
        accept = None
        if family == "drawer_opening" and i == 0:
            accept = lambda k: catalog[k].articulated  # noqa: E731
        elif family != "drawer_opening":
            accept = lambda k: not catalog[k].articulated  # noqa: E731
        keys.append(retrieve(phrase, index, exclude=keys, threshold=threshold, accept=accept))
    return propose_task_object_based(keys, family, provider, seed, catalog)


# ----------------------------------------------------------------------------- runability


@dataclass(frozen=True)
class RunabilityReport:
    runnable: bool
    failing_section: str | None = None
    error_class: str = ""
    message: str = ""

    def __post_init__(self):
        if self.runnable and self.failing_section is not None:
            raise PreconditionError("runnable reports carry no failing section")


def check_runability(program: dsl.TaskDsl, world_factory: "simworld.WorldFactory", seed: int = 0) -> RunabilityReport:
    """Run reset, compose_state and check_success once; report the first failing section."""
    symbols = world_factory.symbols
    section = "reset"
    try:
        specs = dsl.parse_reset(program.reset, symbols)
        world = world_factory.build(program, seed, specs)
        section = "compose_state"
        state = dsl.parse_state_spec(program.compose_state, symbols)
        simworld.compose_state(world, state)
        section = "check_success"
        pred = dsl.compile_expr(program.check_success, symbols, "check_success", expect=dsl.BOOL)
        simworld.check_success(world, pred)
    except InvalidDsl as exc:
        return RunabilityReport(False, exc.section or section, exc.error_class, str(exc))
    except PlacementInfeasible as exc:
        return RunabilityReport(False, "reset", "placement infeasible", str(exc))
    except Exception as exc:  # runtime errors are data here
        return RunabilityReport(False, section, "runtime error", f"{type(exc).__name__}: {exc}")
    return RunabilityReport(True)
