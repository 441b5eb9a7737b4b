"""Planning agent with parallel rollout refinement (ViPR).

Each refinement iteration runs K seeded rollouts of the current best plan,
has an evaluator judge them, and asks the provider for a repaired plan. The
candidate is adopted only if its aggregate score, compared lexicographically
as (success rate, mean confidence), strictly improves.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import dsl, simworld
from ..errors import DslRejected, EvaluatorError, InvalidDsl, ProviderError
from ..metrics import ConfusionMatrix, confusion
from ..objectdb import Catalog, default_catalog
from ..providers import ProviderRequest, TextProvider, call_provider, render_prompt, stable_seed
from ..taskgen import TaskSpec
from ..trajectory import Trajectory
from .execute import SkillPolicy, run_policy

log = logging.getLogger(__name__)

DEFAULT_K = 16
DEFAULT_MAX_ITERS = 5
GRASP_SKILLS = ("close_gripper", "grasp")


@dataclass(frozen=True)
class Plan:
    steps: tuple[dsl.SkillCall, ...]
    revision: int = 0
    parent_revision: int | None = None

    @classmethod
    def from_text(cls, text: str, revision: int = 0, parent_revision: int | None = None) -> "Plan":
        return cls(tuple(dsl.parse_policy(text)), revision, parent_revision)

    def lines(self) -> list[str]:
        return [s.to_source() for s in self.steps]

    def to_text(self) -> str:
        return "\n".join(self.lines())

    def bind(self, symbols: dsl.Symbols) -> list[dsl.BoundSkill]:
        return [dsl.bind_skill(s, symbols) for s in self.steps]


@dataclass(frozen=True)
class Judgment:
    success: bool
    confidence: float
    feedback: str

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise EvaluatorError("confidence must lie in [0, 1]")


@dataclass
class RolloutRecord:
    seed: int
    annotations: list
    success_oracle: bool
    trajectory: Trajectory
    judgment: Judgment | None = None
    target: str | None = None


# ----------------------------------------------------------------------------- rollouts


def rollout(
    task: TaskSpec,
    steps: list[dsl.BoundSkill],
    seed: int,
    catalog: Catalog | None = None,
    program: dsl.CompiledProgram | None = None,
    bank: dict[str, SkillPolicy] | None = None,
    agent_id: str = "tamp_vipr",
    on_state=None,
) -> RolloutRecord:
    catalog = catalog or default_catalog()
    w = simworld.reset(task, seed, catalog, program=program)
    rec = w.start_recording(on_state)
    run_policy(w, steps, bank)
    success = simworld.check_success(w)
    w.stop_recording()
    traj = Trajectory(task.task_id, seed, rec.states, rec.actions, success, rec.annotations, agent_id)
    target = next(iter(task.roles.values()), None) if task.roles else None
    return RolloutRecord(seed, rec.annotations, success, traj, target=target)


def rollouts(task, plan: Plan, seeds, catalog=None, program=None, workers: int = 1, bank=None) -> list[RolloutRecord]:
    catalog = catalog or default_catalog()
    program = program or simworld.compile_task(task, catalog)
    steps = plan.bind(program.symbols)
    if workers <= 1:
        return [rollout(task, steps, s, catalog, program, bank) for s in seeds]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda s: rollout(task, steps, s, catalog, program, bank), seeds))


# ----------------------------------------------------------------------------- evaluators


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def grasp_feedback(record: RolloutRecord) -> str:
    """Rule-derived feedback from the final annotations of a rollout."""
    if record.success_oracle:
        return "The task succeeded."
    exits = [
        a for a in record.annotations
        if a.content["step_description"].get("skill") in GRASP_SKILLS and a.content["step_description"].get("phase") == "exit"
    ]
    if not exits:
        return "The gripper never closed on anything; add a grasp before moving the object."
    close = exits[0]
    holding = close.content.get("extra", {}).get("holding")
    eef = np.array(close.content["robot_state"]["eef_pos"])
    objects = {k: v for k, v in close.content["object_states"].items() if "orientation" in v}
    if holding is None:
        name = record.target if record.target in objects else min(
            objects, key=lambda k: float(np.linalg.norm(np.array(objects[k]["position"]) - eef))
        )
        offset = np.array(objects[name]["position"]) - eef
        axis = int(np.argmax(np.abs(offset)))
        sign = "+" if offset[axis] >= 0 else "-"
        shift = ", ".join(_fmt(round(float(v), 3) + 0.0) for v in offset)
        return (
            f"The gripper closed {_fmt(float(np.linalg.norm(offset)))} m from the centre of {name} "
            f"and grasped nothing; the object lies toward {sign}{'xyz'[axis]}. shift the grasp by [{shift}]"
        )
    return f"The gripper held {holding} but the goal condition was not met at the end of the episode."


class OracleEvaluator:
    """Judges with the ground-truth success check and full confidence."""

    evaluator_id = "oracle"

    def judge(self, record: RolloutRecord) -> Judgment:
        return Judgment(record.success_oracle, 1.0, grasp_feedback(record))


class NoisyEvaluator:
    """Oracle verdicts flipped with probability ``p_flip`` (agreement-monitoring tests)."""

    def __init__(self, p_flip: float, seed: int = 0, confidence: float = 0.8):
        if not 0.0 <= p_flip <= 1.0:
            raise EvaluatorError("p_flip must lie in [0, 1]")
        self.p_flip = p_flip
        self.seed = seed
        self.confidence = confidence
        self.evaluator_id = f"noisy-{p_flip:g}"

    def judge(self, record: RolloutRecord) -> Judgment:
        rng = np.random.default_rng(stable_seed("noisy-eval", self.seed, record.seed))
        flip = bool(rng.random() < self.p_flip)
        verdict = record.success_oracle != flip
        return Judgment(verdict, self.confidence, grasp_feedback(record))


def evaluate_rollout(record: RolloutRecord, evaluator) -> Judgment:
    if not record.annotations:
        raise EvaluatorError("rollout has no annotations to judge")
    try:
        j = evaluator.judge(record)
    except EvaluatorError:
        raise
    except Exception as exc:
        raise EvaluatorError(f"evaluator failed: {exc}") from exc
    record.judgment = j
    return j


# ----------------------------------------------------------------------------- planning


def _plan_prompt_fields(task: TaskSpec) -> dict:
    return {"description": task.description, "roles": task.roles, "check_success": task.program.check_success}


def tamp_generate_plan(task: TaskSpec, provider: TextProvider, seed: int = 0, catalog: Catalog | None = None) -> Plan:
    """Revision-0 plan; one re-prompt with the validator message on rejection."""
    catalog = catalog or default_catalog()
    symbols = simworld.symbols_for(task.objects, catalog)
    feedback = ""
    for attempt in range(2):
        payload = {"family": task.family, "roles": task.roles, "objects": list(task.objects), "feedback": feedback}
        prompt = render_prompt("propose_plan", **_plan_prompt_fields(task)) + feedback
        text = call_provider(provider, ProviderRequest("propose_plan", prompt, payload, seed))
        try:
            plan = Plan.from_text(text)
            plan.bind(symbols)
            if not plan.steps:
                raise InvalidDsl("plan is empty", section="scripted_policy", error_class="syntax error")
            return plan
        except InvalidDsl as exc:
            if attempt == 1:
                raise DslRejected(str(exc), section="scripted_policy", error_class=exc.error_class) from None
            feedback = f"\nThe previous plan was rejected: {exc}"
    raise AssertionError("unreachable")


@dataclass
class IterationResult:
    plan: Plan
    aggregate: tuple[float, float]
    confusion: ConfusionMatrix
    records: list[RolloutRecord] = field(repr=False, default_factory=list)


def evaluate_plan(task, plan, seeds, evaluator, catalog=None, program=None, workers: int = 1, bank=None) -> IterationResult:
    recs = rollouts(task, plan, seeds, catalog, program, workers, bank)
    judgments = [evaluate_rollout(r, evaluator) for r in recs]
    sr = sum(j.success for j in judgments) / len(judgments)
    conf = float(np.mean([j.confidence for j in judgments]))
    cm = confusion([j.success for j in judgments], [r.success_oracle for r in recs])
    return IterationResult(plan, (sr, conf), cm, recs)


def _repair(best: IterationResult, provider: TextProvider, revision: int, seed: int, symbols) -> Plan:
    failed = [r for r in best.records if not r.judgment.success]
    feedback = [r.judgment.feedback for r in failed]
    sample = failed[0].annotations if failed else []
    prompt = render_prompt(
        "repair_plan",
        k=str(len(best.records)),
        revision=str(best.plan.revision),
        plan=best.plan.to_text(),
        success_rate=f"{best.aggregate[0]:.3f}",
        feedback="\n".join(f"- {f}" for f in sorted(set(feedback))),
        annotations="\n".join(json.dumps(a.to_dict(), sort_keys=True) for a in sample[-6:]),
    )
    payload = {"plan": best.plan.lines(), "feedback": feedback, "revision": best.plan.revision}
    text = call_provider(provider, ProviderRequest("repair_plan", prompt, payload, seed))
    try:
        plan = Plan.from_text(text, revision, best.plan.revision)
        plan.bind(symbols)
    except InvalidDsl as exc:
        raise ProviderError(f"repaired plan rejected: {exc}") from None
    return plan


def vipr_refine(
    plan: Plan,
    task: TaskSpec,
    K: int = DEFAULT_K,
    max_iters: int = DEFAULT_MAX_ITERS,
    evaluator=None,
    provider: TextProvider | None = None,
    catalog: Catalog | None = None,
    seed: int = 0,
    workers: int = 1,
) -> tuple[Plan, list[dict]]:
    """Refine ``plan``; returns the best plan and one history entry per iteration.

    Iteration 1 evaluates the input plan. Every later iteration evaluates one
    provider-repaired candidate on the same K seeds.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if provider is None:
        from ..templates import OfflineProvider

        provider = OfflineProvider()
    evaluator = evaluator or OracleEvaluator()
    catalog = catalog or default_catalog()
    program = simworld.compile_task(task, catalog)
    seeds = [stable_seed(task.task_id, "vipr", seed, i) & 0xFFFFFFFF for i in range(K)]
    best = evaluate_plan(task, plan, seeds, evaluator, catalog, program, workers)
    history = [_entry(1, best, best, True)]
    next_revision = plan.revision + 1
    for it in range(2, max_iters + 1):
        if best.aggregate[0] >= 1.0:
            break
        try:
            cand_plan = _repair(best, provider, next_revision, stable_seed(seed, it), program.symbols)
        except ProviderError as exc:
            log.warning("ViPR iteration %d skipped: %s", it, exc)
            history.append({"iteration": it, "skipped": str(exc), "best_revision": best.plan.revision, "best_aggregate": list(best.aggregate)})
            continue
        next_revision += 1
        cand = evaluate_plan(task, cand_plan, seeds, evaluator, catalog, program, workers)
        adopted = cand.aggregate > best.aggregate
        if adopted:
            best = cand
        history.append(_entry(it, cand, best, adopted))
    return best.plan, history


def _entry(it: int, cand: IterationResult, best: IterationResult, adopted: bool) -> dict:
    return {
        "iteration": it,
        "revision": cand.plan.revision,
        "parent_revision": cand.plan.parent_revision,
        "aggregate": list(cand.aggregate),
        "adopted": adopted,
        "best_revision": best.plan.revision,
        "best_aggregate": list(best.aggregate),
        "confusion": cand.confusion.to_dict(),
    }


# ----------------------------------------------------------------------------- success statistics


def agent_success_rate(agent, task: TaskSpec, n: int, seeds=None) -> dict:
    """``n`` seeded rollouts; solved means the rate strictly exceeds 10%."""
    if n < 1:
        raise ValueError("n must be at least 1")
    seeds = list(seeds) if seeds is not None else list(range(n))
    results = [(s, bool(agent.run(task, s).success)) for s in seeds[:n]]
    rate = sum(ok for _, ok in results) / n
    return {"rate": rate, "solved": rate > 0.10, "results": results}


class TampAgent:
    """Executes a fixed plan; the plan usually comes out of ViPR refinement."""

    def __init__(self, plan: Plan, catalog: Catalog | None = None, agent_id: str = "tamp_vipr"):
        self.plan = plan
        self.catalog = catalog or default_catalog()
        self.agent_id = agent_id
        self._programs: dict[str, dsl.CompiledProgram] = {}

    def run(self, task: TaskSpec, seed: int, on_state=None) -> Trajectory:
        program = self._programs.get(task.task_id)
        if program is None:
            program = self._programs[task.task_id] = simworld.compile_task(task, self.catalog)
        steps = self.plan.bind(program.symbols)
        return rollout(task, steps, seed, self.catalog, program, agent_id=self.agent_id, on_state=on_state).trajectory
