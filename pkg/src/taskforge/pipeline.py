"""Staged collection: optional plan refinement, render-free collection, replay with rendering.

Run directory layout::

    <run>/manifest.json                 deterministic summary (no wall-clock data)
    <run>/timings.json                  per-stage wall times and throughput
    <run>/tasks/<task_id>/task.json
    <run>/tasks/<task_id>/trajs/<seed>.bin
    <run>/tasks/<task_id>/frames/<seed>.bin
    <run>/annotations/<task_id>.jsonl
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from . import annotate, simworld, taskgen
from .config import RunConfig
from .errors import AttemptCapExhausted, PreconditionError, ReplayDivergence, TaskForgeError
from .geometry import Pose
from .objectdb import Catalog, build_index, default_catalog
from .providers import HttpProvider, TextProvider, stable_seed
from .render import ObservationFrame, RenderConfig, load_frames, render_observation, save_frames
from .taskgen import TaskSpec
from .trajectory import Trajectory, load_trajectory, save_trajectory

log = logging.getLogger(__name__)

GOLDEN = 0.6180339887498949
MANIFEST_VERSION = 1


class Agent(Protocol):
    agent_id: str

    def run(self, task: TaskSpec, seed: int, on_state: Callable | None = None) -> Trajectory: ...


# ----------------------------------------------------------------------------- synthetic agent


def synthetic_succeeds(seed: int, rate: float) -> bool:
    """Low-discrepancy success rule: the fraction of successes over any seed prefix tracks ``rate``."""
    return math.modf(seed * GOLDEN)[0] < rate


class SyntheticRateAgent:
    """Moves the eef to the task's reach goal (success) or beside it (failure).

    Every episode has exactly ``steps`` actions so render cost is the same for
    successes and failures. Intended for the built-in reach task.
    """

    agent_id = "synthetic"

    def __init__(self, rate: float, steps: int = 10, catalog: Catalog | None = None, miss: float = 0.15):
        if not 0.0 <= rate <= 1.0:
            raise PreconditionError("rate must lie in [0, 1]")
        self.rate = rate
        self.steps = steps
        self.miss = miss
        self.catalog = catalog or default_catalog()

    def run(self, task: TaskSpec, seed: int, on_state=None) -> Trajectory:
        w = simworld.reset(task, seed, self.catalog)
        target = next(iter(task.roles.values()))
        goal = w.obj_position(target) + np.array([0.0, 0.0, 0.1])
        if not synthetic_succeeds(seed, self.rate):
            goal = goal + np.array([0.0, self.miss if goal[1] < 0 else -self.miss, 0.0])
        rec = w.start_recording(on_state)
        start = w.eef_pose.position.copy()
        for i in range(1, self.steps + 1):
            p = start + (goal - start) * (i / self.steps)
            w.step(simworld.Action(Pose(p, w.eef_pose.orientation, canonical=True), False))
        success = simworld.check_success(w)
        w.stop_recording()
        return Trajectory(task.task_id, seed, rec.states, rec.actions, success, rec.annotations, self.agent_id)


# ----------------------------------------------------------------------------- stage 2: collection


@dataclass
class CollectResult:
    trajectories: list[Trajectory]
    attempted: int
    succeeded: int
    frames_attempted: int
    frames: dict[int, list[ObservationFrame]] = field(default_factory=dict)

    def report(self) -> dict:
        return {"attempted": self.attempted, "succeeded": self.succeeded, "frames_attempted": self.frames_attempted}


def collection_seeds(task_id: str, seed: int, n: int) -> list[int]:
    """Consecutive seeds from a hashed base; consecutive seeds keep ``synthetic_succeeds`` low-discrepancy."""
    base = stable_seed(task_id, "collect", seed) & 0x7FFFFFFF
    return [base + i for i in range(n)]


def _frame_rng(render_seed: int, task_id: str, traj_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(stable_seed("render", render_seed, task_id, traj_seed, index))


def collect_stage(
    agent: Agent,
    task: TaskSpec,
    n_target: int,
    workers: int = 1,
    seed: int = 0,
    attempt_cap: int | None = None,
    seeds: list[int] | None = None,
    inline_render: RenderConfig | None = None,
    render_seed: int = 0,
) -> CollectResult:
    """Run seeded rollouts until ``n_target`` successes; only successes are kept.

    Seeds are consumed in list order in chunks of ``workers``; results beyond
    the ``n_target``-th success are discarded, so output does not depend on
    the worker count. With ``inline_render`` every recorded state of every
    attempt is rendered during collection (the coupled baseline).
    """
    if n_target < 1:
        raise PreconditionError("n_target must be at least 1")
    cap = attempt_cap if attempt_cap is not None else 50 * n_target
    seeds = list(seeds) if seeds is not None else collection_seeds(task.task_id, seed, cap)
    seeds = seeds[:cap]

    def attempt(s: int):
        frames: list[ObservationFrame] = []
        hook = None
        if inline_render is not None:

            def hook(w):
                frames.append(render_observation(w, inline_render, _frame_rng(render_seed, task.task_id, s, len(frames)), len(frames)))

        return agent.run(task, s, on_state=hook), frames

    kept: list[Trajectory] = []
    kept_frames: dict[int, list[ObservationFrame]] = {}
    attempted = frames_attempted = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for start in range(0, len(seeds), workers):
            chunk = seeds[start : start + workers]
            results = list(pool.map(attempt, chunk)) if pool else [attempt(s) for s in chunk]
            for traj, frames in results:
                attempted += 1
                frames_attempted += len(traj.states)
                if traj.success:
                    kept.append(traj)
                    if inline_render is not None:
                        kept_frames[traj.seed] = frames
                    if len(kept) == n_target:
                        return CollectResult(kept, attempted, len(kept), frames_attempted, kept_frames)
    finally:
        if pool:
            pool.shutdown()
    raise AttemptCapExhausted(
        f"task {task.task_id}: {len(kept)}/{n_target} successes after {attempted} attempts",
        trajectories=kept,
        attempted=attempted,
        succeeded=len(kept),
        partial=CollectResult(kept, attempted, len(kept), frames_attempted, kept_frames),
    )


# ----------------------------------------------------------------------------- stage 3: replay


class TaskWorldFactory:
    """Fresh worlds for a task; ``factory(seed)`` equals ``simworld.reset(task, seed)``."""

    def __init__(self, task: TaskSpec, catalog: Catalog | None = None):
        self.task = task
        self.catalog = catalog or default_catalog()
        self.program = simworld.compile_task(task, self.catalog)

    def __call__(self, seed: int) -> simworld.World:
        return simworld.reset(self.task, seed, self.catalog, program=self.program)


def replay_state(traj: Trajectory, world_factory: TaskWorldFactory, cfg: RenderConfig, render_seed: int = 0) -> list[ObservationFrame]:
    """Restore each stored state and render it; no stepping."""
    w = world_factory(traj.seed)
    frames = []
    for i, s in enumerate(traj.states):
        w.set_state(s)
        frames.append(render_observation(w, cfg, _frame_rng(render_seed, traj.task_id, traj.seed, i), i))
    return frames


def replay_action(
    traj: Trajectory, world_factory: TaskWorldFactory, cfg: RenderConfig | None, render_seed: int = 0
) -> tuple[list[ObservationFrame], bool]:
    """Reset from the seed, re-execute the actions and check every state bit-exactly."""
    w = world_factory(traj.seed)
    if w.get_state().to_bytes() != traj.states[0]:
        raise ReplayDivergence(f"{traj.task_id}/{traj.seed}: reset state differs from the recording")
    frames = []

    def render(i):
        if cfg is not None:
            frames.append(render_observation(w, cfg, _frame_rng(render_seed, traj.task_id, traj.seed, i), i))

    render(0)
    for i, a in enumerate(traj.actions, start=1):
        w.step(a)
        if w.get_state().to_bytes() != traj.states[i]:
            raise ReplayDivergence(f"{traj.task_id}/{traj.seed}: state diverged at step {i}")
        render(i)
    verified = simworld.check_success(w)
    if verified != traj.success:
        raise ReplayDivergence(f"{traj.task_id}/{traj.seed}: replayed success {verified} != recorded {traj.success}")
    return frames, verified


# ----------------------------------------------------------------------------- whole run


def make_provider(cfg: RunConfig) -> TextProvider:
    from .templates import OfflineProvider

    return OfflineProvider() if cfg.provider == "offline" else HttpProvider()


def generate_tasks(cfg: RunConfig, provider: TextProvider, catalog: Catalog) -> list[TaskSpec]:
    if cfg.agent == "synthetic":
        from .agents.builtin import reach_task

        return [reach_task()]
    index = build_index(catalog.records.values()) if cfg.task_mode == "task" else None
    tasks = []
    for fam in cfg.families:
        for k in range(cfg.tasks_per_family):
            s = stable_seed("task", cfg.seed, fam, k) & 0xFFFFFFFF
            if cfg.task_mode == "task":
                tasks.append(taskgen.propose_task_task_based(fam, provider, index, s, catalog))
            else:
                objs = taskgen.sample_objects(catalog, fam, s)
                tasks.append(taskgen.propose_task_object_based(objs, fam, provider, s, catalog))
    return tasks


def make_agent(cfg: RunConfig, task: TaskSpec, provider: TextProvider, catalog: Catalog, run_dir: Path) -> tuple[Agent, dict]:
    """Agent for ``task`` plus stage-1 info (refinement history or training summary)."""
    from .agents import eureka, hybrid, tamp

    if cfg.agent == "synthetic":
        return SyntheticRateAgent(cfg.synthetic_success_rate, cfg.synthetic_steps, catalog), {}
    if cfg.agent == "tamp_vipr":
        plan = tamp.tamp_generate_plan(task, provider, cfg.seed, catalog)
        info: dict = {}
        if cfg.refine:
            plan, history = tamp.vipr_refine(plan, task, cfg.vipr_k, cfg.vipr_iters, provider=provider, catalog=catalog, seed=cfg.seed)
            info = {"vipr_history": history, "plan": plan.lines()}
        return tamp.TampAgent(plan, catalog), info
    if cfg.agent == "hybrid":
        if cfg.skill_policy:
            from .agents.ppo import PolicySnapshot

            snap = PolicySnapshot.from_bytes(Path(cfg.skill_policy).read_bytes())
            bank = {"pick": hybrid.PolicySkill(snap)}
        else:
            bank = {"pick": hybrid.ScriptedPickSkill()}
        return hybrid.HybridAgent(bank, catalog), {}
    res = eureka.eureka_loop(
        task, provider, cfg.eureka_iterations, cfg.eureka_tries, cfg.eureka_candidates, cfg.seed, catalog=catalog
    )
    if res.best_policy is None:
        raise TaskForgeError(f"reward search produced no policy for {task.task_id}")
    return eureka.PolicyAgent(res.best_policy, catalog=catalog), {"eureka": res.summary()}


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_pipeline(cfg: RunConfig, catalog: Catalog | None = None) -> dict:
    """Execute all stages; returns the manifest (also written to ``<run>/manifest.json``).

    Per-task stage failures are recorded in the manifest and the run moves on.
    On KeyboardInterrupt the partial manifest is written with ``interrupted``
    set before the interrupt propagates.
    """
    catalog = catalog or default_catalog()
    run = Path(cfg.output_dir)
    run.mkdir(parents=True, exist_ok=True)
    provider = make_provider(cfg)
    timings = {"task_generation": 0.0, "refinement": 0.0, "collection": 0.0, "replay": 0.0}
    manifest: dict = {
        "version": MANIFEST_VERSION,
        "config_hash": cfg.config_hash(),
        "config": cfg.hashed_dict(),
        "replay_mode": cfg.replay_mode,
        "render_mode": cfg.render_mode,
        "interrupted": False,
        "tasks": {},
    }
    t0 = time.perf_counter()

    def finish() -> None:
        timings["total"] = time.perf_counter() - t0
        _write_json(run / "manifest.json", manifest)
        rendered = sum(e["rendered"] for e in manifest["tasks"].values())
        _write_json(
            run / "timings.json",
            {
                "timings": timings,
                "demos_per_hour": rendered / (timings["total"] / 3600.0) if timings["total"] > 0 else 0.0,
                "wall_clock": time.time(),
            },
        )

    try:
        tasks = generate_tasks(cfg, provider, catalog)
        timings["task_generation"] = time.perf_counter() - t0
        (run / "annotations").mkdir(exist_ok=True)
        for task in tasks:
            _run_task(cfg, task, provider, catalog, run, manifest, timings)
    except KeyboardInterrupt:
        manifest["interrupted"] = True
        finish()
        raise
    finish()
    return manifest


def _run_task(cfg: RunConfig, task: TaskSpec, provider, catalog: Catalog, run: Path, manifest: dict, timings: dict) -> None:
    inline = cfg.render if cfg.render_mode == "inline" else None
    tdir = run / "tasks" / task.task_id
    (tdir / "trajs").mkdir(parents=True, exist_ok=True)
    (tdir / "frames").mkdir(parents=True, exist_ok=True)
    task.save(tdir / "task.json")
    entry = {
        "family": task.family,
        "attempted": 0,
        "succeeded": 0,
        "rendered": 0,
        "frames_rendered": 0,
        "frames_attempted": 0,
        "trajectories": [],
        "error": None,
    }
    manifest["tasks"][task.task_id] = entry
    stage = "refinement"
    try:
        t = time.perf_counter()
        agent, info = make_agent(cfg, task, provider, catalog, run)
        timings["refinement"] += time.perf_counter() - t
        if "vipr_history" in info:
            _write_json(tdir / "vipr_history.json", info)
        elif info:
            _write_json(tdir / "stage1.json", info)
        stage = "collection"
        t = time.perf_counter()
        try:
            res = collect_stage(
                agent, task, cfg.n_target, cfg.workers, cfg.seed, cfg.effective_attempt_cap, inline_render=inline, render_seed=cfg.seed
            )
        except AttemptCapExhausted as exc:
            entry["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
            res = exc.partial
        timings["collection"] += time.perf_counter() - t
        entry.update(attempted=res.attempted, succeeded=res.succeeded, frames_attempted=res.frames_attempted)
        stage = "replay"
        t = time.perf_counter()
        factory = TaskWorldFactory(task, catalog)
        notes = []
        for traj in res.trajectories:
            if inline is not None:
                frames = res.frames[traj.seed]
            elif cfg.replay_mode == "state":
                frames = replay_state(traj, factory, cfg.render, cfg.seed)
            else:
                frames, _ = replay_action(traj, factory, cfg.render, cfg.seed)
            rel_t = f"tasks/{task.task_id}/trajs/{traj.seed}.bin"
            rel_f = f"tasks/{task.task_id}/frames/{traj.seed}.bin"
            save_trajectory(traj, run / rel_t)
            save_frames(frames, run / rel_f)
            entry["trajectories"].append({"seed": traj.seed, "trajectory": rel_t, "frames": rel_f, "n_states": len(traj.states)})
            entry["rendered"] += 1
            entry["frames_rendered"] += len(frames)
            notes.extend(traj.annotations)
        annotate.export_jsonl(notes, run / "annotations" / f"{task.task_id}.jsonl")
        timings["replay"] += time.perf_counter() - t
    except TaskForgeError as exc:
        log.error("stage %s failed for task %s: %s", stage, task.task_id, exc)
        entry["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}


def measure_speedup(
    rate: float, n_target: int = 10, steps: int = 10, render: RenderConfig | None = None, seed: int = 0
) -> dict:
    """Wall time of inline-rendered collection vs collect-then-replay for the synthetic agent."""
    from .agents.builtin import reach_task

    render = render or RenderConfig(render_delay=0.01)
    task = reach_task()
    agent = SyntheticRateAgent(rate, steps)
    t = time.perf_counter()
    collect_stage(agent, task, n_target, seed=seed, inline_render=render, render_seed=seed)
    inline_s = time.perf_counter() - t
    t = time.perf_counter()
    res = collect_stage(agent, task, n_target, seed=seed)
    factory = TaskWorldFactory(task)
    frames = sum(len(replay_state(tr, factory, render, seed)) for tr in res.trajectories)
    decoupled_s = time.perf_counter() - t
    return {
        "rate": rate,
        "attempted": res.attempted,
        "inline_seconds": inline_s,
        "decoupled_seconds": decoupled_s,
        "speedup": inline_s / decoupled_s,
        "model_speedup": res.frames_attempted / frames,
    }


def load_manifest(run_dir: str | Path) -> dict:
    """Manifest merged with the timing sidecar, as consumed by the throughput metric."""
    run = Path(run_dir)
    m = json.loads((run / "manifest.json").read_text(encoding="utf-8"))
    side = run / "timings.json"
    if side.exists():
        m["timings"] = json.loads(side.read_text(encoding="utf-8"))["timings"]
    return m


def export_dataset(run_dir: str | Path, out: str | Path | None = None) -> Path:
    """Write a behaviour-cloning index: one JSON line per (frame, proprio, action) step."""
    run = Path(run_dir)
    m = load_manifest(run)
    out = Path(out) if out is not None else run / "dataset_index.jsonl"
    with open(out, "w", encoding="utf-8") as fh:
        for task_id, entry in sorted(m["tasks"].items()):
            for rec in entry["trajectories"]:
                traj = load_trajectory(run / rec["trajectory"])
                frames = load_frames(run / rec["frames"])
                for i, f in enumerate(frames):
                    action = traj.actions[i].to_list() if i < len(traj.actions) else None
                    row = {"task_id": task_id, "seed": traj.seed, "frames": rec["frames"], "frame": i, "proprio": f.proprio.tolist(), "action": action}
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
    return out
