"""Reward search guided by a text provider, with optional contact-sampled starts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import simworld
from ..errors import InvalidDsl, ProviderError, RewardEvalError
from ..metrics import is_solved
from ..objectdb import Catalog, default_catalog
from ..providers import ProviderRequest, TextProvider, call_provider, render_prompt, stable_seed
from ..taskgen import TaskSpec
from ..trajectory import Trajectory
from .ppo import PolicySnapshot, RewardCandidate, TrainResult, apply_action, ppo_train

log = logging.getLogger(__name__)

# trailing iterations averaged into a trial's final success rate
FINAL_WINDOW = 5


@dataclass(frozen=True)
class TrainConfig:
    """Per-trial PPO budget (desk scale)."""

    n_envs: int = 24
    iters: int = 25
    horizon: int = 20
    pool_size: int = 16


@dataclass
class Trial:
    index: int
    try_index: int
    iteration: int
    candidate: RewardCandidate
    final_success: float
    curve: list[float] = field(repr=False)
    error: str | None = None

    @property
    def solved(self) -> bool:
        return is_solved(self.final_success)


@dataclass
class EurekaResult:
    best_reward: RewardCandidate | None
    best_policy: PolicySnapshot | None
    curve: list[float]
    trials: list[Trial]
    trials_to_solve: int | None

    @property
    def solved(self) -> bool:
        return self.trials_to_solve is not None

    def summary(self) -> dict:
        return {
            "solved": self.solved,
            "trials_to_solve": self.trials_to_solve,
            "trials": [
                {
                    "index": t.index,
                    "try": t.try_index,
                    "iteration": t.iteration,
                    "candidate_id": t.candidate.candidate_id,
                    "expression": t.candidate.expression,
                    "final_success": t.final_success,
                    "error": t.error,
                }
                for t in self.trials
            ],
        }


def final_success(curve: list[float]) -> float:
    tail = curve[-FINAL_WINDOW:]
    return float(np.mean(tail)) if tail else 0.0


def propose_candidates(
    task: TaskSpec, provider: TextProvider, n: int, seed: int, iteration: int, base: RewardCandidate | None, curve: list[float]
) -> list[RewardCandidate]:
    prompt = render_prompt(
        "propose_reward",
        description=task.description,
        objects=", ".join(task.objects),
        check_success=task.program.check_success,
        compose_state=task.program.compose_state,
        n=str(n),
        history=(
            f"{base.expression}\ncurve: " + ", ".join(f"{c:.2f}" for c in curve[-10:])
            if base
            else f"{task.program.reward_function}\ncurve: none"
        ),
    )
    payload = {
        "family": task.family,
        "roles": task.roles,
        "n": n,
        "iteration": iteration,
        "base": base.expression if base else None,
    }
    text = call_provider(provider, ProviderRequest("propose_reward", prompt, payload, seed))
    lines = [l.strip() for l in text.splitlines() if l.strip() and not l.strip().startswith("#")]
    if not lines:
        raise ProviderError("provider proposed no reward candidates")
    src = "template" if getattr(provider, "provider_id", "").startswith("offline") else "provider"
    return [RewardCandidate(e, f"{task.task_id}/s{seed}/i{iteration}/c{k}", src) for k, e in enumerate(lines[:n])]


def eureka_loop(
    task: TaskSpec,
    provider: TextProvider | None = None,
    iterations: int = 3,
    tries: int = 3,
    candidates_per_iter: int = 2,
    seed: int = 0,
    contact_sampling: bool = True,
    config: TrainConfig = TrainConfig(),
    stop_when_solved: bool = True,
    catalog: Catalog | None = None,
) -> EurekaResult:
    """Search rewards; a pure function of its arguments with the offline provider.

    Each try restarts the search from the task reward. Within a try, each
    iteration trains ``candidates_per_iter`` candidates and the best one (by
    final success rate) seeds the next prompt. ``trials_to_solve`` is the
    1-based count of PPO trials run up to and including the first one whose
    final success rate exceeds the solved threshold.
    """
    if provider is None:
        from ..templates import OfflineProvider

        provider = OfflineProvider()
    catalog = catalog or default_catalog()
    trials: list[Trial] = []
    best: tuple[float, RewardCandidate, TrainResult] | None = None
    solved_at: int | None = None
    for t in range(tries):
        base: RewardCandidate | None = None
        base_curve: list[float] = []
        for it in range(iterations):
            try:
                cands = propose_candidates(task, provider, candidates_per_iter, stable_seed(seed, t), it, base, base_curve)
            except ProviderError as exc:
                log.warning("reward proposal failed (try %d, iteration %d): %s", t, it, exc)
                continue
            it_best: tuple[float, RewardCandidate, TrainResult] | None = None
            for cand in cands:
                train_seed = stable_seed("eureka", seed, t, it, cand.candidate_id) & 0xFFFFFFFF
                try:
                    res = ppo_train(
                        task,
                        cand,
                        config.n_envs,
                        config.iters,
                        train_seed,
                        config.horizon,
                        contact_init=contact_sampling,
                        catalog=catalog,
                        pool_size=config.pool_size,
                    )
                except (RewardEvalError, InvalidDsl) as exc:
                    trials.append(Trial(len(trials) + 1, t, it, cand, 0.0, [], str(exc)))
                    continue
                fs = final_success(res.curve)
                trial = Trial(len(trials) + 1, t, it, cand, fs, res.curve)
                trials.append(trial)
                if it_best is None or fs > it_best[0]:
                    it_best = (fs, cand, res)
                if best is None or fs > best[0]:
                    best = (fs, cand, res)
                if trial.solved and solved_at is None:
                    solved_at = trial.index
                    if stop_when_solved:
                        return EurekaResult(cand, res.snapshot, res.curve, trials, solved_at)
            if it_best is not None:
                base, base_curve = it_best[1], it_best[2].curve
    if best is None:
        return EurekaResult(None, None, [], trials, solved_at)
    return EurekaResult(best[1], best[2].snapshot, best[2].curve, trials, solved_at)


class PolicyAgent:
    """Rolls out a trained policy's mean action from a task reset."""

    def __init__(self, snapshot: PolicySnapshot, horizon: int = 50, catalog: Catalog | None = None, agent_id: str = "rl_eureka"):
        self.snapshot = snapshot
        self.horizon = horizon
        self.catalog = catalog or default_catalog()
        self.agent_id = agent_id

    def run(self, task: TaskSpec, seed: int, on_state=None) -> Trajectory:
        w = simworld.reset(task, seed, self.catalog)
        rec = w.start_recording(on_state)
        success = False
        for _ in range(self.horizon):
            w.step(apply_action(w, self.snapshot.act(simworld.compose_state(w))[0]))
            if simworld.check_success(w):
                success = True
                break
        w.stop_recording()
        return Trajectory(task.task_id, seed, rec.states, rec.actions, success, rec.annotations, self.agent_id)
