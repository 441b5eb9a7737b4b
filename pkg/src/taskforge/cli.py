"""Command-line entry point.

Exit codes: 0 success, 1 operational failure, 2 configuration or usage error.
External provider credentials are read from ANYTASK_PROVIDER_ENDPOINT and
ANYTASK_PROVIDER_KEY only; there are no credential flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import metrics, pipeline, taskgen
from .config import AGENTS, PROVIDERS, REPLAY_MODES, RunConfig, load_config
from .errors import ConfigError, TaskForgeError
from .objectdb import Catalog, EmbeddingIndex, annotate_object, build_index, builtin_records, default_catalog
from .render import save_frames
from .taskgen import TaskSpec
from .trajectory import load_trajectory, save_trajectory

log = logging.getLogger("taskforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class StageError(Exception):
    """Operational failure with the stage and task it happened in."""

    def __init__(self, stage: str, task_id: str, cause: Exception):
        super().__init__(str(cause))
        self.stage = stage
        self.task_id = task_id
        self.cause = cause


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--provider", choices=PROVIDERS)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="taskforge", description="Procedural manipulation task generation and demonstration collection.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    db = sub.add_parser("db", help="object database").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = db.add_parser("build", help="annotate the built-in objects and write catalog plus index")
    _common(p)
    p = db.add_parser("query", help="nearest objects for a phrase")
    _common(p)
    p.add_argument("text")
    p.add_argument("-k", type=int, default=3)

    task = sub.add_parser("task", help="task generation").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = task.add_parser("gen", help="propose one task and write <output-dir>/tasks/<id>.json")
    _common(p)
    p.add_argument("--family", required=True, choices=taskgen.FAMILIES)
    p.add_argument("--mode", choices=("object", "task"), default="object")

    ag = sub.add_parser("agent", help="agents").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ag.add_parser("run", help="success rate of an agent on a task")
    _common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--agent", choices=AGENTS)
    p.add_argument("--episodes", type=int, default=10)

    p = sub.add_parser("collect", help="render-free collection of successful trajectories")
    _common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--agent", choices=AGENTS)
    p.add_argument("--n-target", dest="n_target", type=int)

    p = sub.add_parser("replay", help="render observations for recorded trajectories")
    _common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--trajs", required=True, help="directory of trajectory files")
    p.add_argument("--mode", dest="replay_mode", choices=REPLAY_MODES)

    p = sub.add_parser("export-dataset", help="write a behaviour-cloning index for a run")
    p.add_argument("run_dir")

    me = sub.add_parser("metrics", help="metrics").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = me.add_parser("bleu", help="self-BLEU of a one-sentence-per-line corpus")
    p.add_argument("corpus")
    p.add_argument("-n", type=int, default=4)
    p = me.add_parser("solved", help="solved fractions from JSONL lines with family and rate")
    p.add_argument("results")
    p = me.add_parser("throughput", help="throughput report for a run directory")
    p.add_argument("run_dir")

    pl = sub.add_parser("pipeline", help="full pipeline").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = pl.add_parser("run", help="generate tasks, collect, replay and render")
    _common(p)
    p.add_argument("--agent", choices=AGENTS)
    p.add_argument("--replay-mode", dest="replay_mode", choices=REPLAY_MODES)
    p.add_argument("--n-target", dest="n_target", type=int)
    return ap


_OVERRIDES = ("seed", "output_dir", "provider", "workers", "agent", "replay_mode", "n_target")


def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
    return load_config(getattr(args, "config", None), overrides)


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _print(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _load_task(path: str) -> TaskSpec:
    try:
        return TaskSpec.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load task {path}: {exc}") from None


def cmd_db(args) -> int:
    cfg = _config(args)
    out = _out(cfg) / "db"
    if args.action == "build":
        provider = pipeline.make_provider(cfg)
        recs = [annotate_object(r, provider) for r in builtin_records(annotated=False)]
        cat = Catalog(recs, default_catalog().assets)
        cat.save(out)
        build_index(recs).save(out / "index.json")
        _print({"objects": len(recs), "path": str(out)})
        return 0
    if not (out / "index.json").exists():
        raise ConfigError(f"no index at {out}; run 'taskforge db build' first")
    index = EmbeddingIndex.load(out / "index.json")
    _print([{"key": k, "score": s} for k, s in index.query(args.text, args.k)])
    return 0


def cmd_task(args) -> int:
    cfg = _config(args)
    provider = pipeline.make_provider(cfg)
    catalog = default_catalog()
    try:
        if args.mode == "task":
            spec = taskgen.propose_task_task_based(args.family, provider, build_index(catalog.records.values()), cfg.seed, catalog)
        else:
            objs = taskgen.sample_objects(catalog, args.family, cfg.seed)
            spec = taskgen.propose_task_object_based(objs, args.family, provider, cfg.seed, catalog)
    except TaskForgeError as exc:
        raise StageError("task_generation", f"{args.family}/seed{cfg.seed}", exc) from exc
    path = _out(cfg) / "tasks" / f"{spec.task_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    spec.save(path)
    _print({"task_id": spec.task_id, "path": str(path), "description": spec.description})
    return 0


def _agent(cfg: RunConfig, task: TaskSpec):
    try:
        agent, _ = pipeline.make_agent(cfg, task, pipeline.make_provider(cfg), default_catalog(), _out(cfg))
    except TaskForgeError as exc:
        raise StageError("refinement", task.task_id, exc) from exc
    return agent


def cmd_agent(args) -> int:
    cfg = _config(args)
    task = _load_task(args.task)
    agent = _agent(cfg, task)
    seeds = pipeline.collection_seeds(task.task_id, cfg.seed, args.episodes)
    try:
        ok = [agent.run(task, s).success for s in seeds]
    except TaskForgeError as exc:
        raise StageError("rollout", task.task_id, exc) from exc
    rate = sum(ok) / len(ok) if ok else 0.0
    _print({"task_id": task.task_id, "agent": cfg.agent, "episodes": len(ok), "success_rate": rate, "solved": metrics.is_solved(rate)})
    return 0


def cmd_collect(args) -> int:
    cfg = _config(args)
    task = _load_task(args.task)
    agent = _agent(cfg, task)
    out = _out(cfg) / "trajs" / task.task_id
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    try:
        res = pipeline.collect_stage(agent, task, cfg.n_target, cfg.workers, cfg.seed, cfg.effective_attempt_cap)
    except pipeline.AttemptCapExhausted as exc:
        _report(StageError("collection", task.task_id, exc))
        res, status = exc.partial, 1
    except TaskForgeError as exc:
        raise StageError("collection", task.task_id, exc) from exc
    for tr in res.trajectories:
        save_trajectory(tr, out / f"{tr.seed}.bin")
    (out / "collect.json").write_text(json.dumps(res.report(), indent=2, sort_keys=True) + "\n")
    _print({"task_id": task.task_id, "path": str(out), **res.report()})
    return status


def cmd_replay(args) -> int:
    cfg = _config(args)
    task = _load_task(args.task)
    factory = pipeline.TaskWorldFactory(task)
    out = _out(cfg) / "frames" / task.task_id
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for path in sorted(Path(args.trajs).glob("*.bin")):
        try:
            tr = load_trajectory(path)
            if cfg.replay_mode == "state":
                frames = pipeline.replay_state(tr, factory, cfg.render, cfg.seed)
            else:
                frames, _ = pipeline.replay_action(tr, factory, cfg.render, cfg.seed)
        except (TaskForgeError, OSError) as exc:
            raise StageError("replay", f"{task.task_id}/{path.name}", exc) from exc
        save_frames(frames, out / path.name)
        n += len(frames)
    _print({"task_id": task.task_id, "frames": n, "path": str(out)})
    return 0


def cmd_export(args) -> int:
    _print({"index": str(pipeline.export_dataset(args.run_dir))})
    return 0


def cmd_metrics(args) -> int:
    if args.action == "bleu":
        lines = [l.strip() for l in Path(args.corpus).read_text(encoding="utf-8").splitlines() if l.strip()]
        print(f"{metrics.self_bleu(lines, args.n).self_bleu:.6g}")
    elif args.action == "solved":
        rows = [json.loads(l) for l in Path(args.results).read_text(encoding="utf-8").splitlines() if l.strip()]
        _print(metrics.solved_stats((r["family"], float(r["rate"])) for r in rows))
    else:
        _print(metrics.throughput_report(pipeline.load_manifest(args.run_dir)))
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    manifest = pipeline.run_pipeline(cfg)
    failed = {k: v["error"] for k, v in manifest["tasks"].items() if v["error"]}
    for task_id, err in sorted(failed.items()):
        print(f"taskforge: error in stage {err['stage']} for task {task_id}: {err['message']}", file=sys.stderr)
    summary = {k: {f: v[f] for f in ("attempted", "succeeded", "rendered")} for k, v in manifest["tasks"].items()}
    _print({"output_dir": cfg.output_dir, "config_hash": manifest["config_hash"], "tasks": summary})
    return 1 if failed else 0


COMMANDS = {
    "db": cmd_db,
    "task": cmd_task,
    "agent": cmd_agent,
    "collect": cmd_collect,
    "replay": cmd_replay,
    "export-dataset": cmd_export,
    "metrics": cmd_metrics,
    "pipeline": cmd_pipeline,
}


def _report(exc: StageError) -> None:
    print(f"taskforge: error in stage {exc.stage} for task {exc.task_id}: {type(exc.cause).__name__}: {exc}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"taskforge: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"taskforge: config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        _report(exc)
        return 1
    except (TaskForgeError, OSError) as exc:
        print(f"taskforge: error in stage {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("taskforge: interrupted; partial results written", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
