"""Run configuration: TOML file plus flag overrides, validated up front."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .render import RenderConfig
from .templates import FAMILIES

AGENTS = ("tamp_vipr", "rl_eureka", "hybrid", "synthetic")
REPLAY_MODES = ("state", "action")
RENDER_MODES = ("decoupled", "inline")
PROVIDERS = ("offline", "external")
# fields that change where or how fast a run happens, not what it produces
_UNHASHED = ("workers", "output_dir")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    provider: str = "offline"
    families: tuple[str, ...] = FAMILIES
    tasks_per_family: int = 1
    task_mode: str = "object"
    agent: str = "tamp_vipr"
    replay_mode: str = "state"
    render_mode: str = "decoupled"
    n_target: int = 4
    attempt_cap: int = 0
    workers: int = 1
    refine: bool = False
    vipr_k: int = 16
    vipr_iters: int = 5
    synthetic_success_rate: float = 1.0
    synthetic_steps: int = 10
    skill_policy: str = ""
    eureka_iterations: int = 3
    eureka_tries: int = 3
    eureka_candidates: int = 2
    render: RenderConfig = field(default_factory=RenderConfig)
    output_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        checks = [
            (self.provider in PROVIDERS, f"provider must be one of {PROVIDERS}"),
            (self.agent in AGENTS, f"agent must be one of {AGENTS}"),
            (self.replay_mode in REPLAY_MODES, f"replay_mode must be one of {REPLAY_MODES}"),
            (self.render_mode in RENDER_MODES, f"render_mode must be one of {RENDER_MODES}"),
            (self.task_mode in ("object", "task"), "task_mode must be 'object' or 'task'"),
            (bool(self.families) and all(f in FAMILIES for f in self.families), f"families must be drawn from {FAMILIES}"),
            (self.tasks_per_family >= 1, "tasks_per_family must be at least 1"),
            (self.n_target >= 1, "n_target must be at least 1"),
            (self.attempt_cap >= 0, "attempt_cap must be non-negative"),
            (self.workers >= 1, "workers must be at least 1"),
            (self.vipr_k >= 1 and self.vipr_iters >= 1, "vipr_k and vipr_iters must be positive"),
            (0.0 <= self.synthetic_success_rate <= 1.0, "synthetic_success_rate must lie in [0, 1]"),
            (self.synthetic_steps >= 1, "synthetic_steps must be positive"),
            (bool(self.output_dir), "output_dir must be set"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def effective_attempt_cap(self) -> int:
        return self.attempt_cap or 50 * self.n_target

    def to_dict(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        d["render"] = self.render.to_dict()
        return d

    def hashed_dict(self) -> dict:
        d = self.to_dict()
        for k in _UNHASHED:
            d.pop(k)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.hashed_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def from_mapping(data: dict[str, Any], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    updates = dict(data)
    if "render" in updates:
        r = updates["render"]
        if not isinstance(r, dict):
            raise ConfigError("render must be a table")
        rknown = set(RenderConfig.__dataclass_fields__)
        bad = sorted(set(r) - rknown)
        if bad:
            raise ConfigError(f"unknown render keys: {bad}")
        try:
            updates["render"] = replace(base.render, **r)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid render config: {exc}") from None
    try:
        return replace(base, **updates)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_mapping(data)
