"""Exception hierarchy shared by every subsystem."""

from __future__ import annotations


class TaskForgeError(Exception):
    """Base class for all package errors."""


class ParseError(TaskForgeError):
    pass


class EmptyMesh(TaskForgeError):
    pass


class PreconditionError(TaskForgeError, ValueError):
    pass


class InvalidDsl(TaskForgeError):
    """A DSL section failed to parse, resolve or evaluate.

    ``section`` names the offending program section when known and
    ``error_class`` is a short machine-readable category such as
    ``"unknown symbol"`` or ``"syntax error"``.
    """

    def __init__(self, message: str, section: str | None = None, error_class: str = "invalid"):
        super().__init__(message)
        self.section = section
        self.error_class = error_class


class DslRejected(InvalidDsl):
    pass


class PlacementInfeasible(TaskForgeError):
    pass


class AssetMismatch(TaskForgeError):
    pass


class ProviderError(TaskForgeError):
    pass


class EvaluatorError(TaskForgeError):
    pass


class NoMatchingAsset(TaskForgeError):
    pass


class RewardEvalError(TaskForgeError):
    def __init__(self, message: str, candidate_id: str | None = None):
        super().__init__(message)
        self.candidate_id = candidate_id


class SkillMissing(TaskForgeError):
    pass


class SkillFailed(TaskForgeError):
    pass


class AttemptCapExhausted(TaskForgeError):
    def __init__(self, message: str, trajectories=None, attempted: int = 0, succeeded: int = 0, partial=None):
        super().__init__(message)
        self.trajectories = trajectories or []
        self.attempted = attempted
        self.succeeded = succeeded
        self.partial = partial


class ReplayDivergence(TaskForgeError):
    pass


class TrajectoryIoError(TaskForgeError, OSError):
    pass


class VersionMismatch(TaskForgeError):
    pass


class ChecksumMismatch(TaskForgeError):
    pass


class SchemaError(TaskForgeError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class CorpusTooSmall(TaskForgeError, ValueError):
    pass


class LengthMismatch(TaskForgeError, ValueError):
    pass


class ConfigError(TaskForgeError):
    pass
