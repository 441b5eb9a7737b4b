"""Recorded trajectories and their binary file format.

File layout (little-endian)::

    magic "TFTR" | u16 version
    u32 header length | header JSON (task_id, seed, agent_id, success, counts)
    per state:  u32 length | StateSnapshot bytes
    per action: 8 f64 (target px py pz qw qx qy qz, gripper 0/1)
    u32 length | annotations as JSON lines
    32-byte SHA-256 of everything above

Wall-clock timing is deliberately not part of the file so identical runs
produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

from . import annotate
from .annotate import AnnotationRecord
from .errors import ChecksumMismatch, PreconditionError, TrajectoryIoError, VersionMismatch
from .simworld import Action

TRAJ_MAGIC = b"TFTR"
TRAJ_VERSION = 1
_DIGEST = 32


@dataclass(eq=False)
class Trajectory:
    task_id: str
    seed: int
    states: list[bytes]
    actions: list[Action]
    success: bool
    annotations: list[AnnotationRecord] = field(default_factory=list)
    agent_id: str = ""
    wall_time: float = 0.0

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise PreconditionError("a trajectory needs exactly one more state than actions")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {
                "task_id": self.task_id,
                "seed": int(self.seed),
                "agent_id": self.agent_id,
                "success": bool(self.success),
                "n_states": len(self.states),
                "n_actions": len(self.actions),
            },
            sort_keys=True,
        ).encode()
        buf = bytearray(TRAJ_MAGIC + struct.pack("<H", TRAJ_VERSION))
        buf += struct.pack("<I", len(header)) + header
        for s in self.states:
            buf += struct.pack("<I", len(s)) + s
        for a in self.actions:
            buf += struct.pack("<8d", *a.to_list())
        notes = annotate.dumps(self.annotations).encode()
        buf += struct.pack("<I", len(notes)) + notes
        buf += hashlib.sha256(buf).digest()
        return bytes(buf)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Trajectory":
        if len(data) < 6 or data[:4] != TRAJ_MAGIC:
            raise VersionMismatch("not a trajectory file")
        (version,) = struct.unpack_from("<H", data, 4)
        if version != TRAJ_VERSION:
            raise VersionMismatch(f"trajectory version {version} unsupported (reader is v{TRAJ_VERSION})")
        if len(data) < 6 + _DIGEST or hashlib.sha256(data[:-_DIGEST]).digest() != data[-_DIGEST:]:
            raise ChecksumMismatch("trajectory checksum mismatch (truncated or corrupted)")
        try:
            pos = 6
            (hl,) = struct.unpack_from("<I", data, pos)
            pos += 4
            header = json.loads(data[pos : pos + hl])
            pos += hl
            states = []
            for _ in range(header["n_states"]):
                (sl,) = struct.unpack_from("<I", data, pos)
                pos += 4
                states.append(bytes(data[pos : pos + sl]))
                pos += sl
            actions = []
            for _ in range(header["n_actions"]):
                actions.append(Action.from_list(struct.unpack_from("<8d", data, pos)))
                pos += 64
            (nl,) = struct.unpack_from("<I", data, pos)
            pos += 4
            notes = annotate.loads(data[pos : pos + nl].decode("utf-8"))
        except (struct.error, KeyError, ValueError) as exc:
            raise ChecksumMismatch(f"malformed trajectory body: {exc}") from None
        return cls(header["task_id"], header["seed"], states, actions, header["success"], notes, header["agent_id"])


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    try:
        Path(path).write_bytes(traj.to_bytes())
    except OSError as exc:
        raise TrajectoryIoError(f"cannot write {path}: {exc}") from exc


def load_trajectory(path: str | Path) -> Trajectory:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise TrajectoryIoError(f"cannot read {path}: {exc}") from exc
    return Trajectory.from_bytes(data)
