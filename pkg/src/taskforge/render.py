"""Point-cloud observations synthesised from object surfaces.

Recipe per frame: sample surface points of every object, keep those facing
each of the cameras, displace each camera's points by that camera's extrinsic
jitter, fuse, add depth noise along the viewing ray, crop the table plane,
inject ghost points, then resample to a fixed count.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, PreconditionError, TrajectoryIoError, VersionMismatch
from .geometry import quat_from_euler, quat_to_matrix, sample_surface_points
from .simworld import World

N_POINTS = 4096
TABLE_CROP = 0.002
CAMERA_TARGET = np.array([0.45, 0.0, 0.05])
CAMERA_RADIUS = 0.9
CAMERA_HEIGHT = 0.7
FRAME_MAGIC = b"TFOF"
FRAME_VERSION = 1


@dataclass(frozen=True)
class RenderConfig:
    n_cameras: int = 4
    jitter_translation: float = 0.01
    jitter_rotation_deg: float = 2.0
    ghost_fraction: float = 0.05
    boundary_bias: float = 0.70
    shell_thickness: float = 0.10
    depth_noise: float = 0.003
    render_delay: float = 0.0
    n_points: int = N_POINTS
    samples_per_camera: int = 2048
    camera_set: str = "default4"

    def __post_init__(self):
        vals = (self.jitter_translation, self.jitter_rotation_deg, self.ghost_fraction, self.shell_thickness, self.depth_noise, self.render_delay)
        if any(v < 0 for v in vals):
            raise PreconditionError("render ranges must be non-negative")
        if self.ghost_fraction > 0.05:
            raise PreconditionError("ghost fraction is capped at 0.05")
        if not 0.0 <= self.boundary_bias <= 1.0:
            raise PreconditionError("boundary bias must lie in [0, 1]")
        if self.n_cameras < 1 or self.n_points < 1 or self.samples_per_camera < 1:
            raise PreconditionError("camera and point counts must be positive")

    @classmethod
    def noiseless(cls, **kw) -> "RenderConfig":
        return cls(**{"jitter_translation": 0.0, "jitter_rotation_deg": 0.0, "ghost_fraction": 0.0, "depth_noise": 0.0, **kw})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(eq=False)
class ObservationFrame:
    points: np.ndarray  # (n, 3)
    ghost_mask: np.ndarray  # (n,) bool
    proprio: np.ndarray  # px py pz qw qx qy qz gripper
    frame_index: int
    camera_set: str
    jitter: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))  # per camera dx dy dz and roll pitch yaw (rad)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.ghost_mask) != len(self.points):
            raise PreconditionError("malformed observation frame")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ObservationFrame)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.ghost_mask, other.ghost_mask)
            and np.array_equal(self.proprio, other.proprio)
            and self.frame_index == other.frame_index
            and self.camera_set == other.camera_set
            and np.array_equal(self.jitter, other.jitter)
        )

    @property
    def ghost_fraction(self) -> float:
        return float(self.ghost_mask.mean()) if len(self.ghost_mask) else 0.0


def camera_positions(n: int) -> np.ndarray:
    """Nominal camera centres evenly spaced in azimuth around the table."""
    az = 2.0 * math.pi * (np.arange(n) + 0.5) / n
    return np.stack(
        [CAMERA_TARGET[0] + CAMERA_RADIUS * np.cos(az), CAMERA_TARGET[1] + CAMERA_RADIUS * np.sin(az), np.full(n, CAMERA_HEIGHT)],
        axis=1,
    )


def _object_surfaces(world: World, n: int, rng: np.random.Generator):
    """Area-weighted surface samples over all objects in world coordinates."""
    meshes = [(o, world.catalog.assets.mesh(o.mesh_ref)) for o in world.objects]
    areas = np.array([m.total_area * o.scale**2 for o, m in meshes])
    if areas.sum() <= 0:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, int)
    counts = rng.multinomial(n, areas / areas.sum())
    pts, nrm, owner = [], [], []
    for k, ((o, mesh), c) in enumerate(zip(meshes, counts)):
        if c == 0:
            continue
        p, nn, _ = sample_surface_points(mesh, int(c), rng)
        r = quat_to_matrix(o.pose.orientation)
        pts.append((p * o.scale) @ r.T + o.pose.position)
        nrm.append(nn @ r.T)
        owner.append(np.full(int(c), k))
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, int)
    return np.concatenate(pts), np.concatenate(nrm), np.concatenate(owner)


def _ghosts(world: World, cfg: RenderConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    if count == 0:
        return np.zeros((0, 3))
    n_shell = int(rng.binomial(count, cfg.boundary_bias)) if world.objects else 0
    out = []
    if n_shell:
        pts, nrm, owner = _object_surfaces(world, n_shell, rng)
        diag = np.array([np.linalg.norm(hi - lo) for lo, hi in (world.bounds(o) for o in world.objects)])
        d = rng.random(len(pts)) * cfg.shell_thickness * diag[owner]
        out.append(pts + nrm * d[:, None])
    rest = count - sum(len(o) for o in out)
    if rest:
        lo = world.workspace.min.copy()
        lo[2] = max(lo[2], TABLE_CROP)
        out.append(lo + rng.random((rest, 3)) * (world.workspace.max - lo))
    return np.concatenate(out)


def render_observation(world: World, cfg: RenderConfig, rng: np.random.Generator, frame_index: int = 0) -> ObservationFrame:
    cams = camera_positions(cfg.n_cameras)
    rot = math.radians(cfg.jitter_rotation_deg)
    jit = np.concatenate(
        [rng.uniform(-cfg.jitter_translation, cfg.jitter_translation, (cfg.n_cameras, 3)), rng.uniform(-rot, rot, (cfg.n_cameras, 3))],
        axis=1,
    )
    clouds = []
    for c in range(cfg.n_cameras):
        pts, nrm, _ = _object_surfaces(world, cfg.samples_per_camera, rng)
        ray = pts - cams[c]
        front = np.einsum("ij,ij->i", nrm, ray) < 0.0
        p, ray = pts[front], ray[front]
        # points are expressed through the nominal extrinsics of a perturbed camera
        r = quat_to_matrix(quat_from_euler(*jit[c, 3:]))
        p = (p - cams[c]) @ r.T + cams[c] + jit[c, :3]
        if cfg.depth_noise > 0 and len(p):
            dirs = ray / np.linalg.norm(ray, axis=1, keepdims=True)
            p = p + dirs * rng.normal(0.0, cfg.depth_noise, len(p))[:, None]
        clouds.append(p)
    cloud = np.concatenate(clouds) if clouds else np.zeros((0, 3))
    cloud = cloud[cloud[:, 2] >= TABLE_CROP]
    n_ghost = int(rng.integers(0, int(math.floor(cfg.ghost_fraction * cfg.n_points)) + 1)) if cfg.ghost_fraction > 0 else 0
    need = cfg.n_points - n_ghost
    if len(cloud) == 0:
        cloud = np.tile(world.eef_pose.position, (1, 1))
    idx = rng.choice(len(cloud), need, replace=len(cloud) < need)
    ghosts = _ghosts(world, cfg, n_ghost, rng)
    pts = np.concatenate([cloud[idx], ghosts])
    mask = np.concatenate([np.zeros(need, bool), np.ones(len(ghosts), bool)])
    perm = rng.permutation(len(pts))
    proprio = np.array([*world.eef_pose.to_list(), 1.0 if world.gripper_closed() else 0.0])
    if cfg.render_delay > 0:
        time.sleep(cfg.render_delay)
    return ObservationFrame(pts[perm], mask[perm], proprio, frame_index, cfg.camera_set, jit)


# ----------------------------------------------------------------------------- frame files


def frames_to_bytes(frames: list[ObservationFrame]) -> bytes:
    """``TFOF`` v1: header JSON, then per frame points, ghost mask, proprio, jitter; SHA-256 trailer."""
    header = json.dumps({"n_frames": len(frames), "camera_set": frames[0].camera_set if frames else ""}, sort_keys=True).encode()
    buf = bytearray(FRAME_MAGIC + struct.pack("<HI", FRAME_VERSION, len(header)) + header)
    for f in frames:
        buf += struct.pack("<iII", f.frame_index, len(f.points), len(f.jitter))
        buf += np.ascontiguousarray(f.points, "<f8").tobytes()
        buf += np.packbits(f.ghost_mask).tobytes()
        buf += np.ascontiguousarray(f.proprio, "<f8").tobytes()
        buf += np.ascontiguousarray(f.jitter, "<f8").tobytes()
    buf += hashlib.sha256(buf).digest()
    return bytes(buf)


def frames_from_bytes(data: bytes) -> list[ObservationFrame]:
    if data[:4] != FRAME_MAGIC:
        raise VersionMismatch("not a frame file")
    version, hl = struct.unpack_from("<HI", data, 4)
    if version != FRAME_VERSION:
        raise VersionMismatch(f"frame file version {version} unsupported")
    if hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise ChecksumMismatch("frame file checksum mismatch")
    h = json.loads(data[10 : 10 + hl])
    pos = 10 + hl
    out = []
    for _ in range(h["n_frames"]):
        fi, n, nj = struct.unpack_from("<iII", data, pos)
        pos += 12
        pts = np.frombuffer(data, "<f8", 3 * n, pos).reshape(n, 3).copy()
        pos += 24 * n
        nb = (n + 7) // 8
        mask = np.unpackbits(np.frombuffer(data, np.uint8, nb, pos))[:n].astype(bool)
        pos += nb
        proprio = np.frombuffer(data, "<f8", 8, pos).copy()
        pos += 64
        jit = np.frombuffer(data, "<f8", 6 * nj, pos).reshape(nj, 6).copy()
        pos += 48 * nj
        out.append(ObservationFrame(pts, mask, proprio, fi, h["camera_set"], jit))
    return out


def save_frames(frames: list[ObservationFrame], path: str | Path) -> None:
    try:
        Path(path).write_bytes(frames_to_bytes(frames))
    except OSError as exc:
        raise TrajectoryIoError(f"cannot write {path}: {exc}") from exc


def load_frames(path: str | Path) -> list[ObservationFrame]:
    try:
        return frames_from_bytes(Path(path).read_bytes())
    except OSError as exc:
        raise TrajectoryIoError(f"cannot read {path}: {exc}") from exc
