"""Grasp-candidate sampling on object meshes with batched rejection.

A candidate places the right finger (the end-effector frame) just off a
surface point, along a perturbed surface normal. The gripper z-axis is drawn
uniformly from a cone around an axis hint, and the closing direction (y) is
the inward normal projected orthogonal to z.

Batched IK is replaced by a surrogate reachability check: the finger must be
inside the workspace and the approach must point down by at least
``cos(75 deg)``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .errors import PreconditionError, SkillFailed
from .geometry import (
    Aabb,
    Pose,
    TriMesh,
    boxes_overlap_batch,
    box_world,
    is_unit,
    matrix_to_quat,
    orthonormal_basis,
    quat_to_matrix,
    sample_cone,
    sample_surface_points,
)

if TYPE_CHECKING:
    from .simworld import World

DEFAULT_CANDIDATES = 1024
FINGER_OFFSET = 0.005
NORMAL_PERTURBATION = math.radians(15.0)
# gripper body: a box behind the finger frame along -z
GRIPPER_BOX_OFFSET = np.array([0.0, 0.0, -0.035])
GRIPPER_BOX_HALF = np.array([0.012, 0.012, 0.04])
REACH_COS = math.cos(math.radians(75.0))
REASONS = ("collision", "invalid_orientation", "unreachable")


@dataclass(frozen=True)
class AxisHint:
    gripper_z_axis: tuple[float, float, float]
    cone_half_angle: float

    def __post_init__(self):
        axis = np.asarray(self.gripper_z_axis, dtype=float)
        if axis.shape != (3,) or not is_unit(axis, 1e-6):
            raise PreconditionError("hint axis must be a unit 3-vector")
        if not 0.0 < self.cone_half_angle <= math.pi / 2:
            raise PreconditionError("cone half-angle must lie in (0, pi/2]")
        object.__setattr__(self, "gripper_z_axis", tuple(float(v) for v in axis))

    @property
    def axis(self) -> np.ndarray:
        return np.array(self.gripper_z_axis)


# per-family offline hints standing in for model-produced ones
DOWN_HINT = AxisHint((0.0, 0.0, -1.0), math.radians(30.0))
DRAWER_HINT = AxisHint((1.0, 0.0, 0.0), math.radians(20.0))


def default_hint(family: str | None) -> AxisHint:
    return DRAWER_HINT if family == "drawer_opening" else DOWN_HINT


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    contact_point: np.ndarray
    approach_dir: np.ndarray
    gripper_pose: Pose
    tri_index: int
    valid: bool = True
    rejection_reason: str | None = None

    def __post_init__(self):
        if self.valid and self.rejection_reason is not None:
            raise PreconditionError("valid candidates carry no rejection reason")
        if self.rejection_reason is not None and self.rejection_reason not in REASONS:
            raise PreconditionError(f"unknown rejection reason {self.rejection_reason!r}")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GraspCandidate)
            and np.array_equal(self.contact_point, other.contact_point)
            and np.array_equal(self.approach_dir, other.approach_dir)
            and self.gripper_pose == other.gripper_pose
            and self.tri_index == other.tri_index
            and self.valid == other.valid
            and self.rejection_reason == other.rejection_reason
        )

    def to_dict(self) -> dict:
        return {
            "contact_point": self.contact_point.tolist(),
            "approach_dir": self.approach_dir.tolist(),
            "gripper_pose": self.gripper_pose.to_list(),
            "tri_index": self.tri_index,
            "valid": self.valid,
            "rejection_reason": self.rejection_reason,
        }


def perturb_batch(normals: np.ndarray, max_angle: float, rng: np.random.Generator) -> np.ndarray:
    """Row-wise uniform cap perturbation of unit normals (batched ``perturb_direction``)."""
    if not 0.0 <= max_angle < math.pi / 2:
        raise PreconditionError("max_angle must lie in [0, pi/2)")
    n = len(normals)
    if max_angle == 0.0 or n == 0:
        return normals.copy()
    helper = np.where(np.abs(normals[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    u = np.cross(normals, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    w = np.cross(normals, u)
    cos_t = 1.0 - rng.random(n) * (1.0 - math.cos(max_angle))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = rng.random(n) * (2.0 * math.pi)
    out = cos_t[:, None] * normals + (sin_t * np.cos(phi))[:, None] * u + (sin_t * np.sin(phi))[:, None] * w
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _frames(z: np.ndarray, inward: np.ndarray) -> np.ndarray:
    """Rotation matrices with columns (x, y, z); y is ``inward`` made orthogonal to z."""
    y = inward - np.sum(inward * z, axis=1, keepdims=True) * z
    norms = np.linalg.norm(y, axis=1)
    bad = norms < 1e-6
    if np.any(bad):
        for i in np.flatnonzero(bad):
            y[i] = orthonormal_basis(z[i])[0]
        norms = np.linalg.norm(y, axis=1)
    y /= norms[:, None]
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=2)


def sample_candidates(
    mesh: TriMesh,
    object_pose: Pose,
    n: int = DEFAULT_CANDIDATES,
    hint: AxisHint = DOWN_HINT,
    rng: np.random.Generator | None = None,
    scale: float = 1.0,
    perturbation: float = NORMAL_PERTURBATION,
) -> list[GraspCandidate]:
    """``n`` pre-rejection candidates; deterministic in (mesh, pose, n, hint, rng state)."""
    if n < 1:
        raise PreconditionError("n must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    pts, normals, tri = sample_surface_points(mesh, n, rng)
    rot = quat_to_matrix(object_pose.orientation)
    contacts = (pts * scale) @ rot.T + object_pose.position
    world_normals = normals @ rot.T
    perturbed = perturb_batch(world_normals, perturbation, rng)
    fingers = contacts + FINGER_OFFSET * perturbed
    z = sample_cone(hint.axis, hint.cone_half_angle, n, rng)
    mats = _frames(z, -perturbed)
    out = []
    for i in range(n):
        pose = Pose(fingers[i], matrix_to_quat(mats[i]))
        out.append(GraspCandidate(contacts[i], z[i].copy(), pose, int(tri[i])))
    return out


def reachability_check(gripper_pose: Pose, workspace: Aabb, hint: AxisHint | None = None) -> bool:
    """Workspace containment plus a downward-approach bound (IK surrogate)."""
    if not workspace.contains(gripper_pose.position):
        return False
    z = quat_to_matrix(gripper_pose.orientation)[:, 2]
    return bool(-z[2] >= REACH_COS)


def gripper_boxes(candidates: list[GraspCandidate]) -> tuple[np.ndarray, np.ndarray]:
    """World centres and rotations of each candidate's gripper collider."""
    rots = np.array([quat_to_matrix(c.gripper_pose.orientation) for c in candidates]).reshape(-1, 3, 3)
    pos = np.array([c.gripper_pose.position for c in candidates]).reshape(-1, 3)
    centres = pos + rots @ GRIPPER_BOX_OFFSET
    return centres, rots


def reject_invalid(
    candidates: list[GraspCandidate],
    world: "World",
    target: str,
    hint: AxisHint = DOWN_HINT,
) -> list[GraspCandidate]:
    """Flag candidates that collide, leave the hint cone, or fail reachability.

    Checks run in that order and the first failure names the reason. Order of
    the input list is preserved.
    """
    if not candidates:
        return []
    if target not in world.index:
        raise PreconditionError(f"object {target!r} is not in the world")
    centres, rots = gripper_boxes(candidates)
    half = GRIPPER_BOX_HALF
    # table: lowest corner below z = 0
    reach_down = np.abs(rots[:, 2, :]) @ half
    collide = centres[:, 2] - reach_down < 0.0
    for o in world.objects:
        if o.name == target:
            continue
        cb, rb, hb = box_world(world.shape(o), o.pose)
        collide |= boxes_overlap_batch(centres, rots, half, cb, rb, hb)
    z = np.array([c.approach_dir for c in candidates])
    cos_hint = np.clip(z @ hint.axis, -1.0, 1.0)
    bad_orient = np.arccos(cos_hint) > hint.cone_half_angle + 1e-9
    pos = np.array([c.gripper_pose.position for c in candidates])
    inside = np.all((pos >= world.workspace.min) & (pos <= world.workspace.max), axis=1)
    down = -rots[:, 2, 2] >= REACH_COS
    unreachable = ~(inside & down)
    out = []
    for i, c in enumerate(candidates):
        reason = "collision" if collide[i] else "invalid_orientation" if bad_orient[i] else "unreachable" if unreachable[i] else None
        out.append(replace(c, valid=reason is None, rejection_reason=reason))
    return out


def sample_valid(
    world: "World", target: str, hint: AxisHint = DOWN_HINT, n: int = DEFAULT_CANDIDATES, rng: np.random.Generator | None = None
) -> list[GraspCandidate]:
    o = world.obj(target)
    mesh = world.catalog.assets.mesh(o.mesh_ref)
    cands = sample_candidates(mesh, o.pose, n, hint, rng, scale=o.scale)
    return [c for c in reject_invalid(cands, world, target, hint) if c.valid]


def get_grasp_pose(
    world: "World", target: str, hint: AxisHint = DOWN_HINT, rng: np.random.Generator | None = None, n: int = DEFAULT_CANDIDATES
) -> GraspCandidate:
    """Best valid candidate by alignment with the hint axis (ties: first sampled)."""
    valid = sample_valid(world, target, hint, n, rng)
    if not valid:
        raise SkillFailed(f"no valid grasp candidate on {target!r}")
    scores = np.array([c.approach_dir @ hint.axis for c in valid])
    return valid[int(np.argmax(scores))]


def decay_schedule(success_rate: float) -> float:
    """Fraction of environments initialised from contact samples."""
    if not 0.0 <= success_rate <= 1.0:
        raise PreconditionError("success rate must lie in [0, 1]")
    return min(max(1.0 - success_rate, 0.1), 1.0)


def summarize(candidates: Iterable[GraspCandidate]) -> dict:
    cands = list(candidates)
    reasons = Counter(c.rejection_reason for c in cands if not c.valid)
    n = len(cands)
    return {
        "candidates": n,
        "valid": sum(c.valid for c in cands),
        "valid_fraction": (sum(c.valid for c in cands) / n) if n else 0.0,
        "rejections": {r: reasons.get(r, 0) for r in REASONS},
    }


def export_jsonl(candidates: Iterable[GraspCandidate], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in candidates:
            fh.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")
