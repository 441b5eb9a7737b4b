"""Shared builders for tests: template tasks and fault-injected programs."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.transform import Rotation

from taskforge import simworld, taskgen
from taskforge.objectdb import default_catalog
from taskforge.simworld import WorldFactory
from taskforge.templates import FAMILIES, OfflineProvider


def make_task(family: str, seed: int):
    catalog = default_catalog()
    objs = taskgen.sample_objects(catalog, family, seed)
    return taskgen.propose_task_object_based(objs, family, OfflineProvider(), seed, catalog)


def clean_tasks() -> list:
    """Ten template tasks, two per family."""
    return [make_task(f, s) for f in FAMILIES for s in (0, 1)]


def _reset_faults(task) -> list[str]:
    o = task.objects[0]
    lines = task.program.reset.splitlines()
    drawer = next((k for k in task.objects if default_catalog()[k].articulated), None)
    stack_all = "\n".join(f"place({k}, x=0.5, y=0.0)" for k in task.objects)
    return [
        task.program.reset.replace(o, "ghost_object", 1),
        "\n".join([f"place({o}, x=(2.0, 2.1), y=(0.0, 0.1))"] + [l for l in lines if not l.startswith(f"place({o},")]),
        task.program.reset + "\nplace((",
        "\n".join([f"place({o}, x=(0.6, 0.4), y=0.0)"] + [l for l in lines if not l.startswith(f"place({o},")]),
        task.program.reset + "\n" + lines[0],
        "\n".join(l for l in lines if not l.startswith(("place", "fix")) or o not in l),
        "\n".join([f"place({o})"] + [l for l in lines if not l.startswith(f"place({o},")]),
        task.program.reset + f"\nspawn({o})",
        stack_all if len(task.objects) > 1 and drawer is None else f"place({o}, x=0.5, y=(0.0, 0.0), yaw=(1, 0))",
        f"fix({drawer}, at=(0.6, 0.0), joint=5.0)" if drawer else task.program.reset.replace(f"place({o},", f"fix({o}, at=0.5, x=", 1),
    ]


def _success_faults(task) -> list[str]:
    o = task.objects[0]
    return [
        "holding(ghost_object)",
        f"holding({o}",
        f"pos({o})",
        f"{o}.x > 0",
        f"dist({o}) > 0",
        f"1 / (x({o}) - x({o})) > 0",
        f"frobnicate({o}) > 0",
        "",
        f"joint({o}) > 0" if not default_catalog()[o].articulated else "joint(ghost_object) > 0",
        f"sqrt(-1 - z({o})) > 0",
    ]


def fault_suite() -> list[tuple[str, object, object]]:
    """(expected failing section or None, program, factory): 10 reset faults, 10 check_success faults, 10 clean."""
    catalog = default_catalog()
    tasks = clean_tasks()
    cases = []
    for i, task in enumerate(tasks):
        factory = WorldFactory(task.objects, catalog)
        cases.append((None, task.program, factory))
        cases.append(("reset", task.program.replace(reset=_reset_faults(task)[i]), factory))
        cases.append(("check_success", task.program.replace(check_success=_success_faults(task)[i]), factory))
    return cases


# ----------------------------------------------------------------------------- collision oracle


def boxes_intersect_lp(ca, ra, ha, cb, rb, hb) -> bool:
    """Two oriented boxes intersect iff a point satisfies both slab systems."""
    a_ub, b_ub = [], []
    for c, r, h in ((ca, ra, ha), (cb, rb, hb)):
        for k in range(3):
            axis = r[:, k]
            a_ub += [axis, -axis]
            b_ub += [h[k] + axis @ c, h[k] - axis @ c]
    res = linprog(np.zeros(3), A_ub=np.array(a_ub), b_ub=np.array(b_ub), bounds=[(None, None)] * 3, method="highs")
    return res.status == 0


def rot_of(quat_wxyz) -> np.ndarray:
    w, x, y, z = quat_wxyz
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def object_box(world, obj):
    """World (centre, rotation, half-extents) of the object's vertex bounding box."""
    verts = world.catalog.assets.mesh(obj.mesh_ref).vertices * obj.scale
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    rot = rot_of(obj.pose.orientation)
    return obj.pose.position + rot @ ((lo + hi) / 2), rot, (hi - lo) / 2


def gripper_box(candidate, offset, half):
    rot = rot_of(candidate.gripper_pose.orientation)
    return candidate.gripper_pose.position + rot @ offset, rot, np.asarray(half)


def grasp_collides(world, target, candidate, offset, half) -> bool:
    c, r, h = gripper_box(candidate, offset, half)
    corners = np.array([c + r @ (np.array(s) * h) for s in itertools.product((-1, 1), repeat=3)])
    if corners[:, 2].min() < 0.0:
        return True
    return any(boxes_intersect_lp(c, r, h, *object_box(world, o)) for o in world.objects if o.name != target)


def builtin_scenes() -> list:
    """Ten reset worlds, two per family, each with its primary object."""
    out = []
    for task in clean_tasks():
        world = simworld.reset(task, 0)
        out.append((task, world, next(iter(task.roles.values()))))
    return out


# ----------------------------------------------------------------------------- surface oracle


def surface_distance_bound(world, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Per point, min over object triangles of the plane distance where the projection lies in the triangle.

    This bounds the true point-to-surface distance from above (inf if no
    triangle contains the projection).
    """
    best = np.full(len(points), np.inf)
    for o in world.objects:
        mesh = world.catalog.assets.mesh(o.mesh_ref)
        local = (points - o.pose.position) @ rot_of(o.pose.orientation) / o.scale
        a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        for lo in range(0, len(local), 512):
            p = local[lo : lo + 512, None, :]
            d = np.einsum("ptk,tk->pt", p - a, n)
            q = p - d[..., None] * n
            # barycentric coordinates of the projection
            v0, v1, v2 = b - a, c - a, q - a
            d00, d01, d11 = (v0 * v0).sum(1), (v0 * v1).sum(1), (v1 * v1).sum(1)
            d20, d21 = (v2 * v0).sum(-1), (v2 * v1).sum(-1)
            den = d00 * d11 - d01 * d01
            v = (d11 * d20 - d01 * d21) / den
            w = (d00 * d21 - d01 * d20) / den
            inside = (v >= -tol) & (w >= -tol) & (v + w <= 1 + tol)
            dist = np.where(inside, np.abs(d) * o.scale, np.inf).min(axis=1)
            best[lo : lo + 512] = np.minimum(best[lo : lo + 512], dist)
    return best
