"""Deterministic quasi-static tabletop world.

Physics is kinematic: grasped objects move rigidly with the end effector, a
closed gripper sweeping through a free object pushes it translationally, and
released objects settle instantly onto their support. Every state change goes
through :meth:`World.step`, which is what makes action replay bit-exact.

The end-effector frame is the right finger of a parallel gripper; its
collider is a sphere of radius :data:`GRIPPER_RADIUS`.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from . import dsl
from .errors import AssetMismatch, InvalidDsl, PlacementInfeasible, PreconditionError
from .geometry import (
    DOWN_QUAT,
    Aabb,
    MeshShape,
    Pose,
    Sphere,
    box_world,
    collide,
    point_box_distance,
    quat_angle,
    quat_from_axis_angle,
    quat_mul,
    quat_to_matrix,
    slerp,
)
from .objectdb import Catalog, default_catalog

if TYPE_CHECKING:
    from .taskgen import TaskSpec

STEP_SIZE = 0.01
ROT_STEP = 0.05
GRASP_TOL = 0.015
GRIPPER_RADIUS = 0.01
EPISODE_CAP = 2000
PLACEMENT_RETRIES = 100
PLACEMENT_MARGIN = 0.005
HOME = np.array([0.3, 0.0, 0.4])
DEFAULT_WORKSPACE = Aabb(np.array([-0.1, -0.5, 0.0]), np.array([0.9, 0.5, 0.8]))
TABLE_Z = 0.0

SNAPSHOT_MAGIC = b"TFWS"
SNAPSHOT_VERSION = 1


@dataclass
class Joint:
    """Prismatic joint; ``axis`` and ``handle`` are in the object frame (handle at q = 0)."""

    axis: np.ndarray
    lo: float
    hi: float
    position: float
    handle: np.ndarray

    def clamp(self, q: float) -> float:
        return min(max(q, self.lo), self.hi)


@dataclass
class ObjectInstance:
    object_id: int
    name: str
    mesh_ref: str
    pose: Pose
    scale: float
    fixed: bool
    articulation: Joint | None = None
    nominal_scale: float = 1.0


@dataclass(frozen=True)
class SkillResult:
    ok: bool
    reason: str  # reached | collision_abort | unreachable | timeout
    steps_taken: int

    def __post_init__(self):
        if self.ok and self.reason != "reached":
            raise PreconditionError("ok results must have reason 'reached'")


@dataclass(frozen=True)
class Action:
    """One low-level command: absolute end-effector target and gripper state."""

    target: Pose
    gripper_closed: bool

    def to_list(self) -> list[float]:
        return self.target.to_list() + [1.0 if self.gripper_closed else 0.0]

    @classmethod
    def from_list(cls, v) -> "Action":
        return cls(Pose(v[:3], v[3:7], canonical=True), bool(v[7] > 0.5))


@dataclass
class Recorder:
    """Per-rollout buffer of actions, post-step state snapshots and annotations."""

    states: list[bytes] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)
    annotations: list = field(default_factory=list)
    on_state: Callable[["World"], None] | None = field(default=None, repr=False)


@dataclass(frozen=True)
class StepOutcome:
    status: str  # ok | collision | unreachable
    attached: int | None = None


def _drawer_joint(rec, extent) -> Joint | None:
    for j in rec.joints:
        if j.get("type") == "prismatic":
            axis = np.asarray(j.get("axis", [-1.0, 0.0, 0.0]), dtype=float)
            lo, hi = (float(v) for v in j["range"])
            # handle sits 3 cm proud of the face the drawer slides out of
            handle = np.asarray(j.get("handle", 0.5 * np.abs(axis) * extent * np.sign(axis) + 0.03 * axis), dtype=float)
            if "handle" not in j:
                handle = handle + np.array([0.0, 0.0, 0.25 * extent[2]])
            return Joint(axis, lo, hi, lo, handle)
    return None


class World:
    """Mutable simulation state. Not thread-safe; one world per worker."""

    def __init__(self, task: "TaskSpec", program: dsl.CompiledProgram, catalog: Catalog, workspace: Aabb):
        self.task = task
        self.program = program
        self.catalog = catalog
        self.workspace = workspace
        self.objects: list[ObjectInstance] = []
        self.index: dict[str, int] = {}
        self.initial_positions: dict[str, np.ndarray] = {}
        self.eef_pose = Pose(HOME, DOWN_QUAT, canonical=True)
        self.gripper = "open"
        self.attached: int | None = None
        self.grasp_transform: Pose | None = None
        self.held_handle: int | None = None
        self.step_count = 0
        self.noise_scale = 1.0
        self.rng = np.random.default_rng(0)
        self.recorder: Recorder | None = None
        self._shapes: dict[tuple[int, float], MeshShape] = {}
        self._bounds_cache: dict[int, tuple] = {}
        self._gripper_shape = Sphere(GRIPPER_RADIUS)

    # ------------------------------------------------------------------ construction helpers

    def _add_object(self, name: str, pose: Pose, fixed: bool) -> ObjectInstance:
        rec = self.catalog[name]
        obj = ObjectInstance(len(self.objects), name, rec.mesh, pose, 1.0, fixed, _drawer_joint(rec, np.array(rec.extent)))
        self.objects.append(obj)
        self.index[name] = obj.object_id
        return obj

    def shape(self, obj: ObjectInstance) -> MeshShape:
        key = (obj.object_id, obj.scale)
        s = self._shapes.get(key)
        if s is None:
            s = MeshShape.from_mesh(self.catalog.assets.mesh(obj.mesh_ref), obj.scale)
            self._shapes[key] = s
        return s

    def bounds(self, obj: ObjectInstance) -> tuple[np.ndarray, np.ndarray]:
        hit = self._bounds_cache.get(obj.object_id)
        if hit is not None and hit[0] is obj.pose and hit[2] == obj.scale:
            return hit[1]
        mesh = self.catalog.assets.mesh(obj.mesh_ref)
        pts = obj.pose.transform_points(mesh.vertices * obj.scale)
        b = (pts.min(axis=0), pts.max(axis=0))
        self._bounds_cache[obj.object_id] = (obj.pose, b, obj.scale)
        return b

    def rest_z(self, obj: ObjectInstance, support: float = TABLE_Z) -> float:
        lo, _ = self.bounds(obj)
        return support + (obj.pose.position[2] - lo[2])

    def support_height(self, obj: ObjectInstance) -> float:
        lo, hi = self.bounds(obj)
        me = Aabb(lo, hi)
        best = TABLE_Z
        for other in self.objects:
            if other.object_id == obj.object_id or other.object_id == self.attached:
                continue
            olo, ohi = self.bounds(other)
            if me.overlaps_xy(Aabb(olo, ohi)) and ohi[2] <= lo[2] + 1e-6:
                best = max(best, float(ohi[2]))
        return best

    def settle(self, obj: ObjectInstance) -> None:
        if obj.fixed or obj.object_id == self.attached:
            return
        z = self.rest_z(obj, self.support_height(obj))
        if z != obj.pose.position[2]:
            p = obj.pose.position.copy()
            p[2] = z
            obj.pose = obj.pose.with_position(p)

    def handle_position(self, obj: ObjectInstance) -> np.ndarray:
        j = obj.articulation
        local = (j.handle + j.axis * j.position) * obj.scale
        return obj.pose.transform_points(local[None])[0]

    # ------------------------------------------------------------------ DSL context

    def obj(self, name: str) -> ObjectInstance:
        try:
            return self.objects[self.index[name]]
        except KeyError:
            raise InvalidDsl(f"unknown object {name!r}", error_class="unknown symbol") from None

    def obj_position(self, name: str) -> np.ndarray:
        return self.obj(name).pose.position

    def obj_initial_position(self, name: str) -> np.ndarray:
        return self.initial_positions[name]

    def obj_orientation(self, name: str) -> np.ndarray:
        return self.obj(name).pose.orientation

    def obj_joint(self, name: str) -> float:
        o = self.obj(name)
        if o.articulation is None:
            raise InvalidDsl(f"object {name!r} has no joint", error_class="type error")
        return o.articulation.position

    def obj_bounds(self, name: str):
        return self.bounds(self.obj(name))

    def is_holding(self, name: str) -> bool:
        return self.attached is not None and self.attached == self.index.get(name)

    def eef_position(self) -> np.ndarray:
        return self.eef_pose.position

    def eef_orientation(self) -> np.ndarray:
        return self.eef_pose.orientation

    def gripper_closed(self) -> bool:
        return self.gripper == "closed"

    # ------------------------------------------------------------------ stepping

    def _fixed_hit(self, p: np.ndarray) -> bool:
        gp = Pose(p, canonical=True)
        for o in self.objects:
            if o.fixed and collide(self._gripper_shape, gp, self.shape(o), o.pose):
                return True
        return False

    def _push(self, p: np.ndarray, delta: np.ndarray) -> None:
        gp = Pose(p, canonical=True)
        dxy = np.array([delta[0], delta[1], 0.0])
        if not dxy.any():
            return
        for o in self.objects:
            if o.fixed or o.object_id == self.attached:
                continue
            if collide(self._gripper_shape, gp, self.shape(o), o.pose):
                o.pose = o.pose.with_position(o.pose.position + dxy)
                self.settle(o)

    def _try_attach(self) -> int | None:
        p = self.eef_pose.position
        best, best_d = None, GRASP_TOL
        for o in self.objects:
            if o.fixed:
                continue
            d = point_box_distance(p, self.shape(o), o.pose)
            if d <= best_d and (best is None or d < best_d):
                best, best_d = o.object_id, d
        if best is not None:
            self.attached = best
            self.grasp_transform = self.eef_pose.inverse().compose(self.objects[best].pose)
            return best
        for o in self.objects:
            if o.articulation is not None and np.linalg.norm(self.handle_position(o) - p) <= GRASP_TOL:
                self.held_handle = o.object_id
                break
        return None

    def _release(self) -> None:
        if self.attached is not None:
            obj = self.objects[self.attached]
            self.attached = None
            self.grasp_transform = None
            self.settle(obj)
        self.held_handle = None

    def step(self, action: Action) -> StepOutcome:
        """Apply one action. Motion first, then the gripper command."""
        status = "ok"
        target = action.target
        if not self.workspace.contains(target.position):
            status = "unreachable"
        else:
            start = self.eef_pose
            delta = target.position - start.position
            dist = math.sqrt(float(delta @ delta))
            n = max(1, math.ceil(dist / STEP_SIZE - 1e-9))
            prev = start.position
            for i in range(1, n + 1):
                t = i / n
                p = target.position if i == n else start.position + t * delta
                if self._fixed_hit(p):
                    status = "collision"
                    break
                q = target.orientation if i == n else slerp(start.orientation, target.orientation, t)
                if self.gripper == "closed" and self.attached is None and self.held_handle is None:
                    self._push(p, p - prev)
                self.eef_pose = Pose(p, q, canonical=True)
                self._follow(p - prev)
                prev = p
        want_closed = action.gripper_closed
        if want_closed and self.gripper == "open":
            self.gripper = "closed"
            self._try_attach()
        elif not want_closed and self.gripper == "closed":
            self.gripper = "open"
            self._release()
        self.step_count += 1
        if self.recorder is not None:
            self.recorder.actions.append(action)
            self.recorder.states.append(self.get_state().to_bytes())
            if self.recorder.on_state is not None:
                self.recorder.on_state(self)
        return StepOutcome(status, self.attached)

    def _follow(self, delta: np.ndarray) -> None:
        if self.attached is not None:
            self.objects[self.attached].pose = self.eef_pose.compose(self.grasp_transform)
        if self.held_handle is not None:
            o = self.objects[self.held_handle]
            j = o.articulation
            axis_w = quat_to_matrix(o.pose.orientation) @ j.axis
            j.position = j.clamp(j.position + float(delta @ axis_w) / o.scale)

    # ------------------------------------------------------------------ state snapshots

    def start_recording(self, on_state: Callable[["World"], None] | None = None) -> Recorder:
        """Record from the current state; ``on_state`` sees every recorded state."""
        self.recorder = Recorder(states=[self.get_state().to_bytes()], on_state=on_state)
        if on_state is not None:
            on_state(self)
        return self.recorder

    def stop_recording(self) -> Recorder | None:
        rec, self.recorder = self.recorder, None
        return rec

    def holding_name(self) -> str | None:
        return None if self.attached is None else self.objects[self.attached].name

    def asset_fingerprint(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        for o in self.objects:
            h.update(f"{o.object_id}:{o.name}:{o.mesh_ref};".encode())
        return int.from_bytes(h.digest(), "little")

    def get_state(self) -> "StateSnapshot":
        return StateSnapshot.capture(self)

    def set_state(self, snap: "StateSnapshot | bytes") -> None:
        if isinstance(snap, (bytes, bytearray)):
            snap = StateSnapshot.from_bytes(bytes(snap))
        snap.restore(self)

    def state_hash(self) -> str:
        return hashlib.sha256(self.get_state().to_bytes()).hexdigest()


# --------------------------------------------------------------------------- snapshot format

_OBJ_FMT = "<i7dd B d 3d"
_HEAD_FMT = "<4sHIQ"
_TAIL_FMT = "<7dBi7diQ6dd"


@dataclass(frozen=True)
class StateSnapshot:
    """Binary world state.

    Layout (little-endian), after a ``u32`` byte-length prefix::

        magic "TFWS" | u16 version | u32 n_objects | u64 asset fingerprint
        per object: i32 id | 7 f64 pose (px py pz qw qx qy qz) | f64 scale
                    | u8 fixed | f64 joint position (NaN if none) | 3 f64 initial position
        7 f64 eef pose | u8 gripper (1 = closed) | i32 attached (-1 none)
        7 f64 grasp transform | i32 held handle (-1 none) | u64 step count
        6 f64 workspace min/max | f64 observation-noise scale
        rng: u16 length + JSON of the PCG64 bit-generator state
    """

    data: bytes

    def to_bytes(self) -> bytes:
        return self.data

    @classmethod
    def from_bytes(cls, data: bytes) -> "StateSnapshot":
        (n,) = struct.unpack_from("<I", data, 0)
        if n + 4 != len(data):
            raise AssetMismatch("snapshot length prefix does not match payload")
        if data[4:8] != SNAPSHOT_MAGIC:
            raise AssetMismatch("not a world snapshot")
        return cls(bytes(data))

    @classmethod
    def capture(cls, w: World) -> "StateSnapshot":
        body = bytearray(struct.pack(_HEAD_FMT, SNAPSHOT_MAGIC, SNAPSHOT_VERSION, len(w.objects), w.asset_fingerprint()))
        for o in w.objects:
            jpos = o.articulation.position if o.articulation is not None else math.nan
            body += struct.pack(
                _OBJ_FMT, o.object_id, *o.pose.to_list(), o.scale, int(o.fixed), jpos, *w.initial_positions[o.name]
            )
        gt = w.grasp_transform.to_list() if w.grasp_transform is not None else [0.0] * 7
        body += struct.pack(
            _TAIL_FMT,
            *w.eef_pose.to_list(),
            int(w.gripper == "closed"),
            -1 if w.attached is None else w.attached,
            *gt,
            -1 if w.held_handle is None else w.held_handle,
            w.step_count,
            *w.workspace.min,
            *w.workspace.max,
            w.noise_scale,
        )
        st = w.rng.bit_generator.state
        rng = f'{st["state"]["state"]},{st["state"]["inc"]},{st["has_uint32"]},{st["uinteger"]}'.encode()
        body += struct.pack("<H", len(rng)) + rng
        return cls(struct.pack("<I", len(body)) + bytes(body))

    def restore(self, w: World) -> None:
        data = self.data
        pos = 4
        magic, version, n, fp = struct.unpack_from(_HEAD_FMT, data, pos)
        pos += struct.calcsize(_HEAD_FMT)
        if version != SNAPSHOT_VERSION:
            raise AssetMismatch(f"snapshot version {version} unsupported")
        if n != len(w.objects) or fp != w.asset_fingerprint():
            raise AssetMismatch("snapshot was taken in a world with different assets")
        size = struct.calcsize(_OBJ_FMT)
        for o in w.objects:
            v = struct.unpack_from(_OBJ_FMT, data, pos)
            pos += size
            o.pose = Pose(v[1:4], v[4:8], canonical=True)
            o.scale = v[8]
            o.fixed = bool(v[9])
            if o.articulation is not None:
                o.articulation.position = v[10]
            w.initial_positions[o.name] = np.array(v[11:14])
        t = struct.unpack_from(_TAIL_FMT, data, pos)
        pos += struct.calcsize(_TAIL_FMT)
        w.eef_pose = Pose(t[0:3], t[3:7], canonical=True)
        w.gripper = "closed" if t[7] else "open"
        w.attached = None if t[8] < 0 else t[8]
        w.grasp_transform = Pose(t[9:12], t[12:16], canonical=True) if w.attached is not None else None
        w.held_handle = None if t[16] < 0 else t[16]
        w.step_count = t[17]
        w.workspace = Aabb(np.array(t[18:21]), np.array(t[21:24]))
        w.noise_scale = t[24]
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        s, inc, has, uint = data[pos : pos + ln].decode().split(",")
        w.rng = np.random.default_rng(0)
        w.rng.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(s), "inc": int(inc)},
            "has_uint32": int(has),
            "uinteger": int(uint),
        }
        w._bounds_cache.clear()


# --------------------------------------------------------------------------- reset


def _seed64(seed: int) -> int:
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def compile_task(task: "TaskSpec", catalog: Catalog) -> dsl.CompiledProgram:
    return dsl.compile_program(task.program, symbols_for(task.objects, catalog))


def symbols_for(keys, catalog: Catalog) -> dsl.Symbols:
    missing = [k for k in keys if k not in catalog]
    if missing:
        raise InvalidDsl(f"objects not in catalog: {missing}", section="reset", error_class="unknown symbol")
    return dsl.Symbols.of(keys, [k for k in keys if catalog[k].articulated])


def reset(
    task: "TaskSpec",
    seed: int,
    catalog: Catalog | None = None,
    workspace: Aabb = DEFAULT_WORKSPACE,
    program: dsl.CompiledProgram | None = None,
) -> World:
    """Build a world from the task's reset section; deterministic in (task, seed)."""
    catalog = catalog or default_catalog()
    if program is None:
        program = compile_task(task, catalog)
    w = World(task, program, catalog, workspace)
    w.rng = np.random.default_rng(_seed64(seed))
    run_reset(w, program.reset)
    return w


@dataclass
class WorldFactory:
    """Builds fresh worlds for a fixed object set, from possibly partial programs."""

    objects: tuple[str, ...]
    catalog: Catalog = field(default_factory=default_catalog)
    workspace: Aabb = DEFAULT_WORKSPACE

    def __post_init__(self):
        self.objects = tuple(self.objects)
        self.symbols = symbols_for(self.objects, self.catalog)

    def build(self, program: dsl.TaskDsl, seed: int, specs: list | None = None) -> World:
        if specs is None:
            specs = dsl.parse_reset(program.reset, self.symbols)
        partial = dsl.CompiledProgram(program, self.symbols, specs, None, [], None, [])
        w = World(None, partial, self.catalog, self.workspace)
        w.rng = np.random.default_rng(_seed64(seed))
        run_reset(w, specs)
        return w


def _check_region(name: str, lo: float, hi: float, axis: int, ws: Aabb) -> None:
    if lo < ws.min[axis] or hi > ws.max[axis]:
        raise InvalidDsl(
            f"placement region for {name!r} leaves the workspace on axis {'xyz'[axis]}",
            section="reset",
            error_class="region outside workspace",
        )


def run_reset(w: World, specs: list[dsl.ResetSpec]) -> None:
    rng = w.rng
    placed: list[Aabb] = []
    for spec in specs:
        if isinstance(spec, dsl.EefSpec):
            for axis, rng_ in enumerate((spec.x, spec.y, spec.z)):
                _check_region("eef", *rng_, axis, w.workspace)
            p = np.array([rng.uniform(*spec.x), rng.uniform(*spec.y), rng.uniform(*spec.z)])
            w.eef_pose = Pose(p, DOWN_QUAT, canonical=True)
            continue
        if isinstance(spec, dsl.FixSpec):
            _check_region(spec.obj, spec.at[0], spec.at[0], 0, w.workspace)
            _check_region(spec.obj, spec.at[1], spec.at[1], 1, w.workspace)
            q = quat_from_axis_angle([0, 0, 1], spec.yaw)
            obj = w._add_object(spec.obj, Pose([spec.at[0], spec.at[1], 0.0], q), fixed=True)
            obj.pose = obj.pose.with_position([spec.at[0], spec.at[1], w.rest_z(obj)])
            if obj.articulation is not None:
                j = obj.articulation
                if not j.lo <= spec.joint <= j.hi:
                    raise InvalidDsl(f"joint value {spec.joint} outside [{j.lo}, {j.hi}]", section="reset", error_class="joint out of range")
                j.position = spec.joint
            lo, hi = w.bounds(obj)
            placed.append(Aabb(lo, hi))
            continue
        _check_region(spec.obj, *spec.x, 0, w.workspace)
        _check_region(spec.obj, *spec.y, 1, w.workspace)
        obj = w._add_object(spec.obj, Pose(), fixed=False)
        for _ in range(PLACEMENT_RETRIES):
            x, y = rng.uniform(*spec.x), rng.uniform(*spec.y)
            yaw = rng.uniform(*spec.yaw) if spec.yaw[1] > spec.yaw[0] else spec.yaw[0]
            obj.pose = Pose([x, y, 0.0], quat_from_axis_angle([0, 0, 1], yaw))
            obj.pose = obj.pose.with_position([x, y, w.rest_z(obj)])
            lo, hi = w.bounds(obj)
            box = Aabb(lo - PLACEMENT_MARGIN, hi + PLACEMENT_MARGIN)
            if not any(box.overlaps_xy(b) for b in placed):
                placed.append(Aabb(lo, hi))
                break
        else:
            raise PlacementInfeasible(f"could not place {spec.obj!r} after {PLACEMENT_RETRIES} tries")
    for o in w.objects:
        w.initial_positions[o.name] = o.pose.position.copy()


# --------------------------------------------------------------------------- skills


def _annotate(w: World, description: str, **extra) -> None:
    if w.recorder is not None:
        from .annotate import log_step

        w.recorder.annotations.append(log_step(w, description, **extra))


def skill(name: str):
    """Wrap a skill so its entry and exit are always annotated."""

    def deco(fn: Callable[..., SkillResult]):
        def wrapper(w: World, *args, **kwargs) -> SkillResult:
            _annotate(w, f"{name}: start", skill=name, phase="enter")
            res = fn(w, *args, **kwargs)
            _annotate(w, f"{name}: {res.reason}", skill=name, phase="exit", reason=res.reason, ok=res.ok, holding=w.holding_name())
            return res

        wrapper.__name__ = fn.__name__
        wrapper.__doc__ = fn.__doc__
        wrapper.raw = fn
        return wrapper

    return deco


def _move(w: World, target: Pose, gripper_open: bool) -> SkillResult:
    if not w.workspace.contains(target.position):
        return SkillResult(False, "unreachable", 0)
    start = w.eef_pose
    dist = float(np.linalg.norm(target.position - start.position))
    ang = quat_angle(start.orientation, target.orientation)
    n = max(math.ceil(dist / STEP_SIZE - 1e-9), math.ceil(ang / ROT_STEP - 1e-9))
    closed = not gripper_open
    if n == 0:
        if closed != w.gripper_closed():
            w.step(Action(target, closed))
            return SkillResult(True, "reached", 1)
        return SkillResult(True, "reached", 0)
    if w.step_count + n > EPISODE_CAP:
        return SkillResult(False, "timeout", 0)
    for i in range(1, n + 1):
        t = i / n
        wp = target if i == n else Pose(
            start.position + t * (target.position - start.position), slerp(start.orientation, target.orientation, t), canonical=True
        )
        out = w.step(Action(wp, closed))
        if out.status == "collision":
            return SkillResult(False, "collision_abort", i)
        if out.status == "unreachable":
            return SkillResult(False, "unreachable", i)
    return SkillResult(True, "reached", n)


@skill("move_to")
def move_to(w: World, target: Pose | np.ndarray, gripper_open: bool = True) -> SkillResult:
    if not isinstance(target, Pose):
        target = Pose(target, w.eef_pose.orientation, canonical=True)
    return _move(w, target, gripper_open)


def _gripper(w: World, closed: bool) -> SkillResult:
    if w.step_count + 1 > EPISODE_CAP:
        return SkillResult(False, "timeout", 0)
    w.step(Action(w.eef_pose, closed))
    return SkillResult(True, "reached", 1)


@skill("close_gripper")
def close_gripper(w: World) -> SkillResult:
    return _gripper(w, True)


@skill("open_gripper")
def open_gripper(w: World) -> SkillResult:
    return _gripper(w, False)


@skill("grasp")
def grasp(w: World, name: str) -> SkillResult:
    """Hover 10 cm above the object centre, descend, close."""
    p = w.obj_position(name)
    total = 0
    for target, open_ in ((p + [0.0, 0.0, 0.1], True), (p, True)):
        r = _move(w, Pose(target, w.eef_pose.orientation, canonical=True), open_)
        total += r.steps_taken
        if not r.ok:
            return SkillResult(False, r.reason, total)
    r = _gripper(w, True)
    return SkillResult(r.ok, r.reason, total + r.steps_taken)


@skill("open_drawer")
def open_drawer(w: World, name: str) -> SkillResult:
    o = w.obj(name)
    j = o.articulation
    if j is None:
        raise PreconditionError(f"{name!r} has no prismatic joint")
    if j.position >= j.hi - 1e-9:
        return SkillResult(True, "reached", 0)
    handle = w.handle_position(o)
    if not w.workspace.contains(handle):
        return SkillResult(False, "unreachable", 0)
    total = 0
    axis_w = quat_to_matrix(o.pose.orientation) @ j.axis
    pull_to = handle + axis_w * (j.hi - j.position) * o.scale
    if not w.workspace.contains(pull_to):
        return SkillResult(False, "unreachable", 0)
    if w.gripper_closed():
        total += _gripper(w, False).steps_taken
    for target, open_ in ((handle, True),):
        r = _move(w, Pose(target, w.eef_pose.orientation, canonical=True), open_)
        total += r.steps_taken
        if not r.ok:
            return SkillResult(False, r.reason, total)
    total += _gripper(w, True).steps_taken
    r = _move(w, Pose(pull_to, w.eef_pose.orientation, canonical=True), False)
    total += r.steps_taken
    total += _gripper(w, False).steps_taken
    if not r.ok:
        return SkillResult(False, r.reason, total)
    return SkillResult(True, "reached", total)


# --------------------------------------------------------------------------- evaluation


def check_success(w: World, predicate: dsl.Expr | None = None) -> bool:
    pred = predicate if predicate is not None else w.program.success
    if pred is None:
        raise InvalidDsl("world has no compiled success predicate", section="check_success")
    try:
        return bool(pred(w))
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise InvalidDsl(f"check_success failed: {exc}", section="check_success", error_class="runtime error") from None


def compose_state(w: World, spec: list[dsl.Expr] | None = None) -> np.ndarray:
    spec = spec if spec is not None else w.program.state
    parts = []
    for e in spec:
        v = e(w)
        parts.append(np.atleast_1d(np.asarray(v, dtype=float)))
    return np.concatenate(parts) if parts else np.zeros(0)


# --------------------------------------------------------------------------- domain randomization


@dataclass(frozen=True)
class RandomizationConfig:
    scale: tuple[float, float] = (1.0, 1.0)
    xy_jitter: float = 0.0
    yaw_jitter: float = 0.0
    joint_fraction: tuple[float, float] = (0.0, 0.0)
    noise_scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        for lo, hi in (self.scale, self.joint_fraction, self.noise_scale):
            if lo > hi:
                raise PreconditionError("randomization range has lo > hi")
        if self.scale[0] <= 0 or self.xy_jitter < 0 or self.yaw_jitter < 0:
            raise PreconditionError("invalid randomization range")


def _draw(rng: np.random.Generator, lo: float, hi: float) -> float:
    return lo if lo == hi else float(rng.uniform(lo, hi))


def domain_randomize(w: World, config: RandomizationConfig, rng: np.random.Generator) -> World:
    """Perturb scales, poses, joints and observation noise in place; returns ``w``."""
    for o in w.objects:
        if o.object_id == w.attached:
            continue
        changed = False
        if config.scale != (1.0, 1.0):
            o.scale = o.nominal_scale * _draw(rng, *config.scale)
            changed = True
        if not o.fixed and (config.xy_jitter > 0 or config.yaw_jitter > 0):
            d = rng.uniform(-config.xy_jitter, config.xy_jitter, 2) if config.xy_jitter > 0 else np.zeros(2)
            yaw = _draw(rng, -config.yaw_jitter, config.yaw_jitter)
            p = o.pose.position.copy()
            p[:2] = np.clip(p[:2] + d, w.workspace.min[:2], w.workspace.max[:2])
            o.pose = Pose(p, quat_mul(quat_from_axis_angle([0, 0, 1], yaw), o.pose.orientation))
            changed = True
        if o.articulation is not None and config.joint_fraction != (0.0, 0.0):
            j = o.articulation
            j.position = j.clamp(j.lo + _draw(rng, *config.joint_fraction) * (j.hi - j.lo))
        if changed:
            if o.fixed:
                o.pose = o.pose.with_position([o.pose.position[0], o.pose.position[1], w.rest_z(o)])
            else:
                w.settle(o)
    if config.noise_scale != (1.0, 1.0):
        w.noise_scale = _draw(rng, *config.noise_scale)
    # initial positions follow the randomized layout so relative goals stay consistent
    if w.step_count == 0:
        for o in w.objects:
            w.initial_positions[o.name] = o.pose.position.copy()
    return w
