"""Meshes, poses, area-uniform surface sampling and conservative collision.

Vectors are plain ``numpy`` arrays of shape ``(3,)``; quaternions are
``(w, x, y, z)`` arrays canonicalized so that ``w >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMesh, ParseError, PreconditionError

DEGENERATE_AREA = 1e-12
UNIT_TOL = 1e-9


# --------------------------------------------------------------------------- quaternions


def canonical_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise PreconditionError("zero quaternion")
    q = q / n
    # sign rule: w > 0, or first non-zero component positive when w == 0
    for c in q:
        if c > 0.0:
            break
        if c < 0.0:
            q = -q
            break
    return q + 0.0  # clears negative zeros


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return canonical_quat(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return canonical_quat(np.concatenate([[math.cos(h)], math.sin(h) * axis]))


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic z-y-x (yaw, pitch, roll) convention."""
    qx = quat_from_axis_angle([1, 0, 0], roll)
    qy = quat_from_axis_angle([0, 1, 0], pitch)
    qz = quat_from_axis_angle([0, 0, 1], yaw)
    return canonical_quat(quat_mul(qz, quat_mul(qy, qx)))


def quat_angle(a, b) -> float:
    d = abs(float(np.dot(a, b)))
    return 2.0 * math.acos(min(1.0, d))


def slerp(a, b, t: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = float(a @ b)
    if d < 0.0:
        b, d = -b, -d
    if d > 0.9995:
        return canonical_quat(a + t * (b - a))
    theta = math.acos(d)
    s = math.sin(theta)
    return canonical_quat((math.sin((1 - t) * theta) * a + math.sin(t * theta) * b) / s)


# --------------------------------------------------------------------------- poses

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
# gripper z-axis pointing straight down
DOWN_QUAT = canonical_quat([0.0, 1.0, 0.0, 0.0])


class Pose:
    """Rigid transform; immutable by convention."""

    __slots__ = ("position", "orientation")

    def __init__(self, position=(0.0, 0.0, 0.0), orientation=IDENTITY_QUAT, *, canonical: bool = False):
        self.position = np.array(position, dtype=float).reshape(3)
        self.orientation = (
            np.array(orientation, dtype=float) if canonical else canonical_quat(orientation)
        )
        self.position.flags.writeable = False
        self.orientation.flags.writeable = False

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.position, other.position)
            and np.array_equal(self.orientation, other.orientation)
        )

    def __repr__(self) -> str:
        p = ", ".join(f"{v:.4f}" for v in self.position)
        q = ", ".join(f"{v:.4f}" for v in self.orientation)
        return f"Pose([{p}], [{q}])"

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def compose(self, other: "Pose") -> "Pose":
        r = quat_to_matrix(self.orientation)
        return Pose(self.position + r @ other.position, quat_mul(self.orientation, other.orientation))

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        return Pose(-(quat_to_matrix(qi) @ self.position), qi)

    def transform_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ quat_to_matrix(self.orientation).T + self.position

    def with_position(self, position) -> "Pose":
        return Pose(position, self.orientation, canonical=True)

    def to_list(self) -> list[float]:
        return [float(v) for v in self.position] + [float(v) for v in self.orientation]

    @classmethod
    def from_list(cls, values) -> "Pose":
        return cls(values[:3], values[3:7])


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise PreconditionError("zero-length vector")
    return v / n


def is_unit(v, tol: float = UNIT_TOL) -> bool:
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


def angle_between(a, b) -> float:
    c = float(np.dot(unit(a), unit(b)))
    return math.acos(max(-1.0, min(1.0, c)))


def orthonormal_basis(axis) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``axis`` to a right-handed frame."""
    a = np.asarray(axis, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    w = np.cross(a, u)
    return u, w


# --------------------------------------------------------------------------- meshes


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if np.any(lo > hi):
            raise PreconditionError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def __eq__(self, other) -> bool:
        return isinstance(other, Aabb) and np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max - self.min))

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.min - tol) and np.all(p <= self.max + tol))

    def overlaps_xy(self, other: "Aabb") -> bool:
        return bool(
            self.min[0] < other.max[0]
            and other.min[0] < self.max[0]
            and self.min[1] < other.max[1]
            and other.min[1] < self.max[1]
        )


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray
    normals: np.ndarray
    total_area: float
    dropped: int = 0
    _cum_areas: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "TriMesh":
        v = np.asarray(vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ParseError("non-finite vertex coordinate")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ParseError("triangle index out of range")
        cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]) if t.size else np.zeros((0, 3))
        doubled = np.linalg.norm(cross, axis=1)
        keep = 0.5 * doubled >= DEGENERATE_AREA
        if not np.any(keep):
            raise EmptyMesh("mesh has no non-degenerate triangles")
        t, cross, doubled = t[keep], cross[keep], doubled[keep]
        areas = 0.5 * doubled
        normals = cross / doubled[:, None]
        cum = np.cumsum(areas)
        return cls(v, t, areas, normals, float(areas.sum()), int((~keep).sum()), cum)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def local_aabb(self) -> Aabb:
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def corners(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        tri = self.triangles[idx]
        return self.vertices[tri[..., 0]], self.vertices[tri[..., 1]], self.vertices[tri[..., 2]]

    def scaled(self, scale: float) -> "TriMesh":
        return TriMesh.from_arrays(self.vertices * scale, self.triangles)


def _parse_float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"line {lineno}: bad number {tok!r}") from None


def _parse_off(text: str) -> tuple[list, list]:
    tokens: list[tuple[str, int]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        tokens.extend((tok, lineno) for tok in line.split())
    if not tokens or not tokens[0][0].upper().endswith("OFF"):
        raise ParseError("missing OFF header")
    head = tokens[0][0]
    pos = 1
    if head.upper() != "OFF":
        # header glued to counts, e.g. "OFF8"
        tokens.insert(1, (head[3:], tokens[0][1]))
    try:
        nv, nf = int(tokens[pos][0]), int(tokens[pos + 1][0])
        pos += 3
    except (IndexError, ValueError):
        raise ParseError("bad OFF counts line") from None
    if pos + 3 * nv > len(tokens):
        raise ParseError("truncated OFF vertex block")
    verts = []
    for i in range(nv):
        chunk = tokens[pos + 3 * i : pos + 3 * i + 3]
        verts.append([_parse_float(t, ln) for t, ln in chunk])
    pos += 3 * nv
    faces = []
    for _ in range(nf):
        if pos >= len(tokens):
            raise ParseError("truncated OFF face block")
        try:
            k = int(tokens[pos][0])
            idx = [int(t) for t, _ in tokens[pos + 1 : pos + 1 + k]]
        except ValueError:
            raise ParseError(f"line {tokens[pos][1]}: bad face record") from None
        if len(idx) != k or k < 3:
            raise ParseError(f"line {tokens[pos][1]}: truncated face record")
        faces.append(idx)
        # trailing colour values on a face line are skipped
        line_of_face = tokens[pos][1]
        pos += 1 + k
        while pos < len(tokens) and tokens[pos][1] == line_of_face:
            pos += 1
    return verts, faces


def _parse_obj(text: str) -> tuple[list, list]:
    verts: list = []
    faces: list = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
            verts.append([_parse_float(t, lineno) for t in parts[1:4]])
        elif parts[0] == "f":
            if len(parts) < 4:
                raise ParseError(f"line {lineno}: face needs at least 3 vertices")
            idx = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/", 1)[0])
                except ValueError:
                    raise ParseError(f"line {lineno}: bad face index {tok!r}") from None
                if i < 0:
                    i = len(verts) + i + 1
                if i < 1 or i > len(verts):
                    raise ParseError(f"line {lineno}: face index {tok} out of range")
                idx.append(i - 1)
            faces.append(idx)
    return verts, faces


def mesh_load(data: bytes | str, fmt: str) -> TriMesh:
    """Load an OFF file or the v/f subset of OBJ; polygons are fan-triangulated."""
    text = data.decode("utf-8", errors="strict") if isinstance(data, bytes) else data
    fmt = fmt.lower().lstrip(".")
    if fmt == "off":
        verts, faces = _parse_off(text)
    elif fmt == "obj":
        verts, faces = _parse_obj(text)
    else:
        raise ParseError(f"unsupported mesh format {fmt!r}")
    tris = [(f[0], f[i], f[i + 1]) for f in faces for i in range(1, len(f) - 1)]
    if not verts or not tris:
        raise EmptyMesh("mesh file has no triangles")
    return TriMesh.from_arrays(verts, tris)


def mesh_to_off(mesh: TriMesh) -> str:
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in t) for t in mesh.triangles]
    return "\n".join(lines) + "\n"


def box_mesh(extent) -> TriMesh:
    hx, hy, hz = 0.5 * np.asarray(extent, dtype=float)
    v = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    # vertex index = 4*ix + 2*iy + iz; faces wound counter-clockwise seen from outside
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = [(a, b, c) for a, b, c, d in quads] + [(a, c, d) for a, b, c, d in quads]
    return TriMesh.from_arrays(v, tris)


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh.from_arrays(np.array(verts) * radius, faces)


def ellipsoid_mesh(extent, subdivisions: int = 2) -> TriMesh:
    base = icosphere(subdivisions)
    return TriMesh.from_arrays(base.vertices * (0.5 * np.asarray(extent, dtype=float)), base.triangles)


def cylinder_mesh(extent, segments: int = 16) -> TriMesh:
    """Elliptic prism along z with caps, sized to ``extent``."""
    rx, ry, hz = 0.5 * np.asarray(extent, dtype=float)
    ang = 2 * math.pi * np.arange(segments) / segments
    ring = np.stack([rx * np.cos(ang), ry * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -hz)])
    top = np.column_stack([ring, np.full(segments, hz)])
    verts = np.vstack([bottom, top, [[0, 0, -hz], [0, 0, hz]]])
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [(i, j, segments + j), (i, segments + j, segments + i)]
        tris += [(cb, j, i), (ct, segments + i, segments + j)]
    return TriMesh.from_arrays(verts, tris)


# --------------------------------------------------------------------------- sampling


def barycentric_point(a, b, c, r1: float, r2: float) -> np.ndarray:
    s = math.sqrt(r1)
    return (1.0 - s) * np.asarray(a) + s * (1.0 - r2) * np.asarray(b) + s * r2 * np.asarray(c)


def sample_surface_points(mesh: TriMesh, n: int, rng: np.random.Generator):
    """Vectorized area-uniform sampling; returns (points, normals, tri_indices)."""
    u = rng.random(n) * mesh.total_area
    tri = np.minimum(np.searchsorted(mesh._cum_areas, u, side="right"), mesh.n_triangles - 1)
    r1 = rng.random(n)
    r2 = rng.random(n)
    s = np.sqrt(r1)[:, None]
    a, b, c = mesh.corners(tri)
    pts = (1.0 - s) * a + s * (1.0 - r2[:, None]) * b + s * r2[:, None] * c
    return pts, mesh.normals[tri], tri


def sample_surface_point(mesh: TriMesh, rng: np.random.Generator):
    pts, normals, tri = sample_surface_points(mesh, 1, rng)
    return pts[0], normals[0].copy(), int(tri[0])


def sample_cone(axis, half_angle: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` unit vectors drawn uniformly over the spherical cap around ``axis``."""
    axis = np.asarray(axis, dtype=float)
    u_basis, w_basis = orthonormal_basis(axis)
    cos_max = math.cos(half_angle)
    cos_t = 1.0 - rng.random(n) * (1.0 - cos_max)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = rng.random(n) * (2.0 * math.pi)
    out = (
        cos_t[:, None] * axis
        + (sin_t * np.cos(phi))[:, None] * u_basis
        + (sin_t * np.sin(phi))[:, None] * w_basis
    )
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def perturb_direction(normal, max_angle: float, rng: np.random.Generator) -> np.ndarray:
    normal = np.asarray(normal, dtype=float)
    if not is_unit(normal):
        raise PreconditionError("perturb_direction needs a unit normal")
    if not 0.0 <= max_angle < math.pi / 2:
        raise PreconditionError("max_angle must lie in [0, pi/2)")
    if max_angle == 0.0:
        return normal.copy()
    return sample_cone(normal, max_angle, 1, rng)[0]


# --------------------------------------------------------------------------- colliders


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise PreconditionError("sphere radius must be positive")


@dataclass(frozen=True, eq=False)
class Box:
    half_extents: np.ndarray
    # box centre in the shape's local frame
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=float)
        if h.shape != (3,) or not np.all(h > 0):
            raise PreconditionError("box half-extents must be three positive numbers")
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))


@dataclass(frozen=True, eq=False)
class MeshShape:
    """Mesh collider represented by its local AABB (which bounds the convex hull)."""

    mesh: TriMesh
    proxy: Box

    @classmethod
    def from_mesh(cls, mesh: TriMesh, scale: float = 1.0) -> "MeshShape":
        if not scale > 0:
            raise PreconditionError("scale must be positive")
        box = mesh.local_aabb()
        half = np.maximum(0.5 * box.extent * scale, 1e-6)
        return cls(mesh, Box(half, box.center * scale))


ColliderShape = Sphere | Box | MeshShape


def _primitive(shape, pose: Pose):
    if isinstance(shape, Sphere):
        return ("sphere", pose.position, shape.radius)
    box = shape.proxy if isinstance(shape, MeshShape) else shape
    rot = quat_to_matrix(pose.orientation)
    return ("box", pose.position + rot @ box.offset, rot, box.half_extents)


def _sphere_box(c, r, bc, rot, half) -> bool:
    local = rot.T @ (c - bc)
    closest = np.clip(local, -half, half)
    d = local - closest
    return float(d @ d) <= r * r


def _box_box(ca, ra, ha, cb, rb, hb) -> bool:
    # separating-axis test for two oriented boxes
    r = ra.T @ rb
    t = ra.T @ (cb - ca)
    ar = np.abs(r) + 1e-12
    for i in range(3):
        if abs(t[i]) > ha[i] + hb @ ar[i]:
            return False
    for j in range(3):
        if abs(t @ r[:, j]) > ha @ ar[:, j] + hb[j]:
            return False
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            ra_ = ha[i1] * ar[i2, j] + ha[i2] * ar[i1, j]
            rb_ = hb[j1] * ar[i, j2] + hb[j2] * ar[i, j1]
            if abs(t[i2] * r[i1, j] - t[i1] * r[i2, j]) > ra_ + rb_:
                return False
    return True


def _order_key(prim) -> tuple:
    if prim[0] == "sphere":
        return (0, tuple(prim[1]), prim[2])
    return (1, tuple(prim[1]), tuple(prim[2].ravel()), tuple(prim[3]))


def collide(a, pa: Pose, b, pb: Pose) -> bool:
    """Conservative intersection test; touching counts as contact."""
    p, q = _primitive(a, pa), _primitive(b, pb)
    if _order_key(q) < _order_key(p):
        p, q = q, p
    if p[0] == "sphere" and q[0] == "sphere":
        d = p[1] - q[1]
        return float(d @ d) <= (p[2] + q[2]) ** 2
    if p[0] == "sphere":
        return _sphere_box(p[1], p[2], q[1], q[2], q[3])
    return _box_box(p[1], p[2], p[3], q[1], q[2], q[3])


def boxes_overlap_batch(ca, ra, ha, cb, rb, hb) -> np.ndarray:
    """Vectorized SAT: boxes ``(ca[i], ra[i])`` with half ``ha`` against one box ``(cb, rb, hb)``.

    ``ca`` is ``(N, 3)``, ``ra`` is ``(N, 3, 3)``. Returns a bool array of length N.
    """
    r = np.einsum("nki,kj->nij", ra, rb)
    t = np.einsum("nki,nk->ni", ra, cb - ca)
    ar = np.abs(r) + 1e-12
    sep = np.zeros(len(ca), dtype=bool)
    for i in range(3):
        sep |= np.abs(t[:, i]) > ha[i] + ar[:, i, :] @ hb
    for j in range(3):
        tj = np.einsum("ni,ni->n", t, r[:, :, j])
        sep |= np.abs(tj) > ar[:, :, j] @ ha + hb[j]
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            ra_ = ha[i1] * ar[:, i2, j] + ha[i2] * ar[:, i1, j]
            rb_ = hb[j1] * ar[:, i, j2] + hb[j2] * ar[:, i, j1]
            sep |= np.abs(t[:, i2] * r[:, i1, j] - t[:, i1] * r[:, i2, j]) > ra_ + rb_
    return ~sep


def box_world(shape, pose: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(centre, rotation, half-extents) of a box or mesh proxy in world frame."""
    prim = _primitive(shape, pose)
    if prim[0] != "box":
        raise PreconditionError("sphere has no box representation")
    return prim[1], prim[2], prim[3]


def point_box_distance(p, shape, pose: Pose) -> float:
    c, rot, half = box_world(shape, pose)
    local = rot.T @ (np.asarray(p) - c)
    d = local - np.clip(local, -half, half)
    return float(np.linalg.norm(d))


def aabb_of(mesh: TriMesh, pose: Pose, scale: float = 1.0) -> Aabb:
    if not scale > 0:
        raise PreconditionError("scale must be positive")
    pts = pose.transform_points(mesh.vertices * scale)
    return Aabb(pts.min(axis=0), pts.max(axis=0))
