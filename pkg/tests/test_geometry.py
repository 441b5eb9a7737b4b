from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from helpers import boxes_intersect_lp

from taskforge.errors import EmptyMesh, ParseError, PreconditionError
from taskforge.geometry import (
    Aabb,
    Box,
    Pose,
    Sphere,
    TriMesh,
    barycentric_point,
    box_mesh,
    boxes_overlap_batch,
    canonical_quat,
    collide,
    cylinder_mesh,
    icosphere,
    mesh_load,
    mesh_to_off,
    perturb_direction,
    quat_from_euler,
    quat_mul,
    quat_to_matrix,
    sample_cone,
    sample_surface_points,
    slerp,
)

quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3)
vecs = st.lists(st.floats(-1, 1), min_size=3, max_size=3)


# ----------------------------------------------------------------------------- oracles


def closest_point_on_triangle(p, a, b, c):
    """Closest point by Voronoi-region case analysis."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + d1 / (d1 - d3) * ab
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + d2 / (d2 - d6) * ac
    va = d3 * d6 - d5 * d4
    if va <= 0 and d4 - d3 >= 0 and d5 - d6 >= 0:
        return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b)
    denom = 1.0 / (va + vb + vc)
    return a + ab * vb * denom + ac * vc * denom


def mesh_distance(p, mesh: TriMesh) -> float:
    a, b, c = mesh.corners(np.arange(mesh.n_triangles))
    return min(float(np.linalg.norm(p - closest_point_on_triangle(p, a[i], b[i], c[i]))) for i in range(mesh.n_triangles))


# ----------------------------------------------------------------------------- quaternions


@given(quats)
def test_canonical_quat_is_unit_with_nonnegative_w(q):
    c = canonical_quat(q)
    assert math.isclose(np.linalg.norm(c), 1.0, abs_tol=1e-12)
    assert c[0] >= 0


@given(quats, quats)
def test_quat_mul_matches_matrix_product(a, b):
    a, b = canonical_quat(a), canonical_quat(b)
    assert np.allclose(quat_to_matrix(quat_mul(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-9)


@given(quats, vecs, vecs)
def test_pose_inverse_roundtrip(q, t, p):
    pose = Pose(t, q)
    back = pose.inverse().transform_points(pose.transform_points(np.array([p])))
    assert np.allclose(back, [p], atol=1e-9)


@given(quats, quats, st.floats(0, 1))
def test_slerp_stays_unit(a, b, t):
    assert math.isclose(np.linalg.norm(slerp(canonical_quat(a), canonical_quat(b), t)), 1.0, abs_tol=1e-9)


def test_quat_from_euler_yaw():
    r = quat_to_matrix(quat_from_euler(0.0, 0.0, math.pi / 2))
    assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)


# ----------------------------------------------------------------------------- meshes


def two_triangles() -> TriMesh:
    # areas 0.5 and 1.5 (ratio 1:3)
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [5, 0, 0], [2, 1, 0]]
    return TriMesh.from_arrays(v, [[0, 1, 2], [3, 4, 5]])


def test_area_weighted_sampling_chi_square():
    mesh = two_triangles()
    _, _, tri = sample_surface_points(mesh, 100_000, np.random.default_rng(0))
    counts = np.bincount(tri, minlength=2)
    assert chisquare(counts, [25_000, 75_000]).pvalue > 0.01


def test_barycentric_points_uniform_within_triangle():
    # sqrt reparameterisation: mass within the half of the triangle nearest vertex a is 1/4
    rng = np.random.default_rng(1)
    a, b, c = np.array([0.0, 0, 0]), np.array([1.0, 0, 0]), np.array([0.0, 1, 0])
    pts = np.array([barycentric_point(a, b, c, rng.random(), rng.random()) for _ in range(20_000)])
    near = (pts[:, 0] + pts[:, 1]) < 0.5
    assert abs(near.mean() - 0.25) < 0.015


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sampled_points_lie_on_surface(seed):
    mesh = cylinder_mesh((0.05, 0.05, 0.1), segments=8)
    pts, normals, tri = sample_surface_points(mesh, 20, np.random.default_rng(seed))
    for p in pts:
        assert mesh_distance(p, mesh) < 1e-9
    assert np.allclose(np.linalg.norm(normals, axis=1), 1.0)
    assert np.all((tri >= 0) & (tri < mesh.n_triangles))


def test_box_mesh_area_and_normals_point_outward():
    mesh = box_mesh((0.1, 0.2, 0.3))
    assert math.isclose(mesh.total_area, 2 * (0.02 + 0.03 + 0.06))
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", centroids, mesh.normals) > 0)


def test_icosphere_vertices_on_sphere():
    mesh = icosphere(2, 0.5)
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 0.5)


def test_degenerate_triangles_dropped():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]]
    mesh = TriMesh.from_arrays(v, [[0, 1, 2], [0, 1, 3]])
    assert mesh.n_triangles == 1 and mesh.dropped == 1


def test_all_degenerate_mesh_raises():
    with pytest.raises(EmptyMesh):
        TriMesh.from_arrays([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])


def test_off_roundtrip():
    mesh = box_mesh((0.1, 0.2, 0.3))
    back = mesh_load(mesh_to_off(mesh), "off")
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_obj_quad_is_fan_triangulated():
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
    mesh = mesh_load(text, "obj")
    assert mesh.n_triangles == 2 and math.isclose(mesh.total_area, 1.0)


@pytest.mark.parametrize(
    "text,fmt",
    [
        ("OFF\n3 1 0\n0 0 0\n1 0 0\n", "off"),
        ("OFF\n3 1 0\n0 0 0\n1 0 x\n0 1 0\n3 0 1 2\n", "off"),
        ("v 0 0 0\nf 1 2 3\n", "obj"),
        ("solid", "stl"),
    ],
)
def test_malformed_mesh_files(text, fmt):
    with pytest.raises(ParseError):
        mesh_load(text, fmt)


# ----------------------------------------------------------------------------- directions


@settings(max_examples=30)
@given(vecs.filter(lambda v: np.linalg.norm(v) > 1e-3), st.floats(0.01, 1.0), st.integers(0, 1000))
def test_perturbed_direction_within_cone(axis, angle, seed):
    axis = np.asarray(axis) / np.linalg.norm(axis)
    d = perturb_direction(axis, angle, np.random.default_rng(seed))
    cos = d @ axis
    assert math.isclose(np.linalg.norm(d), 1.0, abs_tol=1e-9)
    assert math.acos(min(1.0, cos)) <= angle + 1e-9


def test_sample_cone_batch_within_half_angle():
    d = sample_cone([0, 0, -1], 0.3, 500, np.random.default_rng(0))
    assert np.all(np.arccos(np.clip(d @ [0, 0, -1], -1, 1)) <= 0.3 + 1e-9)


# ----------------------------------------------------------------------------- collision


def random_box(rng):
    return rng.uniform(-0.1, 0.1, 3), quat_to_matrix(canonical_quat(rng.normal(size=4))), rng.uniform(0.01, 0.06, 3)


def test_batched_sat_matches_lp_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        cb, rb, hb = random_box(rng)
        boxes = [random_box(rng) for _ in range(25)]
        ca = np.array([b[0] for b in boxes])
        ra = np.array([b[1] for b in boxes])
        ha = np.array([0.02, 0.03, 0.04])
        got = boxes_overlap_batch(ca, ra, ha, cb, rb, hb)
        want = [boxes_intersect_lp(ca[i], ra[i], ha, cb, rb, hb) for i in range(len(boxes))]
        assert list(got) == want


def test_collide_symmetric_and_touching_counts():
    s = Sphere(0.05)
    b = Box(np.array([0.05, 0.05, 0.05]))
    assert collide(s, Pose([0.1, 0, 0]), b, Pose())
    assert collide(b, Pose(), s, Pose([0.1, 0, 0]))
    assert not collide(s, Pose([0.1001, 0, 0]), b, Pose())


def test_invalid_shapes_rejected():
    with pytest.raises(PreconditionError):
        Sphere(0.0)
    with pytest.raises(PreconditionError):
        Box(np.array([0.1, -0.1, 0.1]))
    with pytest.raises(PreconditionError):
        Aabb(np.array([1.0, 0, 0]), np.array([0.0, 1, 1]))
