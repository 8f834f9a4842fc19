import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from particle3d.errors import DegenerateInput, OrderViolation, OutOfRange
from particle3d.geometry import (TriMesh, VoxelGrid, box_mesh, convex_hull, icosphere,
                                 mesh_surface_area, mesh_volume)
from particle3d.morphometry import (ParticleRecord, ShapeIndices, convexity, measure,
                                    min_bounding_box, sphericity_intercept, sphericity_wadell,
                                    zingg_classify)
from particle3d.synth import AnalyticSolid, voxelize

from oracles import brute_force_box, ellipsoid_area, halfspace_hull_volume


def ellipsoid_mesh(a, b, c, subdivisions=5):
    m = icosphere(1.0, subdivisions)
    return TriMesh(m.vertices * [a, b, c], m.triangles)


def lprism_mesh(w=2.0, d=2.0, h=1.0, n=1.0):
    """Closed L-shaped prism: the w x d x h block minus an n x n x h corner."""
    ring = np.array([[0, 0], [w, 0], [w, d - n], [w - n, d - n], [w - n, d], [0, d]], float)
    k = len(ring)
    verts = np.vstack([np.c_[ring, np.zeros(k)], np.c_[ring, np.full(k, h)]])
    # bottom fan from the reflex vertex (3) so every triangle stays inside the L
    fan = [(3, 4, 5), (3, 5, 0), (3, 0, 1), (3, 1, 2)]
    tris = [(a, c, b) for a, b, c in fan] + [(a + k, b + k, c + k) for a, b, c in fan]
    for i in range(k):
        j = (i + 1) % k
        tris += [(i, j, j + k), (i, j + k, i + k)]
    return TriMesh(verts, np.array(tris))


# bounding box

def test_box_axis_aligned_exact():
    b = min_bounding_box(box_mesh((10, 20, 40)))
    assert (b.S, b.I, b.L) == pytest.approx((10, 20, 40), rel=1e-12)


def test_box_euler_rotation():
    rot = Rotation.from_euler("zyz", [30, 45, 60], degrees=True).as_matrix()
    m = box_mesh((10, 20, 40), rotation=rot)
    b = min_bounding_box(m)
    for got, want in zip((b.S, b.I, b.L), (10, 20, 40)):
        assert got == pytest.approx(want, rel=0.005)
    for got, want in zip((b.S, b.I, b.L), brute_force_box(m.vertices)):
        assert got == pytest.approx(want, rel=0.005)


def test_box_icosphere():
    b = min_bounding_box(icosphere(10.0, 4))
    assert (b.S, b.I, b.L) == pytest.approx((20, 20, 20), rel=0.01)


def test_box_not_larger_than_axis_aligned():
    rng = np.random.default_rng(5)
    for _ in range(10):
        pts = rng.normal(size=(60, 3)) * rng.uniform(0.5, 3, size=3)
        b = min_bounding_box(pts)
        assert b.volume <= np.prod(np.ptp(pts, axis=0)) * (1 + 1e-12)


def test_box_matches_hull_box():
    m = ellipsoid_mesh(6, 4, 2.5, 3).transformed(Rotation.from_euler("xyz", [10, 70, -20],
                                                                    degrees=True).as_matrix())
    b1 = min_bounding_box(m)
    b2 = min_bounding_box(convex_hull(m.vertices))
    assert (b1.S, b1.I, b1.L) == pytest.approx((b2.S, b2.I, b2.L), rel=1e-6)


def test_box_contains_points_and_axes_orthonormal():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(80, 3)) @ np.diag([1, 2, 5]) + [3, -1, 7]
    b = min_bounding_box(pts)
    R = b.rotation
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    local = (pts - b.center) @ R
    assert np.all(np.abs(local) <= np.array(b.dims) / 2 + 1e-9)


def test_box_degenerate():
    with pytest.raises(DegenerateInput):
        min_bounding_box(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float))


# Zingg

@pytest.mark.parametrize("e,f,cls", [
    (0.9, 0.9, "Compact"), (0.5, 0.9, "Elongated"), (0.9, 0.5, "Flat"),
    (2 / 3, 2 / 3, "Bladed"), (1.0, 1.0, "Compact"), (2 / 3, 0.9, "Elongated"),
    (0.9, 2 / 3, "Flat"),
])
def test_zingg(e, f, cls):
    assert zingg_classify(e, f) == cls


@pytest.mark.parametrize("e,f,t", [(0, 0.5, 2 / 3), (0.5, 1.2, 2 / 3), (0.5, 0.5, 1.0)])
def test_zingg_out_of_range(e, f, t):
    with pytest.raises(OutOfRange):
        zingg_classify(e, f, t)


def test_zingg_custom_threshold():
    assert zingg_classify(0.7, 0.7, threshold=0.75) == "Bladed"


# sphericity

def test_wadell_sphere_exact():
    assert sphericity_wadell(4 / 3 * math.pi, 4 * math.pi) == pytest.approx(1.0, abs=1e-12)


def test_wadell_cube_closed_form():
    a = 3.0
    assert sphericity_wadell(a ** 3, 6 * a * a) == pytest.approx((math.pi / 6) ** (1 / 3), abs=1e-9)


def test_wadell_ellipsoid_quadrature():
    area = ellipsoid_area(2, 1, 0.5)
    m = ellipsoid_mesh(2, 1, 0.5, 6)
    assert mesh_surface_area(m) == pytest.approx(area, rel=0.002)
    assert sphericity_wadell(mesh_volume(m), mesh_surface_area(m)) == pytest.approx(
        sphericity_wadell(4 / 3 * math.pi, area), rel=0.003)


def test_wadell_rejects_nonpositive():
    with pytest.raises(OutOfRange):
        sphericity_wadell(0, 1)
    with pytest.raises(OutOfRange):
        sphericity_wadell(1, -1)


def test_wadell_maximal_for_sphere():
    tetra = convex_hull([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    values = {name: sphericity_wadell(mesh_volume(m), mesh_surface_area(m)) for name, m in {
        "cube": box_mesh((1, 1, 1)), "box": box_mesh((1, 2, 4)), "tetra": tetra,
        "ico": icosphere(1.0, 4)}.items()}
    assert max(values, key=values.get) == "ico"


def test_intercept():
    assert sphericity_intercept(5, 5, 5) == 1.0
    assert sphericity_intercept(10, 20, 40) == pytest.approx(0.5, abs=1e-15)
    assert sphericity_intercept(1, 2, 4) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(OrderViolation):
        sphericity_intercept(20, 10, 40)
    with pytest.raises(OrderViolation):
        sphericity_intercept(0, 10, 40)


# convexity

def test_convexity_convex_meshes():
    assert convexity(box_mesh((1, 2, 3))) == pytest.approx(1.0, abs=1e-3)
    assert convexity(icosphere(5.0, 3)) == pytest.approx(1.0, abs=1e-3)
    tetra = convex_hull([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert convexity(tetra) == pytest.approx(1.0, abs=1e-12)


def test_convexity_lprism():
    m = lprism_mesh()
    assert m.is_closed()
    assert mesh_volume(m) == pytest.approx(3.0)
    assert halfspace_hull_volume(m.vertices) == pytest.approx(3.5)
    assert convexity(m) == pytest.approx(6 / 7, abs=1e-12)


# measure

def test_measure_voxel_sphere():
    g = voxelize(AnalyticSolid("sphere", {"r": 50.0}), 1.0)
    r = measure(g, "s")
    for d in (r.S, r.I, r.L):
        assert d == pytest.approx(100, rel=0.02)
    assert r.indices.sphericity_wadell >= 0.97
    assert r.indices.sphericity_intercept == pytest.approx(1, abs=0.02)
    assert r.indices.convexity == pytest.approx(1, abs=0.01)
    assert r.indices.zingg_class == "Compact"
    assert r.volume == g.count


def test_measure_voxel_ellipsoid():
    g = voxelize(AnalyticSolid("ellipsoid", {"a": 40, "b": 20, "c": 10}), 0.5)
    r = measure(g, "e", source="voxel-import")
    assert (r.S, r.I, r.L) == pytest.approx((20, 40, 80), rel=0.02)
    assert r.indices.zingg_class == "Bladed"
    assert r.indices.sphericity_intercept == pytest.approx(0.5, abs=0.01)
    assert r.source == "voxel-import"


def test_measure_single_voxel_rejected():
    occ = np.ones((1, 1, 1), bool)
    with pytest.raises(DegenerateInput):
        measure(VoxelGrid(occ, 1.0), "tiny")


def test_measure_flat_sheet_rejected():
    with pytest.raises(DegenerateInput):
        measure(VoxelGrid(np.ones((5, 5, 1), bool), 1.0), "sheet")


def test_measure_scale_equivariance():
    occ = voxelize(AnalyticSolid("ellipsoid", {"a": 9, "b": 6, "c": 4}), 1.0).occupancy
    r1 = measure(VoxelGrid(occ, 1.0), "p")
    k = 2.5
    r2 = measure(VoxelGrid(occ, k), "p")
    assert (r2.S, r2.I, r2.L) == pytest.approx((k * r1.S, k * r1.I, k * r1.L), rel=1e-6)
    assert r2.volume == pytest.approx(k ** 3 * r1.volume, rel=1e-9)
    assert r2.area == pytest.approx(k ** 2 * r1.area, rel=1e-9)
    for name in ("elongation", "flatness", "sphericity_wadell", "sphericity_intercept", "convexity"):
        assert getattr(r2.indices, name) == pytest.approx(getattr(r1.indices, name), rel=1e-6)


def test_mesh_descriptors_rotation_invariant():
    m = ellipsoid_mesh(9, 5, 3, 4)
    rng = np.random.default_rng(1)

    def desc(mesh):
        b = min_bounding_box(mesh)
        v, a = mesh_volume(mesh), mesh_surface_area(mesh)
        return [b.S, b.I, b.L, b.I / b.L, b.S / b.I, sphericity_wadell(v, a),
                sphericity_intercept(b.S, b.I, b.L), convexity(mesh)]

    ref = desc(m)
    for _ in range(5):
        rot = Rotation.random(random_state=rng).as_matrix()
        assert desc(m.transformed(rot)) == pytest.approx(ref, rel=0.005)


def test_record_invariants():
    idx = ShapeIndices(0.5, 0.5, "Bladed", 0.8, 0.5, 1.0)
    ParticleRecord("p", "r", "reconstructed", 1, 2, 4, 3, 10, idx)
    with pytest.raises(OrderViolation):
        ParticleRecord("p", "r", "reconstructed", 2, 1, 4, 3, 10, idx)
    with pytest.raises(ValueError):
        ParticleRecord("p", "r", "camera", 1, 2, 4, 3, 10, idx)
