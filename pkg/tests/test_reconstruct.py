import time

import numpy as np
import pytest

from particle3d.errors import DimensionMismatch, EmptyIntersection
from particle3d.geometry import Silhouette, VoxelGrid, project
from particle3d.reconstruct import (TriProjection, intersect_extrusions, reconstruct_particle,
                                    reconstruct_with_report, reproject_check, resample_silhouette)
from particle3d.synth import AnalyticSolid, render_silhouette, voxelize

from oracles import tricylinder_volume


def sil(mask, view, offset=(0, 0), pitch=1.0):
    return Silhouette(np.asarray(mask, bool), pitch, view, offset)


def views_of(grid):
    return TriProjection.aligned(*(project(grid, a) for a in "XYZ"))


def test_full_squares_give_full_cube():
    n = 6
    full = np.ones((n, n), bool)
    g = intersect_extrusions(TriProjection(sil(full, "A"), sil(full, "B"), sil(full, "C")))
    assert g.count == n ** 3


def test_conjunction_with_empty_view():
    full = np.ones((5, 5), bool)
    g = intersect_extrusions(TriProjection(sil(np.zeros((5, 5)), "A"), sil(full, "B"), sil(full, "C")))
    assert g.count == 0


def test_occupancy_rule_matches_definition():
    rng = np.random.default_rng(2)
    a, b, c = rng.random((3, 7, 7)) < 0.6
    tp = TriProjection(sil(a, "A"), sil(b, "B"), sil(c, "C"))
    g = intersect_extrusions(tp)
    for x in range(7):
        for y in range(7):
            for z in range(7):
                assert g.occupancy[x, y, z] == (a[y, z] and b[x, z] and c[x, y])


def test_tricylinder_from_sphere_views():
    r = 128
    sphere = AnalyticSolid("sphere", {"r": float(r)})
    views = [render_silhouette(sphere, v, 1.0) for v in "ABC"]
    tp = TriProjection.aligned(*views)
    g = intersect_extrusions(tp)
    assert g.volume == pytest.approx(tricylinder_volume(r), rel=0.02)
    assert reproject_check(g, tp).per_view_deficit == (0.0, 0.0, 0.0)


def test_real_object_is_consistent():
    g = voxelize(AnalyticSolid("ellipsoid", {"a": 9, "b": 6, "c": 4}, translation=(3, 2, 1)), 1.0)
    tp = views_of(g)
    rep = reproject_check(intersect_extrusions(tp), tp)
    assert rep.consistent and rep.max_deficit == 0


def test_contradictory_views():
    a = sil([[True, False], [False, False]], "A")   # y=0, z=0
    b = sil([[False, True], [False, False]], "B")   # x=0, z=1
    c = sil(np.ones((2, 2)), "C")
    tp = TriProjection(a, b, c)
    g = intersect_extrusions(tp)
    assert g.count == 0
    rep = reproject_check(g, tp)
    assert rep.per_view_deficit[0] == 1 and rep.per_view_deficit[1] == 1
    assert rep.per_view_deficit[2] > 0
    with pytest.raises(EmptyIntersection):
        reconstruct_particle(tp)


def test_speck_in_one_view_adds_nothing():
    g = voxelize(AnalyticSolid("box", {"w": 6, "d": 6, "h": 6}, translation=(5, 5, 5)), 1.0)
    a, b, c = (project(g, ax) for ax in "XYZ")
    speck = np.zeros((12, 12), bool)
    speck[:a.mask.shape[0], :a.mask.shape[1]] = a.mask
    speck[11, 11] = True
    a2 = Silhouette(speck, 1.0, "A", a.offset)
    out = reconstruct_particle(TriProjection.aligned(a2, b, c))
    assert out.voxel_set() == g.voxel_set()


def test_two_particles_merged_into_one_projection():
    big = voxelize(AnalyticSolid("box", {"w": 6, "d": 6, "h": 6}, translation=(3, 3, 3)), 1.0)
    small = voxelize(AnalyticSolid("box", {"w": 4, "d": 4, "h": 4}, translation=(22, 22, 22)), 1.0)
    occ = np.zeros((26, 26, 26), bool)
    for g in (big, small):
        x0, y0, z0 = g.index_origin
        dx, dy, dz = g.dims
        occ[x0:x0 + dx, y0:y0 + dy, z0:z0 + dz] |= g.occupancy
    both = VoxelGrid(occ, 1.0)
    tp = views_of(both)
    hull = intersect_extrusions(tp)
    from particle3d.geometry import connected_components_3d
    ncomp = len(connected_components_3d(hull))
    assert 2 <= ncomp <= 8
    grid, rep, n = reconstruct_with_report(tp)
    assert n == ncomp
    assert grid.voxel_set() == big.voxel_set()
    assert rep.max_deficit > 0


def test_idempotence():
    g = voxelize(AnalyticSolid("lprism", {"w": 12, "d": 10, "h": 6, "notch": 5},
                               translation=(4, -3, 2)), 1.0)
    once = reconstruct_particle(views_of(g))
    twice = reconstruct_particle(views_of(once))
    assert once.voxel_set() == twice.voxel_set()


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        TriProjection(sil(np.ones((3, 4)), "A"), sil(np.ones((3, 4)), "B"), sil(np.ones((3, 2)), "C"))
    with pytest.raises(DimensionMismatch):
        TriProjection(sil(np.ones((3, 3)), "B"), sil(np.ones((3, 3)), "B"), sil(np.ones((3, 3)), "C"))
    with pytest.raises(DimensionMismatch):
        TriProjection(sil(np.ones((3, 3)), "A"), sil(np.ones((3, 3)), "B", pitch=2.0),
                      sil(np.ones((3, 3)), "C"))


def test_aligned_uses_offsets():
    g = voxelize(AnalyticSolid("box", {"w": 4, "d": 6, "h": 8}, translation=(100, -50, 20)), 1.0)
    tp = views_of(g)
    assert tp.index_box == ((98, 102), (-53, -47), (16, 24))
    assert reconstruct_particle(tp).voxel_set() == g.voxel_set()


def test_resample_halves_pitch():
    s = sil(np.ones((2, 3)), "A", offset=(1, 0), pitch=2.0)
    r = resample_silhouette(s, 1.0)
    assert r.mask.shape == (4, 6) and r.mask.all()
    assert r.offset == (2, 0)


def test_empty_view_raises():
    with pytest.raises(EmptyIntersection):
        reconstruct_particle(TriProjection(sil(np.zeros((2, 2)), "A"), sil(np.ones((2, 2)), "B"),
                                           sil(np.ones((2, 2)), "C")))


def test_tricylinder_runtime():
    r = 128
    sphere = AnalyticSolid("sphere", {"r": float(r)})
    views = [render_silhouette(sphere, v, 1.0) for v in "ABC"]
    t0 = time.perf_counter()
    reconstruct_particle(TriProjection.aligned(*views))
    assert time.perf_counter() - t0 < 5.0
