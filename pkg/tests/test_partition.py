from __future__ import annotations

import math

import numpy as np
import pytest

from patchyhjb.errors import GeometryError
from patchyhjb.partition import (
    ALBREKHT_ID,
    Boundary,
    Piece,
    build_atlas,
    build_ring,
    containment_matrix,
    curve_length,
    evaluate,
    evaluate_many,
    load_atlas,
    locate,
    locate_many,
    newton_project,
    place_patch_points,
    ring_counts,
    save_atlas,
    trace_level_curve,
)
from patchyhjb.problem import QuadraticOracle
from patchyhjb.tensorpoly import CoeffSet

from oracles import distance_to_polyline, points_in_polygon

CIRCLE = CoeffSet((np.zeros(1), np.zeros(2), np.array([1.0, 0.0, 1.0])), np.zeros(2))


def signed_area(P):
    x, y = P[:, 0], P[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


# level curves ----------------------------------------------------------------------------


def test_trace_lqr_ellipse(lqr):
    P = QuadraticOracle.for_problem(lqr).P
    poly = QuadraticOracle(P).coeffs(np.zeros(2), 2)
    pts = trace_level_curve(poly, 0.5, [1.0, 0.0], step=0.02)
    assert np.max(np.abs(np.einsum("ni,ij,nj->n", pts, P, pts) - 1.0)) < 1e-10
    assert signed_area(pts) > 0
    assert np.linalg.norm(pts[-1] - pts[0]) <= 0.02 * 1.0001


def test_trace_circle_circumference():
    pts = trace_level_curve(CIRCLE, 0.5, [0.9, 0.1], step=0.01)
    assert abs(curve_length(pts) - 2 * math.pi) < 1e-6
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)


def test_trace_albrekht_level_residual(doubling_atlas):
    piece = doubling_atlas.albrekht_boundary.pieces[0]
    assert np.max(np.abs(piece.poly(piece.points) - piece.level)) < 1e-10


def test_trace_errors():
    with pytest.raises(ValueError):
        trace_level_curve(CIRCLE, 0.0, [1.0, 0.0])
    with pytest.raises(GeometryError):
        newton_project(CIRCLE, 0.5, [0.0, 0.0])


# point placement ----------------------------------------------------------------------------


def unit_circle(m=2000):
    t = np.linspace(0, 2 * np.pi, m, endpoint=False)
    return np.column_stack([np.cos(t), np.sin(t)])


def chords(P):
    return np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)


def test_place_points_eight_on_unit_circle():
    pts = place_patch_points(unit_circle(), math.pi / 4)
    assert len(pts) == 8
    assert np.max(chords(pts)) < math.pi / 4
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(chords(pts), chords(pts)[0], rtol=1e-6)


def test_place_points_minimum_count():
    assert len(place_patch_points(unit_circle(), 10.0)) == 4


def test_place_points_on_boundary_pieces():
    pts = trace_level_curve(CIRCLE, 0.5, [1.0, 0.0], step=0.01)
    boundary = Boundary([Piece(ALBREKHT_ID, CIRCLE, 0.5, pts)])
    X, owners = place_patch_points(boundary, 0.3)
    assert len(X) == math.ceil(2 * math.pi / 0.3)
    np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-12)
    assert set(owners) == {0}
    with pytest.raises(ValueError):
        place_patch_points(boundary, 0.0)


# rings -------------------------------------------------------------------------------------------


def test_ring_counts():
    assert ring_counts("doubling", 5) == [8, 16, 32, 64, 128]
    assert ring_counts("arclength", 2) == [None, None]
    with pytest.raises(ValueError):
        ring_counts("tripling", 2)


def test_first_ring_eight_points(test_problem):
    atlas = build_atlas(test_problem, 3, 0.5, 1, albrekht_radius=0.25, counts=[8])
    ring = atlas.rings[0]
    assert ring.size == 8
    for p in ring.patches:
        assert p.parent == ALBREKHT_ID
        assert p.cost.blocks[1] @ p.direction < 0


def test_doubling_rule(doubling_atlas):
    assert [r.size for r in doubling_atlas.rings] == [8, 16, 32, 64, 128]


def test_reproduction_patch_count(repro_atlas):
    assert abs(repro_atlas.patch_count - 73) <= 3


def test_lqr_rings_are_exact(lqr_atlas):
    exact = QuadraticOracle(lqr_atlas.albrekht.riccati)
    assert len(lqr_atlas.rings) >= 3
    for p in lqr_atlas.patches():
        assert p.cost.max_abs_diff(exact.coeffs(p.point, 4)) < 1e-10


def test_build_ring_appends(test_problem):
    atlas = build_atlas(test_problem, 3, 0.5, 1, albrekht_radius=0.25, counts=[8])
    with pytest.raises(ValueError):
        build_ring(atlas, atlas.rings[-1].level)
    ring = build_ring(atlas, 1.5 * atlas.rings[-1].level, count=16)
    assert ring.index == 2 and ring.size == 16 and atlas.rings[-1] is ring
    assert all(p.parent[0] == 1 for p in ring.patches)


def test_empty_atlas_covers_albrekht_patch(test_problem, rng):
    atlas = build_atlas(test_problem, 3, 0.5, 0, albrekht_radius=0.25)
    X = rng.uniform(-0.3, 0.3, size=(2000, 2))
    ids = locate_many(atlas, X)
    inside = atlas.albrekht.cost(X) <= atlas.c0
    assert [i is not None for i in ids] == list(inside)


# geometry invariants ---------------------------------------------------------------------------


@pytest.fixture(params=["repro", "doubling"])
def atlas(request, repro_atlas, doubling_atlas):
    return repro_atlas if request.param == "repro" else doubling_atlas


def test_anchors_on_inner_level_curves(atlas):
    for ring in atlas.rings:
        owners = {p.owner: p for p in ring.inner.pieces}
        for a, owner in zip(ring.anchors, ring.anchor_owner):
            piece = owners[owner]
            assert abs(piece.poly(a) - piece.level) < 1e-10


def test_rays_ascend_owner_cost(atlas):
    for ring in atlas.rings:
        for j, p in enumerate(ring.patches):
            geom = ring.geometry(j)
            assert geom.outer_level[1] > geom.inner_level[1]
            for anchor, direction in (geom.cw_ray, geom.ccw_ray):
                assert p.cost.grad(anchor) @ direction > 0


def test_rays_oppose_optimal_direction(atlas):
    problem = atlas.problem
    for ring in atlas.rings:
        for j, (a, u) in enumerate(zip(ring.anchors, ring.directions)):
            ccw = ring.patches[(j + 1) % ring.size]
            xdot = problem.f(a) + problem.g(a) * ccw.control(a)
            np.testing.assert_allclose(u, -xdot / np.linalg.norm(xdot), atol=1e-14)


def test_parent_distance_and_levels(atlas):
    h = atlas.params.h
    levels = [atlas.c0] + [r.level for r in atlas.rings]
    assert all(b > a for a, b in zip(levels, levels[1:]))
    for p in atlas.patches():
        assert np.linalg.norm(p.point - atlas.point_of(p.parent)) <= h
        chain = atlas.chain(p.patch_id)
        assert chain[0] == ALBREKHT_ID and len(chain) == p.patch_id[0] + 1


def test_patch_points_lie_on_previous_boundary(atlas):
    for ring in atlas.rings:
        for p in ring.patches:
            parent_poly = atlas.patch(p.parent).cost
            assert abs(parent_poly(p.point) - ring.inner_level) < 1e-10


# locate / evaluate -----------------------------------------------------------------------------------


def test_locate_origin(repro_atlas):
    assert locate(repro_atlas, [0.0, 0.0]) == ALBREKHT_ID
    assert evaluate(repro_atlas, [0.0, 0.0]) == (0.0, 0.0)
    assert locate(repro_atlas, [5.0, 5.0]) is None
    assert evaluate(repro_atlas, [5.0, 5.0]) is None


def test_lateral_tie_goes_counterclockwise(repro_atlas):
    checked = total = 0
    for ring in repro_atlas.rings:
        for j in range(ring.size):
            a, u, e = ring.anchors[j], ring.directions[j], ring.cut_ends[j]
            t = 0.5 * np.linalg.norm(e - a)
            x = a + t * u
            # make the point sit exactly on the cut line
            assert ring.side(x[None, :])[0, j] == pytest.approx(0.0, abs=1e-15)
            pid = locate(repro_atlas, x)
            total += 1
            if pid is not None and pid[0] == ring.index:
                assert pid == (ring.index, (j + 1) % ring.size)
                checked += 1
    # a few cut midpoints may be claimed by an inner ring's bulge
    assert checked >= 0.9 * total


def test_locate_agrees_with_brute_force(atlas, rng):
    X = rng.uniform(-1, 1, size=(10000, 2))
    M, ids = containment_matrix(atlas, X)
    assert M.sum(axis=1).max() <= 1
    fast = locate_many(atlas, X)
    brute = [ids[i] if row.any() else None for i, row in zip(M.argmax(axis=1), M)]
    assert fast == brute


def test_coverage_inside_outer_boundary(atlas, rng):
    X = rng.uniform(-1, 1, size=(10000, 2))
    outer = atlas.rings[-1].outer.polygon()
    near = distance_to_polyline(outer, X) < 1e-3
    inside = points_in_polygon(outer, X) & ~near
    outside = ~points_in_polygon(outer, X) & ~near
    ids = locate_many(atlas, X)
    covered = np.array([i is not None for i in ids])
    assert covered[inside].all()
    assert not covered[outside].any()


def test_lqr_evaluate_exact(lqr_atlas, rng):
    P = lqr_atlas.albrekht.riccati
    X = rng.uniform(-1, 1, size=(3000, 2))
    cost, control, ids = evaluate_many(lqr_atlas, X)
    m = np.isfinite(cost)
    assert m.sum() > 500
    exact = 0.5 * np.einsum("ni,ij,nj->n", X[m], P, X[m])
    assert np.max(np.abs(cost[m] - exact)) < 1e-10
    np.testing.assert_allclose(control[m], -(X[m] @ P)[:, 1], atol=1e-10)


# serialization -----------------------------------------------------------------------------------------


def test_save_load_round_trip(repro_atlas, tmp_path, rng):
    path = save_atlas(repro_atlas, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"] + [f"ring_{k}.csv" for k in range(5)]
    back = load_atlas(path)
    assert back.patch_count == repro_atlas.patch_count
    X = rng.uniform(-1, 1, size=(3000, 2))
    a = evaluate_many(repro_atlas, X)
    b = evaluate_many(back, X)
    assert a[2] == b[2]
    np.testing.assert_array_equal(a[0], b[0])
    header = (tmp_path / "ring_1.csv").read_text().splitlines()[0]
    assert header == "patch,parent,x1,x2,c_in,c_out,poly,order,e1,e2,value"
