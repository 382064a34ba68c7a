import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayes_elliptic.mesh import (DISK_RADIUS, MeshError, NodalField, OutsideDomainError,
                                 TriangularMesh, build_disk_mesh, build_polygon_mesh,
                                 disk_node_count, interpolate, interpolation_matrix,
                                 locate_point, read_mesh, write_mesh)


def interior_points(n, rng, frac=0.95):
    r = frac * DISK_RADIUS * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def test_disk_1981_nodes_unit_area(disk_mesh):
    assert abs(disk_mesh.M - 1981) <= 20
    assert abs(disk_mesh.total_area - 1.0) < 0.01


def test_target_3_is_single_inscribed_triangle():
    m = build_disk_mesh(3)
    assert m.M == 3 and m.n_triangles == 1
    assert m.boundary.all()
    np.testing.assert_allclose(np.hypot(*m.node_coords.T), DISK_RADIUS)


def test_target_500_area_from_signed_areas():
    m = build_disk_mesh(500)
    p = m.node_coords[m.triangles]
    # shoelace formula as an independent oracle
    a = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
               - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    assert np.all(a > 0)
    assert abs(a.sum() - 1.0) < 0.01


def test_small_target_rejected():
    with pytest.raises(ValueError):
        build_disk_mesh(2)


def test_edges_shared_by_at_most_two_triangles(disk_mesh):
    t = disk_mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    assert counts.max() <= 2
    single = uniq[counts == 1]
    assert disk_mesh.boundary[single].all()
    # boundary edges lie on the circle
    np.testing.assert_allclose(np.hypot(*disk_mesh.node_coords[single.ravel()].T), DISK_RADIUS, rtol=1e-12)


def test_boundary_interior_partition(disk_mesh):
    b, i = set(disk_mesh.boundary_nodes), set(disk_mesh.interior_nodes)
    assert not b & i
    assert b | i == set(range(disk_mesh.M))


def test_refinement_diameter_ratio():
    for t in (250, 500, 1000, 2000):
        ratio = build_disk_mesh(t).max_diameter / build_disk_mesh(2 * t).max_diameter
        assert 1.2 <= ratio <= 2.0, (t, ratio)


def test_ring_counts_match():
    for K in (3, 6, 12):
        assert build_disk_mesh(disk_node_count(K)).M == disk_node_count(K)


def test_negative_area_rejected():
    with pytest.raises(MeshError):
        TriangularMesh(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 2, 1]]), np.ones(3, bool))


def test_from_arrays_orients_ccw():
    m = TriangularMesh.from_arrays([[0, 0], [1, 0], [0, 1.0]], [[0, 2, 1]])
    assert m.signed_areas[0] == pytest.approx(0.5)
    assert m.boundary.all()


def test_locate_node_has_unit_weight(disk_mesh):
    for m in (0, 17, disk_mesh.M // 2, disk_mesh.boundary_nodes[3]):
        t, w = locate_point(disk_mesh, disk_mesh.node_coords[m])
        k = list(disk_mesh.triangles[t]).index(m)
        assert w[k] == pytest.approx(1.0, abs=1e-10)


def test_locate_centroid(disk_mesh):
    for t in (0, 5, 1000):
        hit_t, w = locate_point(disk_mesh, disk_mesh.centroids[t])
        assert hit_t == t
        np.testing.assert_allclose(w, 1 / 3, atol=1e-12)


def test_far_point_outside(disk_mesh):
    assert locate_point(disk_mesh, (10, 10)) is None
    with pytest.raises(OutsideDomainError) as err:
        interpolation_matrix(disk_mesh, [[0, 0], [10, 10]])
    assert err.value.index == 1


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.95), st.floats(0, 2 * np.pi))
def test_partition_of_unity(small_mesh, rho, th):
    x = rho * DISK_RADIUS * np.array([np.cos(th), np.sin(th)])
    t, w = locate_point(small_mesh, x)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1) < 1e-12
    # reconstruct the point from its weights
    np.testing.assert_allclose(w @ small_mesh.node_coords[small_mesh.triangles[t]], x, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_affine_reproduction(small_mesh, a, b, c):
    f = NodalField(a + b * small_mesh.node_coords[:, 0] + c * small_mesh.node_coords[:, 1], small_mesh)
    pts = interior_points(20, np.random.default_rng(0))
    np.testing.assert_allclose(f(pts), a + b * pts[:, 0] + c * pts[:, 1], atol=1e-12)


def test_constant_and_linear_examples(disk_mesh, rng):
    pts = interior_points(50, rng)
    np.testing.assert_allclose(NodalField(np.full(disk_mesh.M, 2.5), disk_mesh)(pts), 2.5)
    x1 = NodalField(disk_mesh.node_coords[:, 0], disk_mesh)
    assert interpolate(x1, (0.123, -0.2)) == pytest.approx(0.123, abs=1e-12)


def test_quadratic_interpolation_error(disk_mesh):
    f = NodalField((disk_mesh.node_coords ** 2).sum(axis=1), disk_mesh)
    assert abs(interpolate(f, (0.1, 0.1)) - 0.02) < 1e-3


def test_grid_locator_matches_brute_force(disk_mesh, rng):
    from bayes_elliptic.mesh import PointLocator
    pts = np.concatenate([interior_points(300, rng, 1.0), [[10, 10], [0.6, 0.0]]])
    t1, w1 = PointLocator(disk_mesh, use_grid=False).locate(pts)
    t2, w2 = PointLocator(disk_mesh, use_grid=True).locate(pts)
    inside = t1 >= 0
    np.testing.assert_array_equal(inside, t2 >= 0)
    # points on shared edges may land in either neighbour; the interpolant agrees
    v = disk_mesh.node_coords[:, 0] ** 2
    np.testing.assert_allclose((w1[inside] * v[disk_mesh.triangles[t1[inside]]]).sum(1),
                               (w2[inside] * v[disk_mesh.triangles[t2[inside]]]).sum(1), atol=1e-12)


def test_field_validation(small_mesh):
    with pytest.raises(ValueError):
        NodalField(np.ones(small_mesh.M + 1), small_mesh)
    v = np.ones(small_mesh.M)
    v[3] = np.nan
    with pytest.raises(ValueError):
        NodalField(v, small_mesh)


def test_mesh_roundtrip(tmp_path, small_mesh):
    p = tmp_path / "mesh.txt"
    write_mesh(small_mesh, p)
    assert p.read_text().splitlines()[0] == f"nodes {small_mesh.M} triangles {small_mesh.n_triangles}"
    m2 = read_mesh(p)
    np.testing.assert_array_equal(m2.node_coords, small_mesh.node_coords)
    np.testing.assert_array_equal(m2.triangles, small_mesh.triangles)
    np.testing.assert_array_equal(m2.boundary, small_mesh.boundary)
    assert m2.mesh_id == small_mesh.mesh_id


def test_polygon_mesh_square():
    m = build_polygon_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], 0.1)
    assert m.total_area == pytest.approx(1.0)
    assert m.max_diameter < 0.2
