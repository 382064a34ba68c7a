import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayes_elliptic.fem import (EllipticityError, ForwardOperator, assemble_load, assemble_mass,
                                assemble_stiffness, evaluate_solution, local_stiffness,
                                solve_forward)
from bayes_elliptic.mesh import DISK_RADIUS, TriangularMesh, build_disk_mesh, disk_node_count


def radial_exact(p):
    return ((p ** 2).sum(axis=-1) - DISK_RADIUS ** 2) / 4


def test_reference_triangle_local_matrix():
    m = TriangularMesh(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 1, 2]]), np.ones(3, bool))
    expected = np.array([[1, -.5, -.5], [-.5, .5, 0], [-.5, 0, .5]])
    np.testing.assert_allclose(local_stiffness(m)[0], expected, atol=1e-15)
    np.testing.assert_allclose(assemble_stiffness(m, np.ones(3), restrict=False).toarray(), expected, atol=1e-15)


def test_row_sums_vanish(small_mesh):
    K = assemble_stiffness(small_mesh, np.ones(small_mesh.M), restrict=False)
    assert np.abs(K.sum(axis=1)).max() < 1e-10


def test_linear_in_f(small_mesh):
    K1 = assemble_stiffness(small_mesh, np.ones(small_mesh.M))
    K2 = assemble_stiffness(small_mesh, 2 * np.ones(small_mesh.M))
    np.testing.assert_array_equal(K2.toarray(), 2 * K1.toarray())


def test_symmetric_positive_definite(small_mesh, rng):
    f = np.exp(rng.standard_normal(small_mesh.M))
    K = assemble_stiffness(small_mesh, f).toarray()
    np.testing.assert_array_equal(K, K.T)
    assert np.all(np.diag(K) > 0)
    assert np.linalg.eigvalsh(K).min() > 0


def test_nonpositive_f_rejected(small_mesh):
    f = np.ones(small_mesh.M)
    f[4] = 0.0
    with pytest.raises(EllipticityError):
        ForwardOperator(small_mesh).solve(f)


def test_load_vector(disk_mesh):
    assert np.all(assemble_load(disk_mesh, 0.0) == 0)
    b1 = assemble_load(disk_mesh, 1.0)
    assert b1.sum() == pytest.approx(disk_mesh.signed_areas.sum(), rel=1e-12)
    assert abs(b1.sum() - 1) < 0.01
    np.testing.assert_allclose(assemble_load(disk_mesh, 3.0), 3 * b1, rtol=1e-14)
    # callable source, affine: centroid rule is exact for the integral
    bx = assemble_load(disk_mesh, lambda p: 1 + p[:, 0])
    tri = disk_mesh.node_coords[disk_mesh.triangles]
    assert bx.sum() == pytest.approx(np.sum(disk_mesh.signed_areas * (1 + tri[:, :, 0].mean(1))), rel=1e-12)


def test_mass_matrix_integrates_constants(small_mesh):
    Mm = assemble_mass(small_mesh)
    one = np.ones(small_mesh.M)
    assert one @ (Mm @ one) == pytest.approx(small_mesh.total_area, rel=1e-12)


def test_radial_solution(disk_mesh):
    sol = solve_forward(disk_mesh, np.ones(disk_mesh.M), 1.0)
    err = np.abs(sol.u.values - radial_exact(disk_mesh.node_coords)).max()
    assert err <= 1e-3
    assert evaluate_solution(sol, [[0, 0]])[0] == pytest.approx(-1 / (4 * np.pi), abs=1e-3)
    assert evaluate_solution(sol, [[0.2, 0.1]])[0] == pytest.approx((0.05 - 1 / np.pi) / 4, abs=1e-3)


def test_boundary_values_zero_and_residual(disk_mesh, rng):
    f = np.exp(0.5 * rng.standard_normal(disk_mesh.M))
    sol = solve_forward(disk_mesh, f, 1.0)
    assert np.all(sol.u.values[disk_mesh.boundary_nodes] == 0.0)
    b = assemble_load(disk_mesh, 1.0)[disk_mesh.interior_nodes]
    assert sol.residual_norm / np.linalg.norm(b) <= 1e-10
    # node evaluation returns nodal values, boundary nodes give 0
    nodes = [disk_mesh.interior_nodes[10], disk_mesh.boundary_nodes[0]]
    np.testing.assert_allclose(evaluate_solution(sol, disk_mesh.node_coords[nodes]),
                               [sol.u.values[nodes[0]], 0.0], atol=1e-14)


def test_zero_source_and_scaling(small_mesh):
    assert np.all(solve_forward(small_mesh, np.ones(small_mesh.M), 0.0).u.values == 0)
    u1 = solve_forward(small_mesh, np.ones(small_mesh.M), 1.0).u.values
    u2 = solve_forward(small_mesh, 2 * np.ones(small_mesh.M), 1.0).u.values
    np.testing.assert_allclose(u2, u1 / 2, rtol=1e-10, atol=1e-16)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 3.0))
def test_maximum_principle(small_mesh, seed, scale):
    r = np.random.default_rng(seed)
    f = np.exp(scale * r.standard_normal(small_mesh.M))
    s_vals = r.random(small_mesh.n_triangles)
    u = ForwardOperator(small_mesh, lambda p: s_vals).solve(f)
    assert np.all(u <= 1e-15)


def test_forward_operator_matches_direct_assembly(small_mesh, rng):
    f = np.exp(rng.standard_normal(small_mesh.M))
    op = ForwardOperator(small_mesh, 1.0)
    np.testing.assert_allclose(op.stiffness(f).toarray(), assemble_stiffness(small_mesh, f).toarray(),
                               rtol=1e-13, atol=1e-13)
    K = assemble_stiffness(small_mesh, f).toarray()
    b = assemble_load(small_mesh, 1.0)[small_mesh.interior_nodes]
    np.testing.assert_allclose(op.solve(f)[small_mesh.interior_nodes], np.linalg.solve(K, -b), rtol=1e-9)


def test_convergence_order():
    errs, hs = [], []
    for K in (12, 24, 48):
        m = build_disk_mesh(disk_node_count(K))
        u = ForwardOperator(m, 1.0).solve(np.ones(m.M))
        errs.append(np.abs(u - radial_exact(m.node_coords)).max())
        hs.append(m.max_diameter)
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert np.all((orders >= 1.6) & (orders <= 2.4)), orders
