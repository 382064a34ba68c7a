import numpy as np
import pytest
from scipy import special

from bayes_elliptic.eigen import (bessel_j_zeros, disk_modes, eigen_disk_analytic,
                                  eigen_fem, mcmahon, weyl_fit)
from bayes_elliptic.fem import assemble_mass, assemble_stiffness
from bayes_elliptic.mesh import DISK_RADIUS


@pytest.fixture(scope="module")
def fem_basis(disk_mesh):
    return eigen_fem(disk_mesh, 1000.0)


@pytest.fixture(scope="module")
def analytic_basis(disk_mesh):
    return eigen_disk_analytic(DISK_RADIUS, 1000.0, disk_mesh)


@pytest.mark.parametrize("m", [0, 1, 2, 5, 13, 25])
def test_bessel_zeros_match_reference(m):
    z = bessel_j_zeros(m, count=8)
    np.testing.assert_allclose(z, special.jn_zeros(m, 8), rtol=1e-12)
    np.testing.assert_allclose(special.jv(m, z), 0, atol=1e-12)


def test_bessel_zeros_below_bound():
    z = bessel_j_zeros(3, x_max=20.0)
    ref = special.jn_zeros(3, 10)
    np.testing.assert_allclose(z, ref[ref <= 20.0], rtol=1e-12)
    assert len(bessel_j_zeros(40, x_max=20.0)) == 0


def test_mcmahon_is_close_for_large_k():
    assert mcmahon(0, 20) == pytest.approx(special.jn_zeros(0, 20)[-1], rel=1e-6)


def test_fundamental_eigenvalue():
    b = eigen_disk_analytic(DISK_RADIUS, 100.0)
    assert b.lambdas[0] == pytest.approx(2.404825557695773 ** 2 * np.pi, rel=1e-12)
    assert b.lambdas[0] == pytest.approx(18.17, abs=0.01)


def test_below_fundamental_raises():
    with pytest.raises(ValueError):
        eigen_disk_analytic(DISK_RADIUS, 10.0)


def test_analytic_count_independent_oracle():
    # count of (m, k) pairs with (j_mk / R)^2 <= 1000, sin/cos doubling for m > 0
    x_max = np.sqrt(1000.0) * DISK_RADIUS
    count = 0
    for m in range(40):
        n = int(np.sum(special.jn_zeros(m, 20) <= x_max))
        count += n if m == 0 else 2 * n
    assert eigen_disk_analytic(DISK_RADIUS, 1000.0).J == count


def test_analytic_ordering_and_pairs():
    b = eigen_disk_analytic(DISK_RADIUS, 1000.0)
    assert np.all(np.diff(b.lambdas) >= 0) and b.lambdas[0] > 0
    assert b.lambdas[0] < b.lambdas[1]
    for i, mode in enumerate(b.labels):
        if mode.m > 0 and mode.branch == "cos":
            assert b.labels[i + 1].branch == "sin"
            assert abs(b.lambdas[i + 1] - b.lambdas[i]) / b.lambdas[i] <= 1e-3


def test_analytic_modes_are_eigenfunctions():
    # finite-difference Laplacian of a closed-form mode equals -lambda * mode
    for mode in disk_modes(DISK_RADIUS, 300.0)[:6]:
        x = np.array([[0.13, -0.21]])
        h = 1e-4
        lap = (mode(x + [h, 0]) + mode(x - [h, 0]) + mode(x + [0, h]) + mode(x - [0, h]) - 4 * mode(x)) / h ** 2
        assert lap[0] == pytest.approx(-mode.eigenvalue * mode(x)[0], rel=1e-4, abs=1e-4)


def test_analytic_normalisation(disk_mesh, analytic_basis):
    Mm = assemble_mass(disk_mesh)
    G = analytic_basis.vectors[:, :10].T @ Mm @ analytic_basis.vectors[:, :10]
    # continuous-L2 normalisation; the inscribed polygon loses ~1% of the mass
    np.testing.assert_allclose(G, np.eye(10), atol=2e-2)
    assert np.all(analytic_basis.vectors[disk_mesh.boundary_nodes] == 0)


def test_fem_first_ten_within_one_percent(fem_basis, analytic_basis):
    rel = np.abs(fem_basis.lambdas[:10] / analytic_basis.lambdas[:10] - 1)
    assert rel.max() < 0.01


def test_fem_improves_under_refinement(analytic_basis):
    from bayes_elliptic.mesh import build_disk_mesh
    e = []
    for M in (500, 2000):
        b = eigen_fem(build_disk_mesh(M), 200.0)
        e.append(abs(b.lambdas[0] / analytic_basis.lambdas[0] - 1))
    assert e[1] < e[0]


def test_fem_count_and_positivity(fem_basis):
    assert abs(fem_basis.J - 69) <= 2
    assert np.all(fem_basis.lambdas > 0)
    assert np.all(fem_basis.lambdas <= 1000)


def test_fem_orthonormal_and_rayleigh(disk_mesh, fem_basis):
    V = fem_basis.vectors[disk_mesh.interior_nodes]
    Mm = assemble_mass(disk_mesh, restrict=True)
    K = assemble_stiffness(disk_mesh, np.ones(disk_mesh.M))
    np.testing.assert_allclose(V.T @ Mm @ V, np.eye(fem_basis.J), atol=1e-6)
    rq = np.einsum("ij,ij->j", V, K @ V) / np.einsum("ij,ij->j", V, Mm @ V)
    assert np.max(np.abs(rq - fem_basis.lambdas) / fem_basis.lambdas) <= 1e-6
    assert np.all(fem_basis.vectors[disk_mesh.boundary_nodes] == 0)


def test_fem_degenerate_pairs(fem_basis, analytic_basis):
    # lambda_2, lambda_3 is the m = 1 pair
    l = fem_basis.lambdas
    assert abs(l[2] - l[1]) / l[1] <= 1e-2
    assert abs(l[4] - l[3]) / l[3] <= 1e-2


def test_weyl_fits():
    lam = 4 * np.pi * np.arange(1, 70)
    slope, intercept, r2 = weyl_fit(lam)
    assert slope == pytest.approx(4 * np.pi) and r2 == pytest.approx(1.0)
    assert weyl_fit(eigen_disk_analytic(DISK_RADIUS, 1000.0).truncate(69))[2] > 0.99
    with pytest.raises(ValueError):
        weyl_fit(np.array([1.0, 2.0]))


def test_truncate_bounds(analytic_basis):
    assert analytic_basis.truncate(5).J == 5
    with pytest.raises(ValueError):
        analytic_basis.truncate(0)

