import numpy as np
import pytest

from bayes_elliptic.fem import ForwardOperator
from bayes_elliptic.mesh import DISK_RADIUS, NodalField, interpolation_matrix
from bayes_elliptic.model import (FourBumps, LogLikelihood, ObservationSet, generate_data,
                                  ground_truth_field, log_likelihood, uniform_design)


@pytest.fixture(scope="module")
def data_1000(disk_mesh):
    f0 = ground_truth_field(disk_mesh)
    return f0, generate_data(disk_mesh, f0, 1.0, 1000, 0.001, seed=7)


def test_four_bumps_values():
    fb = FourBumps()
    assert fb([[0.25, 0.25]])[0] == pytest.approx(2.0, abs=1e-10)
    assert fb([[0.0, 0.0]])[0] == pytest.approx(1 + 4 * np.exp(-12.5), rel=1e-15)
    assert abs(fb([[0.55, 0.0]])[0] - 1) < 1e-4


def test_truth_range(disk_mesh):
    f0 = ground_truth_field(disk_mesh).values
    assert f0.min() >= 1 and f0.max() <= 2 + 1e-9
    fb = f0[disk_mesh.boundary_nodes] - 1
    # closest boundary approach to a bump centre is on the diagonal
    d2 = (10 * (DISK_RADIUS / np.sqrt(2) - 0.25)) ** 2 * 2
    assert fb.max() <= np.exp(-d2) * 1.01 + 1e-6


def test_noiseless_data(disk_mesh):
    f0 = ground_truth_field(disk_mesh)
    obs = generate_data(disk_mesh, f0, 1.0, 50, 0.0, seed=1)
    u = ForwardOperator(disk_mesh, 1.0).solve(f0.values)
    np.testing.assert_array_equal(obs.Y, interpolation_matrix(disk_mesh, obs.X) @ u)


def test_noise_variance(disk_mesh, data_1000):
    f0, obs = data_1000
    resid = obs.Y - LogLikelihood(disk_mesh, obs).predict(f0)
    assert resid.var(ddof=1) == pytest.approx(1e-6, rel=0.10)


def test_design_uniform(disk_mesh):
    X = uniform_design(disk_mesh, 10_000, np.random.default_rng(3))
    assert np.all(disk_mesh.contains(X))
    assert np.all(np.abs(X.mean(axis=0)) < 0.02)
    # uniform on the disk: P(r <= R/2) = 1/4
    assert np.mean(np.hypot(*X.T) <= DISK_RADIUS / 2) == pytest.approx(0.25, abs=0.015)


def test_same_seed_identical(disk_mesh):
    f0 = ground_truth_field(disk_mesh)
    a = generate_data(disk_mesh, f0, 1.0, 100, 0.001, seed=5)
    b = generate_data(disk_mesh, f0, 1.0, 100, 0.001, seed=5)
    assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()


def test_perfect_fit_and_single_observation(disk_mesh):
    f = NodalField(np.full(disk_mesh.M, 1.5), disk_mesh)
    X = np.array([[0.1, 0.2], [-0.3, 0.05]])
    Y = LogLikelihood(disk_mesh, ObservationSet(X, np.zeros(2), 0.1)).predict(f)
    assert log_likelihood(ObservationSet(X, Y, 0.01), f) == 0.0
    r = 0.003
    one = ObservationSet(X[:1], Y[:1] + r, 0.01)
    assert log_likelihood(one, f) == pytest.approx(-r ** 2 / (2 * 0.01 ** 2), rel=1e-9)


def test_permutation_invariance(disk_mesh, data_1000):
    f0, obs = data_1000
    perm = np.random.default_rng(0).permutation(obs.n)
    shuffled = ObservationSet(obs.X[perm], obs.Y[perm], obs.sigma)
    f = NodalField(f0.values * 1.01, disk_mesh)
    assert log_likelihood(shuffled, f) == pytest.approx(log_likelihood(obs, f), rel=1e-12)


def test_truth_loglik_near_chi_square_mean(disk_mesh, data_1000):
    f0, obs = data_1000
    ll = LogLikelihood(disk_mesh, obs)(f0)
    assert abs(ll + obs.n / 2) <= 3 * np.sqrt(obs.n / 2)


def test_sigma_zero_has_no_likelihood(disk_mesh):
    with pytest.raises(ValueError):
        LogLikelihood(disk_mesh, ObservationSet(np.zeros((1, 2)), [0.0], 0.0))
    with pytest.raises(ValueError):
        ObservationSet(np.zeros((1, 2)), [0.0], -1.0)


def test_shape_checks():
    with pytest.raises(ValueError):
        ObservationSet(np.zeros((3, 2)), np.zeros(2), 0.1)


def test_subset_is_prefix(data_1000):
    _, obs = data_1000
    sub = obs.subset(100)
    np.testing.assert_array_equal(sub.X, obs.X[:100])
    with pytest.raises(ValueError):
        obs.subset(1001)


def test_csv_roundtrip(tmp_path, data_1000):
    _, obs = data_1000
    p = tmp_path / "data.csv"
    obs.to_csv(p)
    assert p.read_text().splitlines()[0] == "x,y,value"
    back = ObservationSet.from_csv(p, obs.sigma)
    np.testing.assert_array_equal(back.X, obs.X)
    np.testing.assert_array_equal(back.Y, obs.Y)
