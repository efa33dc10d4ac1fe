import numpy as np
import pytest

import pyFedFlow as pff


def random_symmetric(rng, n):
    A = rng.standard_normal((n, n))
    return 0.5 * (A + A.T)


@pytest.mark.parametrize("n", [2, 5, 16])
def test_jacobi_eigh_matches_numpy(rng, n):
    A = random_symmetric(rng, n)
    w, V = pff.jacobi_eigh(A)
    np.testing.assert_allclose(w, np.sort(np.linalg.eigvalsh(A))[::-1], atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-10)
    np.testing.assert_allclose(A @ V, V * w, atol=1e-10)


def test_jacobi_eigh_diagonal_input_needs_no_sweeps():
    w, V = pff.jacobi_eigh(np.diag([1.0, 3.0, 2.0]))
    np.testing.assert_array_equal(w, [3.0, 2.0, 1.0])
    np.testing.assert_array_equal(np.abs(V), np.eye(3)[:, [1, 2, 0]])


def test_jacobi_eigh_rejects_asymmetric():
    with pytest.raises(ValueError):
        pff.jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        pff.jacobi_eigh(np.ones((2, 3)))


def test_jacobi_eigh_sweep_cap(rng):
    with pytest.raises(pff.ConvergenceError) as info:
        pff.jacobi_eigh(random_symmetric(rng, 8), max_sweeps=1)
    assert info.value.sweeps == 1


def test_compute_pod_basis_is_orthonormal(splits):
    basis = pff.compute_pod(splits.train)
    assert basis.size == 64
    np.testing.assert_allclose(basis.modes.T @ basis.modes, np.eye(64), atol=1e-10)
    assert np.all(np.diff(basis.eigenvalues) <= 1e-12)
    assert np.all(basis.eigenvalues >= 0.0)
    np.testing.assert_allclose(basis.mean_field, splits.train.mean(axis=0))


def test_compute_pod_needs_two_snapshots():
    with pytest.raises(ValueError):
        pff.compute_pod(np.ones((1, 4)))


def test_compute_pod_uncentred_has_zero_mean_field(rng):
    basis = pff.compute_pod(rng.standard_normal((20, 4)) + 5.0, center=False)
    np.testing.assert_array_equal(basis.mean_field, np.zeros(4))
    assert basis.energy_fraction(1) > 0.9


def test_rank_one_data_is_captured_by_one_mode(rng):
    direction = rng.standard_normal(8)
    X = np.outer(rng.standard_normal(30), direction)
    basis = pff.compute_pod(X, center=False)
    assert pff.reconstruction_mse(basis, X, 1) < 1e-20
    assert basis.energy_fraction(1) == pytest.approx(1.0)


def test_mse_sweep_properties(splits):
    basis = pff.compute_pod(splits.train)
    rows = pff.mse_sweep(basis, splits.train, splits.test, range(1, 65))
    train_mse = np.array([r[1] for r in rows])
    test_mse = np.array([r[2] for r in rows])
    assert np.all(np.diff(train_mse) <= 1e-12)
    assert test_mse[-1] <= 1e-9
    for R, value, _ in rows[:-1]:
        assert value == pytest.approx(pff.truncation_mse(basis, R), rel=1e-8, abs=1e-13)


def test_project_reconstruct_shapes(splits):
    basis = pff.compute_pod(splits.train)
    coefficients = pff.project(basis, splits.test, 8)
    assert coefficients.shape == (len(splits.test), 8)
    assert pff.reconstruct(basis, coefficients, 8).shape == splits.test.shape
    with pytest.raises(ValueError):
        pff.reconstruct(basis, coefficients, 4)


@pytest.mark.parametrize("R", [0, 65, 2.5])
def test_rank_bounds(splits, R):
    basis = pff.compute_pod(splits.train)
    with pytest.raises(ValueError):
        pff.project(basis, splits.test, R)


def test_mean_field_projects_to_zero(splits):
    basis = pff.compute_pod(splits.train)
    coefficients = pff.project(basis, basis.mean_field[None, :], 8)
    np.testing.assert_array_equal(coefficients, np.zeros((1, 8)))


def test_eigenvalues_sum_to_total_variance(splits):
    basis = pff.compute_pod(splits.train)
    deviations = splits.train - splits.train.mean(axis=0)
    total_variance = np.sum(deviations ** 2) / len(splits.train)
    assert np.sum(basis.eigenvalues) == pytest.approx(total_variance, rel=1e-8)
