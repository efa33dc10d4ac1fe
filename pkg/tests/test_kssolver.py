import numpy as np
import pytest

import pyFedFlow as pff


def naive_dft(x):
    N = len(x)
    j = np.arange(N)
    return np.exp(-2j * np.pi * np.outer(j, j) / N) @ x


def test_wavenumbers_ordering_and_nyquist():
    np.testing.assert_allclose(pff.wavenumbers(4, 2 * np.pi), [0.0, 1.0, 2.0, -1.0])
    k = pff.wavenumbers(64, 22.0)
    assert k[0] == 0.0
    assert k[1] == pytest.approx(2 * np.pi / 22.0)
    assert k[32] > 0
    assert k[33] == pytest.approx(-k[31])


@pytest.mark.parametrize("N, L", [(6, 1.0), (64, 0.0), (64, -3.0)])
def test_wavenumbers_rejects_bad_arguments(N, L):
    with pytest.raises(ValueError):
        pff.wavenumbers(N, L)


@pytest.mark.parametrize("N", [8, 64])
def test_dft_matches_naive_oracle(N):
    rng = np.random.default_rng(N)
    for _ in range(100):
        x = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        X = pff.dft_forward(x)
        np.testing.assert_allclose(X, naive_dft(x), rtol=0, atol=1e-12 * N)
        np.testing.assert_allclose(pff.dft_inverse_complex(X), x, rtol=0, atol=1e-12)


def test_dft_inverse_of_real_field_is_real(rng):
    u = rng.standard_normal(64)
    np.testing.assert_allclose(pff.dft_inverse(pff.dft_forward(u)), u, atol=1e-13)
    assert pff.check_conjugate_symmetry(pff.dft_forward(u))


def test_dft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        pff.dft_forward(np.zeros(12))


def test_linear_symbol_values():
    k = np.array([0.0, 1.0, 2.0])
    np.testing.assert_allclose(pff.linear_symbol(k), [0.0, 0.0, -12.0])


def test_etdrk4_coefficients_zero_symbol_limits():
    h = 0.1
    c = pff.etdrk4_coefficients(np.array([0.0]), h)
    assert c.E[0].real == pytest.approx(1.0)
    assert c.Q[0].real == pytest.approx(h / 2, rel=1e-12)
    assert c.f1[0].real == pytest.approx(h / 6, rel=1e-12)
    assert c.f2[0].real == pytest.approx(h / 6, rel=1e-12)
    assert c.f3[0].real == pytest.approx(h / 6, rel=1e-12)


def test_etdrk4_coefficients_real_for_real_symbols():
    k = pff.wavenumbers(64, 22.0)
    c = pff.etdrk4_coefficients(pff.linear_symbol(k), 2.5e-3)
    for coefficient in (c.Q, c.f1, c.f2, c.f3):
        assert np.all(np.isfinite(coefficient))
        assert np.all(coefficient.imag == 0.0)


def test_etdrk4_coefficients_needs_enough_contour_points():
    with pytest.raises(ValueError):
        pff.etdrk4_coefficients(np.array([0.0, -1.0]), 0.1, M=8)


def test_nonlinear_term_zeroes_nyquist(rng):
    k = pff.wavenumbers(64, 22.0)
    u_hat = pff.dft_forward(rng.standard_normal(64))
    assert pff.nonlinear_term(u_hat, k)[32] == 0.0
    assert pff.nonlinear_term(u_hat, k, dealias=True)[32] == 0.0


def test_pure_linear_flow_is_exact():
    k = pff.wavenumbers(64, 22.0)
    symbols = pff.linear_symbol(k)
    h = 2.5e-3
    coeffs = pff.etdrk4_coefficients(symbols, h)
    x = 22.0 * np.arange(64) / 64
    u_hat0 = pff.enforce_conjugate_symmetry(pff.dft_forward(np.cos(2 * np.pi * x / 22.0) * (1 + np.sin(2 * np.pi * x / 22.0))))
    state = pff.SpectralState(u_hat=u_hat0, t=0.0)
    for _ in range(400):
        state = pff.step(state, coeffs, k, nonlinear=np.zeros_like)
    exact = np.exp(symbols * 400 * h) * u_hat0
    np.testing.assert_allclose(state.u_hat, exact, rtol=1e-8, atol=1e-300)
    assert state.t == pytest.approx(1.0)


def test_fourth_order_convergence():
    x = 22.0 * np.arange(64) / 64
    u0 = np.cos(2 * np.pi * x / 22.0) * (1 + np.sin(2 * np.pi * x / 22.0))

    def terminal(dt):
        params = pff.KSParams(dt=dt, sample_interval=1.0)
        return pff.simulate(params, u0, 0.0, 1.0).snapshots[-1]

    reference = terminal(0.00625 / 4)
    coarse_error = np.max(np.abs(terminal(0.0125) - reference))
    fine_error = np.max(np.abs(terminal(0.00625) - reference))
    assert coarse_error / fine_error >= 12.0


def test_step_raises_blowup_with_time():
    k = pff.wavenumbers(8, 22.0)
    coeffs = pff.etdrk4_coefficients(pff.linear_symbol(k), 0.1)
    u_hat = np.zeros(8, dtype=np.complex128)
    u_hat[1] = np.nan
    with pytest.raises(pff.NumericalBlowupError) as info:
        pff.step(pff.SpectralState(u_hat=u_hat, t=3.5), coeffs, k)
    assert info.value.t == 3.5


def test_random_initial_condition_statistics():
    u0 = pff.random_initial_condition(pff.KSParams(seed=7))
    assert u0.mean() == pytest.approx(0.0, abs=1e-14)
    assert np.sqrt(np.mean(u0 ** 2)) == pytest.approx(0.1)
    np.testing.assert_array_equal(u0, pff.random_initial_condition(pff.KSParams(seed=7)))


def test_simulate_sample_times_and_count(coarse_params):
    u0 = pff.random_initial_condition(coarse_params)
    traj = pff.simulate(coarse_params, u0, 0.0, 5.0)
    assert len(traj) == 20
    assert traj.snapshots.shape == (20, 64)
    assert traj.times[0] == pytest.approx(0.25)
    assert traj.times[-1] == pytest.approx(5.0)


def test_simulate_is_deterministic(coarse_params):
    u0 = pff.random_initial_condition(coarse_params)
    a = pff.simulate(coarse_params, u0, 0.0, 2.0)
    b = pff.simulate(coarse_params, u0, 0.0, 2.0)
    np.testing.assert_array_equal(a.snapshots, b.snapshots)


def test_simulate_rejects_fractional_segment(coarse_params):
    u0 = pff.random_initial_condition(coarse_params)
    with pytest.raises(ValueError):
        pff.simulate(coarse_params, u0, 0.0, 1.1)
    with pytest.raises(ValueError):
        pff.simulate(coarse_params, u0[:10], 0.0, 1.0)


def test_trajectory_stays_bounded(short_trajectory):
    assert np.all(np.isfinite(short_trajectory.snapshots))
    assert np.max(np.abs(short_trajectory.snapshots)) < 10.0


def test_run_protocol_segments_chain():
    params = pff.KSParams(dt=0.05, transient_start=-5.0)
    transient, production, test = pff.run_protocol(params, production_end=10.0, test_end=15.0)
    assert (len(transient), len(production), len(test)) == (20, 40, 20)
    assert transient.times[-1] == pytest.approx(0.0)
    assert test.times[0] == pytest.approx(10.25)


def test_ksparams_validation():
    with pytest.raises(ValueError):
        pff.KSParams(grid_size=48).validate()
    with pytest.raises(ValueError):
        pff.KSParams(dt=0.1, sample_interval=0.25).validate()
    with pytest.raises(ValueError):
        pff.KSParams(contour_points=8).validate()
    assert pff.with_dt(pff.KSParams(), 0.05).steps_per_sample == 5
    with pytest.raises(ValueError):
        pff.KSParams(grid_size=2).validate()


def test_etdrk4_coefficients_match_direct_formulas():
    h, lam = 0.1, -10.0
    z = h * lam
    ez = np.exp(z)
    c = pff.etdrk4_coefficients(np.array([lam]), h)
    assert c.Q[0].real == pytest.approx(h * (np.exp(z / 2) - 1) / z, abs=1e-10)
    assert c.f1[0].real == pytest.approx(h * (-4 - z + ez * (4 - 3 * z + z ** 2)) / z ** 3, abs=1e-10)
    assert c.f2[0].real == pytest.approx(h * (2 + z + ez * (-2 + z)) / z ** 3, abs=1e-10)
    assert c.f3[0].real == pytest.approx(h * (-4 - 3 * z - z ** 2 + ez * (4 - z)) / z ** 3, abs=1e-10)


def test_etdrk4_coefficients_converged_in_contour_points():
    symbols = pff.linear_symbol(pff.wavenumbers(64, 22.0))
    c32 = pff.etdrk4_coefficients(symbols, 2.5e-3, M=32)
    c64 = pff.etdrk4_coefficients(symbols, 2.5e-3, M=64)
    for name in ("Q", "f1", "f2", "f3"):
        np.testing.assert_allclose(getattr(c64, name), getattr(c32, name), rtol=0, atol=1e-12)


def test_nonlinear_term_of_sine():
    L, N = 22.0, 64
    a = 2 * np.pi / L
    x = L * np.arange(N) / N
    k = pff.wavenumbers(N, L)
    result = pff.nonlinear_term(pff.dft_forward(np.sin(a * x)), k)
    np.testing.assert_allclose(result, pff.dft_forward(-(a / 2) * np.sin(2 * a * x)), rtol=0, atol=1e-10)
    assert np.all(pff.nonlinear_term(np.zeros(N, dtype=np.complex128), k) == 0.0)


def test_step_keeps_zero_state():
    k = pff.wavenumbers(64, 22.0)
    coeffs = pff.etdrk4_coefficients(pff.linear_symbol(k), 0.05)
    state = pff.step(pff.SpectralState(u_hat=np.zeros(64, dtype=np.complex128), t=0.0), coeffs, k)
    assert np.all(state.u_hat == 0.0)
    assert state.t == pytest.approx(0.05)


def test_step_output_is_conjugate_symmetric(rng):
    k = pff.wavenumbers(64, 22.0)
    coeffs = pff.etdrk4_coefficients(pff.linear_symbol(k), 0.05)
    u_hat = pff.dft_forward(rng.standard_normal(64)) + 1e-6j * rng.standard_normal(64)
    assert not pff.check_conjugate_symmetry(u_hat)
    state = pff.step(pff.SpectralState(u_hat=u_hat, t=0.0), coeffs, k)
    assert pff.check_conjugate_symmetry(state.u_hat, tol=1e-14)


def test_enforce_conjugate_symmetry_keeps_real_field_coefficients(rng):
    u_hat = pff.enforce_conjugate_symmetry(pff.dft_forward(rng.standard_normal(64)))
    np.testing.assert_array_equal(pff.enforce_conjugate_symmetry(u_hat), u_hat)
    assert u_hat[0].imag == 0.0
    assert u_hat[32].imag == 0.0


def test_long_coarse_run_stays_real():
    params = pff.KSParams(dt=0.05)
    k = pff.wavenumbers(params.grid_size, params.domain_length)
    coeffs = pff.etdrk4_coefficients(pff.linear_symbol(k), params.dt)
    state = pff.SpectralState(u_hat=pff.dft_forward(pff.random_initial_condition(params)), t=0.0)
    for _ in range(4000):
        state = pff.step(state, coeffs, k, debug=True)
    u = pff.dft_inverse_complex(state.u_hat)
    assert np.max(np.abs(u.imag)) <= 1e-12 * max(1.0, np.max(np.abs(u.real)))
    assert np.max(np.abs(u.real)) < 10.0


def test_full_transient_completes():
    params = pff.KSParams(dt=0.05)
    traj = pff.simulate(params, pff.random_initial_condition(params), params.transient_start, 0.0)
    assert len(traj) == 1000
    assert np.all(np.isfinite(traj.snapshots))
