"""
Kuramoto-Sivashinsky trajectories on an L-periodic domain.

    u_t = -u_xxxx - u_xx - u u_x

is integrated pseudo-spectrally with fourth-order exponential time differencing
(ETDRK4). The stiff linear part is treated exactly through per-mode coefficients
evaluated by contour integrals; the nonlinear term is evaluated in physical space.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import NumericalBlowupError
from .log import get_logger
from .utils import *

logger = get_logger(__name__)

#: Physical-field imaginary leakage tolerated before a sample is stored as real.
REALNESS_TOLERANCE = 1e-10


@dataclass(frozen=True)
class KSParams:
    """
    Domain, grid and time constants of a KS run.

    The defaults reproduce the reference experiment: L=22, N=64, dt=2.5e-3,
    transient from t=-250, samples every 0.25 time units.
    """
    domain_length: float = 22.0
    grid_size: int = 64
    dt: float = 2.5e-3
    transient_start: float = -250.0
    sample_interval: float = 0.25
    contour_points: int = 32
    seed: int = 0
    dealias: bool = False

    def validate(self) -> "KSParams":
        check_positive(self.domain_length, "domain_length")
        check_power_of_two(self.grid_size, "grid_size")
        if self.grid_size < 4:
            raise ValueError("`grid_size` should be at least 4 (the initial condition needs a Fourier mode below Nyquist).")
        check_positive(self.dt, "dt")
        check_positive(self.sample_interval, "sample_interval")
        integer_ratio(self.sample_interval, self.dt, "sample_interval")
        if not isinstance(self.contour_points, int) or self.contour_points < 16:
            raise ValueError("`contour_points` should be an integer value of at least 16.")
        if not isinstance(self.seed, (int, np.integer)):
            raise ValueError("`seed` should be an integer value.")
        return self

    @property
    def steps_per_sample(self) -> int:
        return integer_ratio(self.sample_interval, self.dt, "sample_interval")

    @property
    def grid(self) -> np.ndarray:
        return self.domain_length * np.arange(self.grid_size) / self.grid_size


@dataclass
class SpectralState:
    """Fourier coefficients of u (full length-N DFT ordering) at time t."""
    u_hat: np.ndarray
    t: float


@dataclass(frozen=True)
class ETDRK4Coeffs:
    """Per-mode ETDRK4 coefficients for step size `h`."""
    E: np.ndarray
    E2: np.ndarray
    Q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    h: float


@dataclass
class Trajectory:
    """Time-ordered physical-space samples of u."""
    snapshots: np.ndarray
    times: np.ndarray
    params: KSParams = field(default_factory=KSParams)

    def __post_init__(self):
        if len(self.snapshots) != len(self.times):
            raise ValueError("`snapshots` and `times` should have the same length.")

    def __len__(self) -> int:
        return len(self.times)


def wavenumbers(N: int, L: float) -> np.ndarray:
    """
    Wavenumbers of an N-point DFT on an L-periodic domain.

    Entry j is 2*pi*j/L for j <= N/2 and 2*pi*(j-N)/L otherwise. The Nyquist entry
    (j = N/2) is returned positive; odd-derivative operators must zero it.

    Parameters
    ----------
    N : int
        Number of grid points, a power of two.
    L : float
        Domain length.

    Returns
    -------
    np.ndarray
        Real vector of length N.

    Raises
    ------
    ValueError
        If `N` is not a power of two or `L` is not positive.

    Examples
    --------
    >>> wavenumbers(4, 2 * np.pi)
    array([ 0.,  1.,  2., -1.])
    """
    check_power_of_two(N, "N")
    check_positive(L, "L")
    j = np.arange(N)
    j = np.where(j <= N // 2, j, j - N)
    return 2.0 * np.pi * j / L


def _check_transform_length(x, parameter_name):
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"`{parameter_name}` should be a 1-D vector.")
    if not is_power_of_two(len(x)):
        raise ValueError(f"`{parameter_name}` length should be a power of two, got {len(x)}.")
    return x


def dft_forward(u: np.ndarray) -> np.ndarray:
    """
    Unnormalized forward DFT, u_hat[k] = sum_j u[j] exp(-2 pi i j k / N).
    """
    u = _check_transform_length(u, "u")
    return np.fft.fft(u)


def dft_inverse(u_hat: np.ndarray) -> np.ndarray:
    """
    Inverse DFT with 1/N normalization, returning the real part.

    Use `dft_inverse_complex` where the imaginary leakage needs to be inspected.
    """
    return dft_inverse_complex(u_hat).real


def dft_inverse_complex(u_hat: np.ndarray) -> np.ndarray:
    u_hat = _check_transform_length(u_hat, "u_hat")
    return np.fft.ifft(u_hat.astype(np.complex128, copy=False))


def linear_symbol(k):
    """
    Fourier symbol k^2 - k^4 of -u_xxxx - u_xx.

    Positive (unstable) for 0 < |k| < 1, zero at k in {0, +-1}, negative otherwise.
    Works elementwise on arrays.
    """
    k = np.asarray(k, dtype=np.float64) if not np.isscalar(k) else float(k)
    return k ** 2 - k ** 4


def etdrk4_coefficients(symbols: np.ndarray, h: float, M: int = 32) -> ETDRK4Coeffs:
    """
    Precompute ETDRK4 coefficients for linear symbols `symbols` and step `h`.

    E and E2 are evaluated directly. Q, f1, f2, f3 are means over `M` points on the
    unit circle centred at each h*lambda, which avoids the cancellation of the
    closed-form phi-function combinations near h*lambda = 0.

    Parameters
    ----------
    symbols : np.ndarray
        Linear symbol per mode.
    h : float
        Time step.
    M : int, optional
        Contour points, at least 16. Defaults to 32.

    Returns
    -------
    ETDRK4Coeffs

    Raises
    ------
    ValueError
        If `h` is not positive or `M` < 16.

    Examples
    --------
    >>> c = etdrk4_coefficients(np.array([0.0]), 0.1)
    >>> bool(np.isclose(c.Q[0].real, 0.05))  # h/2
    True
    """
    check_positive(h, "h")
    if not isinstance(M, (int, np.integer)) or M < 16:
        raise ValueError("`M` should be an integer value of at least 16 (insufficient contour resolution).")

    lam = np.atleast_1d(np.asarray(symbols))
    hl = h * lam.astype(np.complex128)
    E = np.exp(hl)
    E2 = np.exp(hl / 2.0)

    # roots of unity shifted off the real axis so no point lands on z = 0
    r = np.exp(2j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
    z = hl[:, None] + r[None, :]
    z3 = z ** 3
    ez = np.exp(z)

    Q = h * np.mean((np.exp(z / 2.0) - 1.0) / z, axis=1)
    f1 = h * np.mean((-4.0 - z + ez * (4.0 - 3.0 * z + z ** 2)) / z3, axis=1)
    f2 = h * np.mean((2.0 + z + ez * (-2.0 + z)) / z3, axis=1)
    f3 = h * np.mean((-4.0 - 3.0 * z - z ** 2 + ez * (4.0 - z)) / z3, axis=1)

    if np.isrealobj(lam):
        Q, f1, f2, f3 = (c.real.astype(np.complex128) for c in (Q, f1, f2, f3))

    return ETDRK4Coeffs(E=E, E2=E2, Q=Q, f1=f1, f2=f2, f3=f3, h=float(h))


def dealias_mask(N: int) -> np.ndarray:
    """2/3-rule mask: keeps modes with |j| <= N/3."""
    j = np.arange(N)
    j = np.abs(np.where(j <= N // 2, j, j - N))
    return j <= N // 3


def nonlinear_term(u_hat: np.ndarray, k: np.ndarray, dealias: bool = False) -> np.ndarray:
    """
    Fourier coefficients of -u u_x, evaluated as -0.5 i k DFT(IDFT(u_hat)^2).

    The Nyquist entry is always zero. With `dealias`, coefficients above N/3 are
    zeroed before squaring.
    """
    N = len(u_hat)
    g = -0.5j * np.asarray(k, dtype=np.float64)
    g[N // 2] = 0.0
    v = u_hat * dealias_mask(N) if dealias else u_hat
    u = np.fft.ifft(v).real
    return g * np.fft.fft(u * u)


def enforce_conjugate_symmetry(u_hat: np.ndarray) -> np.ndarray:
    """
    Nearest coefficients of a real field: the mean of u_hat[j] and conj(u_hat[N-j]).

    Modes 0 and N/2 come out real. Pairs that are already conjugate are returned
    bit-for-bit unchanged.
    """
    mirrored = np.conj(np.roll(u_hat[::-1], 1))
    return 0.5 * (u_hat + mirrored)


def check_conjugate_symmetry(u_hat: np.ndarray, tol: float = 1e-10) -> bool:
    """True if u_hat describes a real field to within `tol` (scaled by max |u_hat|)."""
    scale = max(1.0, float(np.max(np.abs(u_hat)))) if len(u_hat) else 1.0
    mirrored = np.conj(np.roll(u_hat[::-1], 1))
    return bool(np.max(np.abs(u_hat - mirrored)) <= tol * scale and abs(u_hat[0].imag) <= tol * scale)


def step(
    state: SpectralState,
    coeffs: ETDRK4Coeffs,
    k: np.ndarray,
    dealias: bool = False,
    nonlinear: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    debug: bool = False,
) -> SpectralState:
    """
    Advance `state` by one ETDRK4 step of size `coeffs.h`.

    Parameters
    ----------
    state : SpectralState
        Current Fourier coefficients and time.
    coeffs : ETDRK4Coeffs
        Coefficients for the same step size and symbols.
    k : np.ndarray
        Wavenumbers.
    dealias : bool, optional
        Apply the 2/3 rule in the nonlinear term.
    nonlinear : callable, optional
        Replacement for the KS nonlinear term, mapping u_hat to N(u_hat).
        Passing ``lambda v: np.zeros_like(v)`` gives the pure linear flow.
    debug : bool, optional
        Check conjugate symmetry of the result.

    Returns
    -------
    SpectralState
        The state at t + h, projected onto conjugate-symmetric coefficients.

    Raises
    ------
    NumericalBlowupError
        If the state is not finite, before or after the step.
    """
    if nonlinear is None:
        def nonlinear(v):
            return nonlinear_term(v, k, dealias)

    v = state.u_hat
    if not np.all(np.isfinite(v)):
        raise NumericalBlowupError(state.t)

    Nv = nonlinear(v)
    a = coeffs.E2 * v + coeffs.Q * Nv
    Na = nonlinear(a)
    b = coeffs.E2 * v + coeffs.Q * Na
    Nb = nonlinear(b)
    c = coeffs.E2 * a + coeffs.Q * (2.0 * Nb - Nv)
    Nc = nonlinear(c)
    v_next = coeffs.E * v + coeffs.f1 * Nv + 2.0 * coeffs.f2 * (Na + Nb) + coeffs.f3 * Nc
    # the anti-Hermitian part sees only the linear flow and grows on unstable modes
    v_next = enforce_conjugate_symmetry(v_next)

    t_next = state.t + coeffs.h
    if not np.all(np.isfinite(v_next)):
        raise NumericalBlowupError(t_next)
    if debug and not check_conjugate_symmetry(v_next):
        raise AssertionError(f"conjugate symmetry lost at t={t_next}")
    return SpectralState(u_hat=v_next, t=t_next)


def random_initial_condition(params: KSParams) -> np.ndarray:
    """
    Seeded random field on Fourier modes 1..4, zero mean, RMS 0.1.

    Examples
    --------
    >>> u0 = random_initial_condition(KSParams(seed=3))
    >>> round(float(np.sqrt(np.mean(u0 ** 2))), 6)
    0.1
    """
    params.validate()
    N = params.grid_size
    n_modes = min(4, N // 2 - 1)
    rng = np.random.default_rng(params.seed)
    amplitudes = rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)

    u_hat = np.zeros(N, dtype=np.complex128)
    modes = np.arange(1, n_modes + 1)
    u_hat[modes] = amplitudes
    u_hat[N - modes] = np.conj(amplitudes)

    u = np.fft.ifft(u_hat).real
    u -= u.mean()
    return u * (0.1 / np.sqrt(np.mean(u ** 2)))


def simulate(
    params: KSParams,
    u0: np.ndarray,
    t_begin: float,
    t_end: float,
    nonlinear: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    """
    Integrate from `t_begin` to `t_end`, sampling every `params.sample_interval`.

    The first sample is taken at t_begin + sample_interval; the trajectory holds
    (t_end - t_begin) / sample_interval samples.

    Parameters
    ----------
    params : KSParams
        Run constants.
    u0 : np.ndarray
        Physical field at `t_begin`, length N.
    t_begin, t_end : float
        Segment bounds.
    nonlinear : callable, optional
        Passed through to `step`.

    Returns
    -------
    Trajectory

    Raises
    ------
    ValueError
        If the segment is not an integer number of samples, or `u0` has the
        wrong length.
    NumericalBlowupError
        If the solution becomes non-finite; carries the failing time.
    """
    params.validate()
    u0 = np.asarray(u0, dtype=np.float64)
    N = params.grid_size
    if u0.shape != (N,):
        raise ValueError(f"`u0` should have shape ({N},), got {u0.shape}.")
    if t_end <= t_begin:
        raise ValueError("`t_end` should be greater than `t_begin`.")
    integer_ratio(t_end - t_begin, params.dt, "t_end - t_begin")
    n_samples = integer_ratio(t_end - t_begin, params.sample_interval, "t_end - t_begin")
    steps_per_sample = params.steps_per_sample

    k = wavenumbers(N, params.domain_length)
    coeffs = etdrk4_coefficients(linear_symbol(k), params.dt, params.contour_points)

    logger.info("KS segment t=%g -> %g: %d samples, %d steps each", t_begin, t_end, n_samples, steps_per_sample)

    snapshots = np.empty((n_samples, N), dtype=np.float64)
    times = t_begin + params.sample_interval * np.arange(1, n_samples + 1)
    state = SpectralState(u_hat=enforce_conjugate_symmetry(dft_forward(u0)), t=float(t_begin))
    for i in range(n_samples):
        for _ in range(steps_per_sample):
            state = step(state, coeffs, k, params.dealias, nonlinear)
        # re-anchor time to the sample grid so rounding does not accumulate
        state.t = float(times[i])
        u = dft_inverse_complex(state.u_hat)
        leak = float(np.max(np.abs(u.imag)))
        if leak > REALNESS_TOLERANCE * max(1.0, float(np.max(np.abs(u.real)))):
            raise NumericalBlowupError(state.t, f"imaginary leakage {leak:.3e} in physical field")
        snapshots[i] = u.real

    return Trajectory(snapshots=snapshots, times=times, params=params)


def run_protocol(
    params: KSParams,
    production_end: float = 2500.0,
    test_end: float = 3750.0,
) -> Tuple[Trajectory, Trajectory, Trajectory]:
    """
    Run the full data protocol from a seeded random initial condition.

    transient: transient_start -> 0, production: 0 -> `production_end`,
    test: `production_end` -> `test_end`, each segment continuing from the last
    sample of the previous one.

    Returns
    -------
    tuple of Trajectory
        (transient, production, test).
    """
    params.validate()
    if not params.transient_start < 0.0 < production_end < test_end:
        raise ValueError("Expected `transient_start` < 0 < `production_end` < `test_end`.")
    u0 = random_initial_condition(params)
    transient = simulate(params, u0, params.transient_start, 0.0)
    production = simulate(params, transient.snapshots[-1], 0.0, production_end)
    test = simulate(params, production.snapshots[-1], production_end, test_end)
    return transient, production, test


def with_dt(params: KSParams, dt: float) -> KSParams:
    """Copy of `params` with a different time step."""
    return replace(params, dt=dt)
