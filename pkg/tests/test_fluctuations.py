import numpy as np
import pytest

from spectre.rmt.equilibrium import (
    EquilibriumContext,
    delta,
    detectability_threshold,
    finite_horizon,
    spike_location,
    spike_m,
)
from spectre.rmt.fluctuations import (
    eigenvalue_variance,
    fluct_params,
    power_variance,
    predicted_nmse,
    sample_eigenvalue_law,
    sample_fluct_matrix,
    sample_power_law,
    snr_gap,
)
from spectre.rmt.montecarlo import equilibrium_context, noise_covariance
from spectre.rmt.rmt_models import ArmaSpec, Constellation, DomainError, SubcriticalPowerError
from spectre.rmt.spectral_model import build_nu

AR1 = ArmaSpec.ar1(0.6)
QPSK_KAPPA = Constellation.QPSK.kappa


def white_ctx(c: float) -> EquilibriumContext:
    return EquilibriumContext(nu=build_nu(ArmaSpec()), c=c)


def test_params_structure() -> None:
    ctx = white_ctx(0.5)
    gaussian = fluct_params(ctx, 1.5, 0.0)
    qpsk = fluct_params(ctx, 1.5, QPSK_KAPPA)
    assert gaussian.psi == pytest.approx(gaussian.psi_breve)
    assert min(gaussian.alpha, gaussian.beta, gaussian.phi) > 0
    assert qpsk.psi < gaussian.psi
    assert qpsk.psi > 0
    assert gaussian.rho == pytest.approx(spike_location(ctx, 1.5))
    assert gaussian.g_prime_at_rho < 0


def test_white_closed_form_coefficients() -> None:
    c, power = 0.5, 4.0
    params = fluct_params(white_ctx(c), power, QPSK_KAPPA)
    m = -1.0 / (power + c)
    den = 1.0 + c * m
    delta = 1.0 - c * (m / den) ** 2
    expected_alpha = m**2 / delta * ((1.0 + 2.0 * power) / den**2 + c * (power * m / den**2) ** 2)
    assert params.alpha == pytest.approx(expected_alpha, rel=1e-8)
    assert params.beta == pytest.approx(1.0, rel=1e-8)
    assert params.phi == pytest.approx(1.0, rel=1e-8)


def test_variance_formulas() -> None:
    params = fluct_params(equilibrium_context(AR1, 0.5), 10.0, QPSK_KAPPA)
    assert eigenvalue_variance(params) == pytest.approx(params.psi / (params.p * params.g_prime_at_rho) ** 2)
    assert power_variance(params) == pytest.approx(params.p**2 * params.psi)
    assert predicted_nmse(params, 40) == pytest.approx(params.psi / 40)


def test_power_nmse_theory_correlated() -> None:
    """N = 20, T = 40, AR(1) noise with a = 0.6, QPSK source, on the eigenvalue measure of `R_40`"""
    ctx = finite_horizon(noise_covariance(AR1, 40), 20 / 40)
    assert predicted_nmse(fluct_params(ctx, 10.0, QPSK_KAPPA), 40) == pytest.approx(0.0065, abs=1e-4)
    # 6 dB
    assert predicted_nmse(fluct_params(ctx, 10.0**0.6, QPSK_KAPPA), 40) == pytest.approx(0.0283, abs=1e-3)


def test_power_nmse_theory_large_power_slope() -> None:
    ctx = equilibrium_context(AR1, 0.5)
    low, high = (predicted_nmse(fluct_params(ctx, power, QPSK_KAPPA), 40) for power in (1e3, 1e4))
    assert 10.0 * np.log10(low / high) == pytest.approx(10.0, abs=0.5)


def test_psi_diverges_at_threshold() -> None:
    ctx = equilibrium_context(AR1, 0.5)
    params = fluct_params(ctx, 1.001 * detectability_threshold(ctx), QPSK_KAPPA)
    assert params.psi > 1e3


def test_alpha_scales_with_inverse_delta() -> None:
    ctx = equilibrium_context(AR1, 0.5)
    power = 5.0
    params = fluct_params(ctx, power, QPSK_KAPPA)
    m = spike_m(ctx, power)
    nodes = ctx.nu.nodes
    den = 1.0 + ctx.c * m * nodes
    moment = ctx.nu.integrate((nodes**2 + 2.0 * power * nodes) / den**2)
    cross = ctx.nu.integrate(power * m * nodes / den**2)
    assert params.alpha * delta(ctx, params.rho) == pytest.approx(m**2 * (moment + ctx.c * cross**2), rel=1e-6)


def test_quadrature_convergence() -> None:
    coarse = fluct_params(EquilibriumContext(nu=build_nu(AR1), c=0.5), 5.0, QPSK_KAPPA)
    fine = fluct_params(EquilibriumContext(nu=build_nu(AR1.replace(quad_points=4096)), c=0.5), 5.0, QPSK_KAPPA)
    assert fine.psi == pytest.approx(coarse.psi, rel=1e-8)
    assert fine.rho == pytest.approx(coarse.rho, rel=1e-10)


def test_high_power_limits() -> None:
    params = fluct_params(white_ctx(0.5), 1e6, QPSK_KAPPA)
    assert params.psi == pytest.approx(0.0, abs=1e-2)
    assert params.psi_breve == pytest.approx(1.0, abs=1e-2)


def test_subcritical_power() -> None:
    with pytest.raises(SubcriticalPowerError):
        fluct_params(white_ctx(0.5), 0.5, 0.0)


def test_snr_gap() -> None:
    assert snr_gap(AR1) == pytest.approx(3.27, abs=0.01)
    assert snr_gap(ArmaSpec()) == pytest.approx(0.0, abs=1e-12)
    assert snr_gap(ArmaSpec.ar1(0.2)) < snr_gap(AR1)


def test_sample_fluct_matrix() -> None:
    params = fluct_params(white_ctx(0.5), 2.0, QPSK_KAPPA)
    rng = np.random.default_rng(5)
    matrix = sample_fluct_matrix(params, 4, rng)
    assert np.allclose(matrix, matrix.conj().T)

    draws = np.array([sample_fluct_matrix(params, 2, rng) for _ in range(100_000)])
    assert np.var(draws[:, 0, 0].real) == pytest.approx(params.psi, rel=0.02)
    assert np.mean(np.abs(draws[:, 0, 1]) ** 2) == pytest.approx(params.psi_breve, rel=0.02)

    with pytest.raises(DomainError):
        sample_fluct_matrix(params, 0, rng)


def test_sample_laws() -> None:
    params = fluct_params(white_ctx(0.5), 2.0, 0.0)
    rng = np.random.default_rng(6)
    eig_draws = sample_eigenvalue_law(params, 3, rng)
    assert eig_draws.shape == (3,)
    assert np.all(np.diff(eig_draws) <= 0)

    singles = np.array([sample_eigenvalue_law(params, 1, rng)[0] for _ in range(20_000)])
    assert np.var(singles) == pytest.approx(eigenvalue_variance(params), rel=0.05)
    powers = np.array([sample_power_law(params, 1, rng)[0] for _ in range(20_000)])
    assert np.var(powers) == pytest.approx(power_variance(params), rel=0.05)
