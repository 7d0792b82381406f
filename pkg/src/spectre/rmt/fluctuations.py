"""
Second-order behavior of isolated eigenvalues and of the power estimates,
and the oracle SNR gap.
"""

from __future__ import annotations

import logging

import numpy as np

from .equilibrium import EquilibriumContext, g_prime_at_m, spike_m, x_of_m
from .rmt_models import ArmaSpec, DomainError, FluctuationParams
from .spectral_model import build_nu, inverse_moments

LOGGER = logging.getLogger(__name__)


def fluct_params(ctx: EquilibriumContext, p: float, kappa: float) -> FluctuationParams:
    """Variance coefficients at the spike location `rho(p)`"""
    m = spike_m(ctx, p)
    rho = x_of_m(ctx, m)
    c = ctx.c
    nu = ctx.nu
    t = nu.nodes
    den = 1.0 + c * m * t
    delta = 1.0 - c * float(nu.integrate((m * t / den) ** 2))
    alpha = (m**2 / delta) * (
        float(nu.integrate((t**2 + 2.0 * p * t) / den**2)) + c * float(nu.integrate(p * m * t / den**2)) ** 2
    )
    beta = float(nu.integrate(p**2 * m**2 / den**2))
    phi = float(nu.integrate(p * m / den)) ** 2
    return FluctuationParams(
        alpha=alpha,
        beta=beta,
        phi=phi,
        kappa=kappa,
        p=p,
        rho=rho,
        g_prime_at_rho=g_prime_at_m(ctx, rho, m),
    )


def eigenvalue_variance(params: FluctuationParams) -> float:
    """Limit variance of `sqrt(T) (lambda_hat - rho_T)` for a singleton spike"""
    return params.psi / (params.p * params.g_prime_at_rho) ** 2


def power_variance(params: FluctuationParams) -> float:
    """Limit variance of `sqrt(T) (p_hat - p)` for a singleton spike"""
    return params.p**2 * params.psi


def predicted_nmse(params: FluctuationParams, t: int) -> float:
    return params.psi / t


def sample_fluct_matrix(params: FluctuationParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Hermitian matrix: diagonal `N(0, psi)`, upper triangle `CN(0, psi_breve)`"""
    if size < 1:
        raise DomainError(message="Multiplicity must be positive", details={"size": size})
    if params.psi < 0:
        raise DomainError(message="Negative diagonal variance", details={"psi": params.psi})
    diag = rng.normal(scale=np.sqrt(params.psi), size=size)
    off_scale = np.sqrt(params.psi_breve / 2.0)
    off = rng.normal(scale=off_scale, size=(size, size)) + 1j * rng.normal(scale=off_scale, size=(size, size))
    upper = np.triu(off, k=1)
    return upper + upper.conj().T + np.diag(diag)


def sample_eigenvalue_law(params: FluctuationParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Decreasingly ordered eigenvalues of `(p g'(rho))^-1 M`"""
    matrix = sample_fluct_matrix(params, size, rng) / (params.p * params.g_prime_at_rho)
    return np.sort(np.linalg.eigvalsh(matrix))[::-1]


def sample_power_law(params: FluctuationParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Decreasingly ordered eigenvalues of `p M`"""
    matrix = params.p * sample_fluct_matrix(params, size, rng)
    return np.sort(np.linalg.eigvalsh(matrix))[::-1]


def snr_gap(noise: ArmaSpec) -> float:
    """`10 log10(integral of q * integral of 1/q)` in dB"""
    inv_mean, _ = inverse_moments(noise)
    gap = 10.0 * np.log10(build_nu(noise).mean * inv_mean)
    LOGGER.debug("Computed oracle SNR gap", extra=dict(x_noise=noise.model_dump(), x_gap_db=gap))
    return float(gap)
